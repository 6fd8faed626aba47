use serde::{Deserialize, Serialize};

pub const CLOSED_SET_PROMPT: &str = "Identify the species and count. Return ONLY in the format: Species; Count (example: Deer; 1). Allowed species: deer, rhino, elephant.";

pub const OPEN_SET_PROMPT: &str = "Identify the species and count. Return ONLY in the format: Species; Count (example: Deer; 1).";

pub const HABITAT_PROMPT: &str = "Describe the most important environmental context in this drone image. Return 4 lines only:\n\
Habitat/land cover:\n\
Key landscape features (e.g., river, road, forest edge, grassland).\n\
Human presence/disturbance (if any).\n\
Brief habitat-context interpretation (1 sentence).";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    ClosedSet,
    OpenSet,
    Habitat,
}

impl PromptMode {
    /// Short name used on the command line and in report tables.
    pub fn short(self) -> &'static str {
        match self {
            PromptMode::ClosedSet => "closed",
            PromptMode::OpenSet => "open",
            PromptMode::Habitat => "habitat",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "closed" | "closed_set" | "closed-set" => Some(PromptMode::ClosedSet),
            "open" | "open_set" | "open-set" => Some(PromptMode::OpenSet),
            "habitat" => Some(PromptMode::Habitat),
            _ => None,
        }
    }
}

pub fn render_prompt(mode: PromptMode) -> &'static str {
    match mode {
        PromptMode::ClosedSet => CLOSED_SET_PROMPT,
        PromptMode::OpenSet => OPEN_SET_PROMPT,
        PromptMode::Habitat => HABITAT_PROMPT,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_set_ends_with_allowed_species() {
        assert!(render_prompt(PromptMode::ClosedSet).ends_with("Allowed species: deer, rhino, elephant."));
    }

    #[test]
    fn open_set_is_closed_set_minus_species_sentence() {
        let closed = render_prompt(PromptMode::ClosedSet);
        let open = render_prompt(PromptMode::OpenSet);
        assert_eq!(format!("{open} Allowed species: deer, rhino, elephant."), closed);
    }

    #[test]
    fn habitat_prompt_has_four_requested_lines() {
        let p = render_prompt(PromptMode::Habitat);
        assert!(p.starts_with("Describe the most important environmental context"));
        assert_eq!(p.lines().count(), 5);
    }
}
