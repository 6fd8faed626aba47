//! Lenient parser for `Species; Count` answers.

use serde::{Deserialize, Serialize};

use crate::species::Species;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseStatus {
    Ok,
    Malformed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub raw_text: String,
    pub species: Option<String>,
    pub count: Option<u32>,
    pub parse_status: ParseStatus,
}

impl Prediction {
    pub fn malformed(raw_text: impl Into<String>) -> Self {
        Self { raw_text: raw_text.into(), species: None, count: None, parse_status: ParseStatus::Malformed }
    }

    pub fn is_ok(&self) -> bool {
        self.parse_status == ParseStatus::Ok
    }

    pub fn predicts(&self, species: Species) -> bool {
        self.species.as_deref() == Some(species.name())
    }

    /// The predicted species when it is one of the known classes.
    pub fn known_species(&self) -> Option<Species> {
        self.species.as_deref().and_then(|s| s.parse().ok())
    }
}

const SYNONYMS: &[(&str, &str)] = &[("rhinoceros", "rhino")];

fn normalize_species(word: &str) -> String {
    let lower = word.to_lowercase();
    let lookup = |w: &str| SYNONYMS.iter().find(|(from, _)| *from == w).map(|(_, to)| to.to_string());
    if let Some(s) = lookup(&lower) {
        return s;
    }
    let single = match lower.strip_suffix('s') {
        Some(stem) if !stem.is_empty() => stem.to_string(),
        _ => lower,
    };
    lookup(&single).unwrap_or(single)
}

/// Total: anything that is not `<word> ; <integer>` (modulo whitespace and
/// one trailing period) comes back malformed.
pub fn parse_species_count(raw_text: &str) -> Prediction {
    let body = raw_text.trim();
    let body = body.strip_suffix('.').unwrap_or(body).trim_end();
    let Some((word, number)) = body.split_once(';') else {
        return Prediction::malformed(raw_text);
    };
    let (word, number) = (word.trim(), number.trim());
    let word_ok = !word.is_empty() && word.chars().all(char::is_alphabetic);
    let number_ok = !number.is_empty() && number.bytes().all(|b| b.is_ascii_digit());
    let count = number.parse::<u32>().ok().filter(|_| number_ok);
    match (word_ok, count) {
        (true, Some(count)) => Prediction {
            raw_text: raw_text.to_string(),
            species: Some(normalize_species(word)),
            count: Some(count),
            parse_status: ParseStatus::Ok,
        },
        _ => Prediction::malformed(raw_text),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ok(raw: &str) -> (String, u32) {
        let p = parse_species_count(raw);
        assert!(p.is_ok(), "{raw:?} should parse");
        (p.species.unwrap(), p.count.unwrap())
    }

    #[test]
    fn reference_exemplars() {
        assert_eq!(ok("Deer; 1"), ("deer".into(), 1));
        assert_eq!(ok("Elephant; 2"), ("elephant".into(), 2));
    }

    #[test]
    fn normalization_contract() {
        assert_eq!(ok("elephant;2."), ("elephant".into(), 2));
        assert_eq!(ok("  RHINO ;  12 \n"), ("rhino".into(), 12));
        assert_eq!(ok("Deers; 3"), ("deer".into(), 3));
        assert_eq!(ok("Rhinoceros; 4"), ("rhino".into(), 4));
        assert_eq!(ok("rhinoceroses; 4"), ("rhinocerose".into(), 4));
        assert_eq!(ok("Zebra; 5"), ("zebra".into(), 5));
    }

    #[test]
    fn malformed_inputs() {
        for raw in ["I see some animals", "", ";", "Deer;", "; 3", "Deer; three", "Deer; -1", "Deer; 1; 2", "Red deer; 2", "Deer: 2", "Deer; 99999999999"] {
            let p = parse_species_count(raw);
            assert_eq!(p.parse_status, ParseStatus::Malformed, "{raw:?}");
            assert!(p.species.is_none() && p.count.is_none());
            assert_eq!(p.raw_text, raw);
        }
    }

    #[test]
    fn single_letter_s_is_not_stripped_to_empty() {
        assert_eq!(ok("s; 1"), ("s".into(), 1));
    }
}
