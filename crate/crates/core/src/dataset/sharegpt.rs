//! ShareGPT-style conversation records.

use serde::{Deserialize, Serialize};

use super::AnnotationRecord;
use crate::error::{Error, Result};
use crate::evalkit::{render_prompt, PromptMode};
use crate::species::Species;

pub const IMAGE_PLACEHOLDER: &str = "<image>";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConversationExample {
    pub images: Vec<String>,
    pub user_text: String,
    pub assistant_text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

/// On-disk shape of one conversation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShareGptRecord {
    pub images: Vec<String>,
    pub messages: Vec<Message>,
}

pub fn answer_text(species: Species, count: u32) -> String {
    format!("{}; {count}", species.capitalized())
}

/// `^[A-Z][a-z]+; [0-9]+$`
pub fn is_structured_answer(s: &str) -> bool {
    let Some((word, num)) = s.split_once("; ") else {
        return false;
    };
    let mut chars = word.chars();
    let head_ok = chars.next().is_some_and(|c| c.is_ascii_uppercase());
    let tail: Vec<char> = chars.collect();
    head_ok
        && !tail.is_empty()
        && tail.iter().all(|c| c.is_ascii_lowercase())
        && !num.is_empty()
        && num.bytes().all(|b| b.is_ascii_digit())
}

/// Builds the user/assistant pair for a counting prompt. The habitat prompt
/// has no structured answer and is rejected.
pub fn to_sharegpt(record: &AnnotationRecord, mode: PromptMode) -> Result<ConversationExample> {
    if mode == PromptMode::Habitat {
        return Err(Error::Config("habitat prompts have no supervised answer".into()));
    }
    Ok(ConversationExample {
        images: vec![record.image_path.clone()],
        user_text: format!("{IMAGE_PLACEHOLDER}\n{}", render_prompt(mode)),
        assistant_text: answer_text(record.species, record.count),
    })
}

impl ConversationExample {
    pub fn to_record(&self) -> ShareGptRecord {
        ShareGptRecord {
            images: self.images.clone(),
            messages: vec![
                Message { role: "user".into(), content: self.user_text.clone() },
                Message { role: "assistant".into(), content: self.assistant_text.clone() },
            ],
        }
    }

    /// Checks the single-turn layout; the error string names the problem.
    pub fn from_record(r: ShareGptRecord) -> std::result::Result<Self, String> {
        if r.images.len() != 1 {
            return Err(format!("expected 1 image, found {}", r.images.len()));
        }
        let [user, assistant]: [Message; 2] =
            r.messages.try_into().map_err(|m: Vec<Message>| format!("expected 2 messages, found {}", m.len()))?;
        if user.role != "user" || assistant.role != "assistant" {
            return Err(format!("roles {:?}/{:?}, expected user/assistant", user.role, assistant.role));
        }
        if !user.content.starts_with(IMAGE_PLACEHOLDER) {
            return Err("user content lacks the <image> placeholder".into());
        }
        if !is_structured_answer(&assistant.content) {
            return Err(format!("assistant content {:?} is not \"Species; N\"", assistant.content));
        }
        Ok(Self { images: r.images, user_text: user.content, assistant_text: assistant.content })
    }
}
