//! Word-level vocabulary with digit-level numbers and explicit whitespace tokens.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const IMG: &str = "<image>";

const SPECIALS: [&str; 4] = [PAD, BOS, EOS, IMG];

const DEFAULT_TOKENS: [&str; 64] = [
    PAD, BOS, EOS, IMG, " ", "\n", "0", "1", "2", "3", "4", "5", "6", "7", "8", "9", ";", ".", ",", ":", "(", ")",
    "/", "-", "deer", "rhino", "elephant", "Deer", "Rhino", "Elephant", "Identify", "the", "species", "and",
    "count", "Return", "ONLY", "in", "format", "Species", "Count", "example", "Allowed", "Habitat", "land",
    "cover", "forest", "river", "road", "grassland", "savanna", "water", "dense", "open", "edge", "vegetation",
    "Human", "presence", "none", "no", "visible", "thermal", "animals", "herd",
];

/// Ordered token list with dense ids `[0, V)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

/// Token ids; every id is below the owning vocabulary's size.
pub type TokenSequence = Vec<u32>;

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from_tokens(DEFAULT_TOKENS.iter().map(|t| t.to_string()).collect()).expect("default vocabulary is valid")
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Self::from_tokens(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    /// Builds a vocabulary; the four special tokens must be present and all
    /// entries distinct.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        for s in SPECIALS {
            if !index.contains_key(s) {
                return Err(Error::Config(format!("vocabulary lacks special token {s}")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// The first `size` default tokens (specials, whitespace, digits, ...).
    pub fn truncated(size: usize) -> Result<Self> {
        Self::from_tokens(DEFAULT_TOKENS.iter().take(size).map(|t| t.to_string()).collect())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn pad(&self) -> u32 {
        self.index[PAD]
    }

    pub fn bos(&self) -> u32 {
        self.index[BOS]
    }

    pub fn eos(&self) -> u32 {
        self.index[EOS]
    }

    pub fn img(&self) -> u32 {
        self.index[IMG]
    }

    /// Splits `text` into letter runs, single digits, single punctuation or
    /// whitespace characters, and the literal `<image>` placeholder.
    pub fn tokenize(&self, text: &str) -> Result<TokenSequence> {
        let mut ids = Vec::new();
        let mut rest = text;
        while let Some(c) = rest.chars().next() {
            let len = if rest.starts_with(IMG) {
                IMG.len()
            } else if c.is_alphabetic() {
                rest.find(|ch: char| !ch.is_alphabetic()).unwrap_or(rest.len())
            } else {
                c.len_utf8()
            };
            let piece = &rest[..len];
            let id = self.id(piece).ok_or_else(|| Error::UnknownToken(piece.to_string()))?;
            ids.push(id);
            rest = &rest[len..];
        }
        Ok(ids)
    }

    /// Concatenates token strings. Specials other than `<image>` are dropped.
    pub fn detokenize(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        for &id in ids {
            match self.token(id) {
                Some(t) if t == PAD || t == BOS || t == EOS => {}
                Some(t) => out.push_str(t),
                None => {}
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_vocabulary_has_64_dense_ids() {
        let v = Vocabulary::default();
        assert_eq!(v.len(), 64);
        for (i, t) in v.tokens().iter().enumerate() {
            assert_eq!(v.id(t), Some(i as u32));
        }
    }

    #[test]
    fn structured_answer_tokenizes_word_separator_space_digit() {
        let v = Vocabulary::default();
        let ids = v.tokenize("Deer; 1").unwrap();
        let pieces: Vec<_> = ids.iter().map(|&i| v.token(i).unwrap()).collect();
        assert_eq!(pieces, ["Deer", ";", " ", "1"]);
        assert_eq!(v.detokenize(&ids), "Deer; 1");
    }

    #[test]
    fn elephant_answer_round_trips() {
        let v = Vocabulary::default();
        let ids = v.tokenize("Elephant; 2").unwrap();
        assert_eq!(v.detokenize(&ids), "Elephant; 2");
        let ids = v.tokenize("Rhino; 12").unwrap();
        assert_eq!(ids.len(), 5);
    }

    #[test]
    fn out_of_vocabulary_word_is_rejected() {
        let v = Vocabulary::default();
        assert!(matches!(v.tokenize("zebra"), Err(Error::UnknownToken(t)) if t == "zebra"));
    }

    #[test]
    fn prompts_are_in_vocabulary() {
        let v = Vocabulary::default();
        for mode in [crate::evalkit::PromptMode::ClosedSet, crate::evalkit::PromptMode::OpenSet] {
            let text = format!("{IMG}\n{}", crate::evalkit::render_prompt(mode));
            let ids = v.tokenize(&text).unwrap();
            assert_eq!(v.detokenize(&ids), text);
        }
    }

    #[test]
    fn serde_round_trip_preserves_order() {
        let v = Vocabulary::truncated(16).unwrap();
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(v, back);
        assert!(serde_json::from_str::<Vocabulary>(r#"["a","b"]"#).is_err());
    }
}
