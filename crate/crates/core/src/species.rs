use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Species {
    Deer,
    Rhino,
    Elephant,
}

impl Species {
    pub const ALL: [Species; 3] = [Species::Deer, Species::Rhino, Species::Elephant];

    pub fn name(self) -> &'static str {
        match self {
            Species::Deer => "deer",
            Species::Rhino => "rhino",
            Species::Elephant => "elephant",
        }
    }

    pub fn capitalized(self) -> &'static str {
        match self {
            Species::Deer => "Deer",
            Species::Rhino => "Rhino",
            Species::Elephant => "Elephant",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Species {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Species {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "deer" => Ok(Species::Deer),
            "rhino" => Ok(Species::Rhino),
            "elephant" => Ok(Species::Elephant),
            other => Err(format!("unknown species {other:?}")),
        }
    }
}
