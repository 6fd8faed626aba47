//! Four-line habitat-context answers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HabitatReport {
    pub habitat_land_cover: String,
    pub key_landscape_features: String,
    pub human_presence: String,
    pub interpretation: String,
}

/// Label prefixes a model may echo back, matched case-insensitively.
const LABELS: [&[&str]; 4] = [
    &["Habitat/land cover:", "Habitat / land cover:", "Habitat:", "Land cover:"],
    &["Key landscape features (e.g., river, road, forest edge, grassland).", "Key landscape features:", "Landscape features:"],
    &["Human presence/disturbance (if any).", "Human presence/disturbance:", "Human presence:", "Disturbance:"],
    &["Brief habitat-context interpretation (1 sentence).", "Brief habitat-context interpretation:", "Interpretation:"],
];

fn strip_label(line: &str, field: usize) -> String {
    let body = line.trim().trim_start_matches(['-', '*', '•']).trim_start();
    let body = match body.split_once(['.', ')']) {
        Some((n, rest)) if !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()) => rest.trim_start(),
        _ => body,
    };
    for label in LABELS[field] {
        if body.len() >= label.len() && body.is_char_boundary(label.len()) && body[..label.len()].eq_ignore_ascii_case(label) {
            return body[label.len()..].trim().to_string();
        }
    }
    body.trim().to_string()
}

pub fn parse_habitat(raw_text: &str) -> Result<HabitatReport> {
    let lines: Vec<&str> = raw_text.lines().filter(|l| !l.trim().is_empty()).collect();
    if lines.len() != 4 {
        return Err(Error::MalformedHabitat(lines.len()));
    }
    let fields: Vec<String> = lines.iter().enumerate().map(|(i, l)| strip_label(l, i)).collect();
    if let Some(empty) = fields.iter().position(String::is_empty) {
        return Err(Error::Protocol(format!("habitat field {} is empty after removing its label", empty + 1)));
    }
    let [a, b, c, d]: [String; 4] = fields.try_into().expect("four fields");
    Ok(HabitatReport { habitat_land_cover: a, key_landscape_features: b, human_presence: c, interpretation: d })
}
