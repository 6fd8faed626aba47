use std::fmt;

use serde::{Deserialize, Serialize};

use super::vlm::ToyVlm;

/// Trainable/frozen split of a model, laid out like a fine-tuning
/// configuration table row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionReport {
    pub trained_params: usize,
    pub total_params: usize,
    pub trained_percent: f64,
    pub trained_tensors: usize,
    pub frozen_tensors: usize,
    pub trainable_modules: Vec<String>,
}

impl PartitionReport {
    pub const COLUMNS: [&'static str; 5] =
        ["Trained parameters", "Trained (%)", "Trained tensors", "Frozen tensors", "Trainable modules"];

    pub fn of(model: &ToyVlm) -> Self {
        let (mut trained, mut total, mut tt, mut ft) = (0, 0, 0, 0);
        model.visit_with_flags(&mut |_, p, trainable| {
            total += p.len();
            if trainable {
                trained += p.len();
                tt += 1;
            } else {
                ft += 1;
            }
        });
        let mut modules = Vec::new();
        if model.encoder.trainable {
            modules.push("Vision/Encoder".to_string());
        }
        if model.projector.trainable {
            modules.push("Projector/MLP".to_string());
        }
        if model.lm.trainable {
            modules.push("Language/Decoder".to_string());
        }
        let pct = if total == 0 { 0.0 } else { 100.0 * trained as f64 / total as f64 };
        Self {
            trained_params: trained,
            total_params: total,
            trained_percent: (pct * 1000.0).round() / 1000.0,
            trained_tensors: tt,
            frozen_tensors: ft,
            trainable_modules: modules,
        }
    }

    pub fn cells(&self) -> [String; 5] {
        let modules = if self.trainable_modules.is_empty() {
            "-".to_string()
        } else {
            self.trainable_modules.join(", ")
        };
        [
            thousands(self.trained_params),
            format!("{:.3}%", self.trained_percent),
            self.trained_tensors.to_string(),
            self.frozen_tensors.to_string(),
            modules,
        ]
    }

    pub fn to_csv(&self, model_name: &str) -> String {
        let mut out = String::from("Model");
        for c in Self::COLUMNS {
            out.push(',');
            out.push_str(&csv_field(c));
        }
        out.push('\n');
        out.push_str(&csv_field(model_name));
        for c in self.cells() {
            out.push(',');
            out.push_str(&csv_field(&c));
        }
        out.push('\n');
        out
    }
}

impl fmt::Display for PartitionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.cells().join(" / "))
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// `44574464` → `44,574,464`.
pub fn thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, Vocabulary};

    #[test]
    fn thousands_separator_matches_table_style() {
        assert_eq!(thousands(44_574_464), "44,574,464");
        assert_eq!(thousands(24_832), "24,832");
        assert_eq!(thousands(5), "5");
        assert_eq!(thousands(0), "0");
    }

    #[test]
    fn row_layout_mirrors_reference_row() {
        let r = PartitionReport {
            trained_params: 44_574_464,
            total_params: 8_300_000_000,
            trained_percent: 0.537,
            trained_tensors: 5,
            frozen_tensors: 724,
            trainable_modules: vec!["Merger/MLP".into()],
        };
        assert_eq!(r.to_string(), "44,574,464 / 0.537% / 5 / 724 / Merger/MLP");
    }

    #[test]
    fn default_projector_has_closed_form_parameter_count() {
        let mut m = ToyVlm::new(ModelConfig::default(), Vocabulary::default(), 0).unwrap();
        m.freeze_backbones();
        let r = PartitionReport::of(&m);
        assert_eq!(r.trained_params, 65 * 128 + 129 * 128);
        assert_eq!(r.trained_params, 24_832);
        assert_eq!(r.trained_tensors, 4);
        assert!(r.trained_percent < 5.0, "{r}");
    }

    #[test]
    fn all_frozen_model_reports_zero_percent() {
        let mut m = ToyVlm::new(ModelConfig::default(), Vocabulary::default(), 0).unwrap();
        m.freeze_backbones();
        m.projector.trainable = false;
        let r = PartitionReport::of(&m);
        assert_eq!(r.cells()[1], "0.000%");
        assert_eq!(r.trained_tensors, 0);
        assert_eq!(r.cells()[4], "-");
    }
}
