//! Per-species recognition and enumeration metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::parse::Prediction;
use crate::error::{Error, Result};
use crate::species::Species;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecognitionMetrics {
    pub per_species: BTreeMap<Species, Prf>,
}

impl RecognitionMetrics {
    pub fn macro_f1(&self) -> f64 {
        self.per_species.values().map(|m| m.f1).sum::<f64>() / self.per_species.len() as f64
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// One-vs-rest precision, recall and F1 for every known species. Malformed
/// predictions never match a species.
pub fn recognition_metrics(items: &[(Species, Prediction)]) -> Result<RecognitionMetrics> {
    if items.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let per_species = Species::ALL
        .iter()
        .map(|&s| {
            let (mut tp, mut fp, mut fn_) = (0, 0, 0);
            for (truth, pred) in items {
                match (*truth == s, pred.predicts(s)) {
                    (true, true) => tp += 1,
                    (false, true) => fp += 1,
                    (true, false) => fn_ += 1,
                    (false, false) => {}
                }
            }
            let precision = ratio(tp, tp + fp);
            let recall = ratio(tp, tp + fn_);
            (s, Prf { precision, recall, f1: f1(precision, recall) })
        })
        .collect();
    Ok(RecognitionMetrics { per_species })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CountStats {
    pub n: usize,
    pub exact_accuracy: f64,
    pub within1_accuracy: f64,
    /// `None` when no item of the species produced a parseable answer.
    pub mae: Option<f64>,
    pub unparseable_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnumerationMetrics {
    pub per_species: BTreeMap<Species, CountStats>,
}

impl EnumerationMetrics {
    pub fn macro_within1(&self) -> f64 {
        self.per_species.values().map(|m| m.within1_accuracy).sum::<f64>() / self.per_species.len() as f64
    }

    pub fn macro_exact(&self) -> f64 {
        self.per_species.values().map(|m| m.exact_accuracy).sum::<f64>() / self.per_species.len() as f64
    }
}

/// Counting accuracy grouped by the true species, whatever species the
/// model named. Malformed answers fail both accuracies and are left out of
/// the MAE.
pub fn enumeration_metrics(items: &[(Species, u32, Prediction)]) -> Result<EnumerationMetrics> {
    if items.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let per_species = Species::ALL
        .iter()
        .map(|&s| {
            let group: Vec<_> = items.iter().filter(|(t, _, _)| *t == s).collect();
            let n = group.len();
            let (mut exact, mut within, mut abs_sum, mut parsed) = (0, 0, 0u64, 0);
            for (_, truth, pred) in &group {
                let Some(c) = pred.count.filter(|_| pred.is_ok()) else { continue };
                let err = c.abs_diff(*truth);
                parsed += 1;
                abs_sum += err as u64;
                exact += (err == 0) as usize;
                within += (err <= 1) as usize;
            }
            let stats = CountStats {
                n,
                exact_accuracy: ratio(exact, n),
                within1_accuracy: ratio(within, n),
                mae: (parsed > 0).then(|| abs_sum as f64 / parsed as f64),
                unparseable_rate: ratio(n - parsed, n),
            };
            (s, stats)
        })
        .collect();
    Ok(EnumerationMetrics { per_species })
}
