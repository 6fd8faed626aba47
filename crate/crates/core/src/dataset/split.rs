//! Stratified train/val/test partitioning.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::AnnotationRecord;
use crate::error::{Error, Result};
use crate::seeds;
use crate::species::Species;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.8, val: 0.1, test: 0.1 }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.val, self.test];
        if all.iter().any(|r| !(0.0..=1.0).contains(r)) || (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios {}/{}/{} must be in [0,1] and sum to 1",
                self.train, self.val, self.test
            )));
        }
        Ok(())
    }

    /// `floor(train·n)`, `floor(val·n)` and the remainder.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        // The epsilon keeps exact products such as 0.1·10 from flooring down.
        let floor = |r: f64| ((r * n as f64) + 1e-9).floor() as usize;
        let train = floor(self.train).min(n);
        let val = floor(self.val).min(n - train);
        (train, val, n - train - val)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<AnnotationRecord>,
    pub val: Vec<AnnotationRecord>,
    pub test: Vec<AnnotationRecord>,
}

impl Splits {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn parts(&self) -> [(&'static str, &[AnnotationRecord]); 3] {
        [("train", &self.train), ("val", &self.val), ("test", &self.test)]
    }
}

/// Shuffles each species with its own seeded stream and cuts it by
/// [`SplitRatios::sizes`].
pub fn split_dataset(records: &[AnnotationRecord], ratios: SplitRatios, seed: u64) -> Result<Splits> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    ratios.validate()?;
    let mut out = Splits::default();
    for sp in Species::ALL {
        let mut group: Vec<AnnotationRecord> = records.iter().filter(|r| r.species == sp).cloned().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, sp.index() as u64));
        group.shuffle(&mut rng);
        let (tr, va, _) = ratios.sizes(group.len());
        let mut rest = group.split_off(tr);
        let test = rest.split_off(va);
        out.train.extend(group);
        out.val.extend(rest);
        out.test.extend(test);
    }
    Ok(out)
}
