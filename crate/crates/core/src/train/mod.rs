//! Projector alignment: schedule, optimizer, loss curves and checkpoint
//! selection.

pub mod curves;
pub mod optim;
pub mod schedule;

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio;
use crate::model::checkpoint::TensorSelection;
use crate::model::{Checkpoint, ImageInput, PartitionReport, ToyVlm, Visual};

pub use curves::{loss_svg, select_checkpoint, smooth, CurveKind, LossCurve};
pub use optim::{clip_grad_norm, AdamW};
pub use schedule::{lr_at, warmup_steps};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub warmup_ratio: f64,
    pub max_steps: u64,
    pub batch_size: usize,
    pub eval_interval: u64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm ceiling; zero disables clipping.
    pub max_grad_norm: f64,
    /// Smoothing factor for the plotted training curve.
    pub smoothing: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            peak_lr: 1e-4,
            warmup_ratio: 0.03,
            max_steps: 1000,
            batch_size: 16,
            eval_interval: 100,
            seed: 1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            max_grad_norm: 1.0,
            smoothing: 0.9,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.warmup_ratio > 0.0 && self.warmup_ratio < 1.0) {
            return bad(format!("warmup_ratio {} outside (0, 1)", self.warmup_ratio));
        }
        if self.max_steps == 0 || self.batch_size == 0 {
            return bad("max_steps and batch_size must be positive".into());
        }
        if self.eval_interval == 0 || self.max_steps / self.eval_interval < 2 {
            return bad(format!(
                "eval_interval {} gives fewer than 2 evaluations in {} steps",
                self.eval_interval, self.max_steps
            ));
        }
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return bad(format!("peak_lr {} must be positive", self.peak_lr));
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return bad(format!("smoothing {} outside [0, 1)", self.smoothing));
        }
        if !(self.max_grad_norm >= 0.0) {
            return bad(format!("max_grad_norm {} must be non-negative", self.max_grad_norm));
        }
        Ok(())
    }
}

/// Visual side of a supervised example.
#[derive(Clone, Debug, PartialEq)]
pub enum SampleInput {
    Image(ImageInput),
    /// Precomputed output of a frozen encoder.
    Features(Array2<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub input: SampleInput,
    pub prompt: Vec<u32>,
    pub target: Vec<u32>,
}

impl Sample {
    /// Tokenizes a user/assistant pair; the target ends with EOS.
    pub fn from_text(model: &ToyVlm, input: SampleInput, user_text: &str, assistant_text: &str) -> Result<Self> {
        let prompt = model.user_prompt_tokens(user_text)?;
        let mut target = model.vocab.tokenize(assistant_text)?;
        target.push(model.vocab.eos());
        Ok(Self { input, prompt, target })
    }

    fn visual(&self) -> Visual<'_> {
        match &self.input {
            SampleInput::Image(i) => Visual::Image(i),
            SampleInput::Features(f) => Visual::Features(f),
        }
    }

    /// Replaces pixels with encoder features; valid only while the encoder
    /// stays frozen.
    pub fn precompute(&self, model: &ToyVlm) -> Result<Self> {
        let input = match &self.input {
            SampleInput::Image(i) => SampleInput::Features(model.encode_image(i)?),
            f => f.clone(),
        };
        Ok(Self { input, prompt: self.prompt.clone(), target: self.target.clone() })
    }

    pub fn loss(&self, model: &ToyVlm) -> Result<f64> {
        let features = match &self.input {
            SampleInput::Image(i) => model.encode_image(i)?,
            SampleInput::Features(f) => f.clone(),
        };
        model.sequence_loss(&model.project(&features)?, &self.prompt, &self.target)
    }
}

/// Examples per gradient shard. Shards run in parallel and are summed in a
/// fixed order, so results do not depend on the thread count.
const GRAD_SHARD: usize = 4;

/// Accumulates gradients for `batch` and normalizes them per target token.
/// Returns the mean per-token loss.
pub fn batch_gradient(model: &mut ToyVlm, batch: &[&Sample]) -> Result<f64> {
    model.zero_grad();
    let shards: Vec<(f64, Vec<Array2<f64>>)> = batch
        .par_chunks(GRAD_SHARD)
        .map(|chunk| {
            let mut local = model.clone();
            let mut loss = 0.0;
            for s in chunk {
                loss += local.forward_backward(s.visual(), &s.prompt, &s.target)?;
            }
            let mut grads = Vec::new();
            local.visit_trainable_mut(&mut |_, p| grads.push(std::mem::take(&mut p.grad)));
            Ok((loss, grads))
        })
        .collect::<Result<_>>()?;
    let mut total = 0.0;
    for (loss, grads) in &shards {
        total += loss;
        let mut it = grads.iter();
        model.visit_trainable_mut(&mut |_, p| p.grad += it.next().expect("same parameter walk"));
    }
    let tokens: usize = batch.iter().map(|s| s.target.len()).sum();
    let scale = 1.0 / tokens.max(1) as f64;
    model.scale_grads(scale);
    Ok(total * scale)
}

/// Mean per-token loss over every sample.
pub fn mean_loss(model: &ToyVlm, samples: &[Sample]) -> Result<f64> {
    let losses: Vec<f64> = samples.par_iter().map(|s| s.loss(model)).collect::<Result<_>>()?;
    let total: f64 = losses.iter().sum();
    let tokens: usize = samples.iter().map(|s| s.target.len()).sum();
    if tokens == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(total / tokens as f64)
}

/// Endless reshuffled passes over `n` indices.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
}

impl BatchSampler {
    pub fn new(n: usize, seed: u64) -> Self {
        let mut s = Self { rng: ChaCha8Rng::seed_from_u64(seed), order: (0..n).collect(), pos: n };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.order.shuffle(&mut self.rng);
        self.pos = 0;
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.reshuffle();
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub train_curve: LossCurve,
    pub val_curve: LossCurve,
    /// Projector checkpoints keyed by eval step.
    pub checkpoints: BTreeMap<u64, Checkpoint>,
    pub selected_step: u64,
    pub partition: PartitionReport,
    pub config: TrainConfig,
    pub frozen_digests: BTreeMap<String, String>,
}

impl RunArtifacts {
    pub fn selected_checkpoint(&self) -> &Checkpoint {
        &self.checkpoints[&self.selected_step]
    }

    pub fn selected_val_loss(&self) -> f64 {
        self.val_curve.points.iter().find(|(s, _)| *s == self.selected_step).map(|p| p.1).expect("selected is an eval step")
    }
}

fn check_partition(model: &ToyVlm) -> Result<()> {
    if model.encoder.trainable || model.lm.trainable || !model.projector.trainable {
        return Err(Error::Config("alignment requires frozen backbones and a trainable projector".into()));
    }
    Ok(())
}

fn verify_frozen(model: &ToyVlm, before: &BTreeMap<String, String>) -> Result<()> {
    let after = model.frozen_digests();
    let changed: Vec<&str> = before
        .iter()
        .filter(|(k, v)| after.get(*k) != Some(*v))
        .map(|(k, _)| k.as_str())
        .chain(after.keys().filter(|k| !before.contains_key(*k)).map(String::as_str))
        .collect();
    if changed.is_empty() {
        Ok(())
    } else {
        Err(Error::FreezeViolation(changed.join(", ")))
    }
}

pub const CHECKPOINT_FILE: &str = "projector.ckpt";

pub fn checkpoint_dir(run: &Path, step: u64) -> std::path::PathBuf {
    run.join("checkpoints").join(format!("step-{step}"))
}

/// Trains the projector of `model` for `cfg.max_steps` AdamW steps. The model
/// ends holding the final-step weights; the selected checkpoint is in the
/// returned artifacts. With `out` set, the run directory is written as it
/// goes.
pub fn train_projector(
    model: &mut ToyVlm,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    out: Option<&Path>,
) -> Result<RunArtifacts> {
    cfg.validate()?;
    check_partition(model)?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let digests = model.frozen_digests();
    let train: Vec<Sample> = train.iter().map(|s| s.precompute(model)).collect::<Result<_>>()?;
    let val: Vec<Sample> = val.iter().map(|s| s.precompute(model)).collect::<Result<_>>()?;
    if let Some(dir) = out {
        fsio::write_json_atomic(&dir.join("config.json"), cfg)?;
    }

    let mut opt = AdamW::new(cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay);
    let mut sampler = BatchSampler::new(train.len(), cfg.seed);
    let mut train_curve = LossCurve::new(CurveKind::Train);
    let mut val_curve = LossCurve::new(CurveKind::Val);
    let mut checkpoints = BTreeMap::new();

    for step in 1..=cfg.max_steps {
        let idx = sampler.next_batch(cfg.batch_size);
        let batch: Vec<&Sample> = idx.iter().map(|&i| &train[i]).collect();
        let loss = batch_gradient(model, &batch)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { step });
        }
        if cfg.max_grad_norm > 0.0 {
            clip_grad_norm(model, cfg.max_grad_norm);
        }
        opt.step(model, lr_at(step - 1, cfg)?);
        train_curve.push(step, loss);

        if step % cfg.eval_interval == 0 {
            let v = mean_loss(model, &val)?;
            if !v.is_finite() {
                return Err(Error::Divergence { step });
            }
            val_curve.push(step, v);
            let ck = Checkpoint::from_model(model, TensorSelection::TrainableOnly)
                .with_meta("step", step)
                .with_meta("val_loss", v);
            if let Some(dir) = out {
                ck.save(&checkpoint_dir(dir, step).join(CHECKPOINT_FILE))?;
            }
            checkpoints.insert(step, ck);
        }
    }
    model.zero_grad();
    verify_frozen(model, &digests)?;

    let selected_step = select_checkpoint(&val_curve).expect("at least two evaluations");
    let artifacts = RunArtifacts {
        train_curve,
        val_curve,
        checkpoints,
        selected_step,
        partition: PartitionReport::of(model),
        config: cfg.clone(),
        frozen_digests: digests,
    };
    if let Some(dir) = out {
        write_run_files(dir, &artifacts)?;
    }
    Ok(artifacts)
}

fn write_run_files(dir: &Path, a: &RunArtifacts) -> Result<()> {
    fsio::write_atomic(&dir.join("curves").join("train.csv"), a.train_curve.to_csv().as_bytes())?;
    fsio::write_atomic(&dir.join("curves").join("val.csv"), a.val_curve.to_csv().as_bytes())?;
    fsio::write_atomic(&dir.join("selected.txt"), format!("{}\n", a.selected_step).as_bytes())?;
    fsio::write_atomic(&dir.join("loss_curve.svg"), loss_svg(&a.train_curve, &a.val_curve, a.config.smoothing).as_bytes())?;
    fsio::write_atomic(&dir.join("partition.csv"), a.partition.to_csv("toy-vlm").as_bytes())?;
    fsio::write_json_atomic(&dir.join("frozen_digests.json"), &a.frozen_digests)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, Vocabulary};

    fn micro() -> ToyVlm {
        let cfg = ModelConfig {
            image_size: 8,
            patch_size: 4,
            vision_dim: 4,
            vision_heads: 2,
            vision_blocks: 1,
            projector_hidden: 6,
            lm_dim: 8,
            lm_heads: 2,
            lm_blocks: 1,
            mlp_ratio: 2,
            max_seq_len: 24,
        };
        let mut m = ToyVlm::new(cfg, Vocabulary::truncated(20).unwrap(), 3).unwrap();
        m.freeze_backbones();
        m
    }

    fn samples(n: usize, seed: u64) -> Vec<Sample> {
        (0..n)
            .map(|i| {
                let img = ImageInput::Gray(Array2::from_shape_fn((8, 8), |(r, c)| {
                    (((r * 8 + c) as u64 * 7 + seed + i as u64) % 11) as f64 / 10.0
                }));
                Sample { input: SampleInput::Image(img), prompt: vec![4, 5], target: vec![6 + (i % 4) as u32, 2] }
            })
            .collect()
    }

    fn cfg() -> TrainConfig {
        TrainConfig { max_steps: 40, eval_interval: 10, batch_size: 4, peak_lr: 1e-2, ..Default::default() }
    }

    #[test]
    fn run_keeps_backbones_and_logs_every_eval() {
        let mut m = micro();
        let before = m.frozen_digests();
        let a = train_projector(&mut m, &samples(12, 0), &samples(4, 5), &cfg(), None).unwrap();
        assert_eq!(m.frozen_digests(), before);
        assert_eq!(a.val_curve.points.len(), 4);
        assert_eq!(a.train_curve.points.len(), 40);
        assert!(a.checkpoints.contains_key(&a.selected_step));
        let first = a.train_curve.points[0].1;
        let tail = smooth(&a.train_curve.values(), 0.9).unwrap();
        assert!(*tail.last().unwrap() < first);
    }

    #[test]
    fn runs_are_reproducible() {
        let (mut a, mut b) = (micro(), micro());
        let ra = train_projector(&mut a, &samples(12, 0), &samples(4, 5), &cfg(), None).unwrap();
        let rb = train_projector(&mut b, &samples(12, 0), &samples(4, 5), &cfg(), None).unwrap();
        assert_eq!(ra.train_curve, rb.train_curve);
        assert_eq!(ra.val_curve, rb.val_curve);
        assert_eq!(ra.selected_step, rb.selected_step);
    }

    #[test]
    fn selected_checkpoint_reproduces_its_val_loss() {
        let mut m = micro();
        let val = samples(4, 5);
        let a = train_projector(&mut m, &samples(12, 0), &val, &cfg(), None).unwrap();
        let mut restored = m.clone();
        restored.reset_projector(77);
        a.selected_checkpoint().apply_to(&mut restored).unwrap();
        let v = mean_loss(&restored, &val).unwrap();
        assert!((v - a.selected_val_loss()).abs() <= 1e-6 * a.selected_val_loss().abs().max(1.0));
    }

    #[test]
    fn unfrozen_model_is_rejected() {
        let mut m = micro();
        m.lm.trainable = true;
        assert!(matches!(train_projector(&mut m, &samples(4, 0), &samples(2, 1), &cfg(), None), Err(Error::Config(_))));
    }

    #[test]
    fn non_finite_loss_reports_the_step() {
        let mut m = micro();
        m.projector.fc1.weight.value.fill(f64::NAN);
        let r = train_projector(&mut m, &samples(4, 0), &samples(2, 1), &cfg(), None);
        assert!(matches!(r, Err(Error::Divergence { step: 1 })));
    }

    #[test]
    fn sampler_covers_each_pass() {
        let mut s = BatchSampler::new(5, 1);
        let mut first: Vec<usize> = s.next_batch(5);
        first.sort();
        assert_eq!(first, [0, 1, 2, 3, 4]);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { eval_interval: 600, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { warmup_ratio: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }

    #[test]
    fn run_directory_layout() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = micro();
        let a = train_projector(&mut m, &samples(8, 0), &samples(4, 1), &cfg(), Some(dir.path())).unwrap();
        for f in ["config.json", "curves/train.csv", "curves/val.csv", "selected.txt", "loss_curve.svg", "partition.csv"] {
            assert!(dir.path().join(f).is_file(), "{f}");
        }
        let sel = std::fs::read_to_string(dir.path().join("selected.txt")).unwrap();
        assert_eq!(sel.trim().parse::<u64>().unwrap(), a.selected_step);
        let ck = Checkpoint::load(&checkpoint_dir(dir.path(), 20).join(CHECKPOINT_FILE)).unwrap();
        assert_eq!(ck.meta["step"], 20);
    }
}
