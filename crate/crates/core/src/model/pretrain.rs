//! Source-modality pretraining that stands in for a web-scale RGB checkpoint.
//!
//! Encoder, language model and a throwaway projector learn the counting task
//! jointly on freshly rendered colour scenes. The backbones are then frozen
//! and the projector is re-initialized for alignment.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ImageInput, ToyVlm};
use crate::dataset::answer_text;
use crate::error::{Error, Result};
use crate::evalkit::{parse_species_count, render_prompt, PromptMode};
use crate::scenegen::corpus::render_plan;
use crate::scenegen::{CorpusConfig, ScenePlan};
use crate::seeds;
use crate::species::Species;
use crate::train::{batch_gradient, clip_grad_norm, lr_at, smooth, AdamW, CurveKind, LossCurve, Sample, SampleInput, TrainConfig};

/// Stream offsets keeping training and held-out scenes apart.
const TRAIN_STREAM: u64 = 0x5EED_0001;
const HELD_OUT_STREAM: u64 = 0x5EED_0002;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_ratio: f64,
    pub seed: u64,
    pub held_out_scenes: usize,
    /// Seed of the re-initialized alignment projector.
    pub projector_seed: u64,
    pub scenes: CorpusConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 16,
            peak_lr: 1e-3,
            warmup_ratio: 0.03,
            seed: 1,
            held_out_scenes: 150,
            projector_seed: 2,
            scenes: CorpusConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub steps: u64,
    pub initial_loss_per_token: f64,
    pub final_smoothed_loss: f64,
    pub held_out: SourceAccuracy,
    pub curve: LossCurve,
}

/// Colour render of a source-domain scene with its supervision text.
pub fn source_example(cfg: &PretrainConfig, stream: u64, index: u64) -> Result<(ImageInput, PromptMode, Species, u32)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed ^ stream, index));
    let species = cfg.scenes.species[rng.random_range(0..cfg.scenes.species.len())];
    let count = rng.random_range(cfg.scenes.min_count..=cfg.scenes.max_count);
    let mode = if rng.random::<bool>() { PromptMode::ClosedSet } else { PromptMode::OpenSet };
    let plan = ScenePlan { id: String::new(), species, count, seed: rng.random() };
    let scene = render_plan(&cfg.scenes, &plan)?;
    Ok((ImageInput::Rgb(scene.rgb), mode, species, count))
}

fn source_sample(model: &ToyVlm, cfg: &PretrainConfig, stream: u64, index: u64) -> Result<Sample> {
    let (image, mode, species, count) = source_example(cfg, stream, index)?;
    let user = format!("<image>\n{}", render_prompt(mode));
    Sample::from_text(model, SampleInput::Image(image), &user, &answer_text(species, count))
}

/// Greedy-decoding accuracy on unseen source scenes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SourceAccuracy {
    /// Whole answer string correct.
    pub exact: f64,
    pub species: f64,
    /// Count off by at most one, species ignored.
    pub within1: f64,
}

pub fn source_accuracy(model: &ToyVlm, cfg: &PretrainConfig) -> Result<SourceAccuracy> {
    let (mut exact, mut species_ok, mut near) = (0usize, 0usize, 0usize);
    for i in 0..cfg.held_out_scenes as u64 {
        let (image, mode, species, count) = source_example(cfg, HELD_OUT_STREAM, i)?;
        let text = model.answer(&image, &format!("<image>\n{}", render_prompt(mode)), 8)?;
        exact += (text == answer_text(species, count)) as usize;
        let pred = parse_species_count(&text);
        species_ok += pred.predicts(species) as usize;
        near += pred.count.is_some_and(|c| c.abs_diff(count) <= 1) as usize;
    }
    let n = cfg.held_out_scenes.max(1) as f64;
    Ok(SourceAccuracy { exact: exact as f64 / n, species: species_ok as f64 / n, within1: near as f64 / n })
}

/// Trains every module on the source task, then freezes the backbones and
/// replaces the projector.
pub fn pretrain_backbones(model: &mut ToyVlm, cfg: &PretrainConfig) -> Result<PretrainReport> {
    pretrain_backbones_with(model, cfg, &mut |_, _| {})
}

/// [`pretrain_backbones`] reporting `(step, loss)` after every step.
pub fn pretrain_backbones_with(
    model: &mut ToyVlm,
    cfg: &PretrainConfig,
    progress: &mut dyn FnMut(u64, f64),
) -> Result<PretrainReport> {
    cfg.scenes.validate()?;
    let sched = TrainConfig {
        peak_lr: cfg.peak_lr,
        warmup_ratio: cfg.warmup_ratio,
        max_steps: cfg.steps,
        ..TrainConfig::default()
    };
    if cfg.steps == 0 || cfg.batch_size == 0 {
        return Err(Error::Config("pretraining needs positive steps and batch size".into()));
    }
    model.encoder.trainable = true;
    model.projector.trainable = true;
    model.lm.trainable = true;

    let mut opt = AdamW::new(sched.beta1, sched.beta2, sched.eps, 0.0);
    let mut curve = LossCurve::new(CurveKind::Train);
    let mut next = 0u64;
    for step in 1..=cfg.steps {
        let start = next;
        next += cfg.batch_size as u64;
        let batch: Vec<Sample> = (start..next)
            .into_par_iter()
            .map(|i| source_sample(model, cfg, TRAIN_STREAM, i))
            .collect::<Result<_>>()?;
        let refs: Vec<&Sample> = batch.iter().collect();
        let loss = batch_gradient(model, &refs)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { step });
        }
        clip_grad_norm(model, 1.0);
        opt.step(model, lr_at(step - 1, &sched)?);
        curve.push(step, loss);
        progress(step, loss);
    }
    model.zero_grad();

    let values = curve.values();
    let first = values[0];
    let last = *smooth(&values, 0.9)?.last().expect("non-empty");
    if last >= first {
        return Err(Error::PretrainDivergence { first, last });
    }
    let held_out = source_accuracy(model, cfg)?;
    model.freeze_backbones();
    model.reset_projector(cfg.projector_seed);
    Ok(PretrainReport {
        steps: cfg.steps,
        initial_loss_per_token: first,
        final_smoothed_loss: last,
        held_out,
        curve,
    })
}
