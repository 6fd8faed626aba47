use std::f64::consts::PI;

use super::TrainConfig;
use crate::error::{Error, Result};

pub fn warmup_steps(cfg: &TrainConfig) -> u64 {
    (cfg.warmup_ratio * cfg.max_steps as f64).floor() as u64
}

/// Linear warmup to `peak_lr`, then cosine decay to zero at `max_steps`.
pub fn lr_at(step: u64, cfg: &TrainConfig) -> Result<f64> {
    if step > cfg.max_steps {
        return Err(Error::InvalidStep { step, max_steps: cfg.max_steps });
    }
    let warmup = warmup_steps(cfg);
    if step < warmup {
        return Ok(cfg.peak_lr * step as f64 / warmup as f64);
    }
    let span = cfg.max_steps - warmup;
    if span == 0 {
        return Ok(cfg.peak_lr);
    }
    let progress = (step - warmup) as f64 / span as f64;
    Ok(cfg.peak_lr * 0.5 * (1.0 + (PI * progress).cos()))
}
