use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("glyph scale {0} is below the minimum of 4 pixels")]
    InvalidScale(u32),
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("could not place glyph {placed}/{count} after {attempts} attempts")]
    PlacementFailure { placed: u32, count: u32, attempts: u32 },
    #[error("rotation must be 1, 2 or 3 quarter-turns, got {0}")]
    InvalidRotation(u8),
    #[error("species {0} has no records")]
    EmptyClass(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("schema error in {path} at {locus}: {message}")]
    Schema { path: PathBuf, locus: String, message: String },
    #[error("unknown token {0:?}")]
    UnknownToken(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("target sequence is empty")]
    EmptyTarget,
    #[error("source loss did not decrease during pretraining (first {first:.4}, last {last:.4})")]
    PretrainDivergence { first: f64, last: f64 },
    #[error("step {step} outside [0, {max_steps}]")]
    InvalidStep { step: u64, max_steps: u64 },
    #[error("non-finite loss at step {step}")]
    Divergence { step: u64 },
    #[error("frozen tensor {0} changed during training")]
    FreezeViolation(String),
    #[error("input is empty")]
    EmptyInput,
    #[error("nothing to evaluate")]
    EmptyEvaluation,
    #[error("habitat response has {0} content lines, expected 4")]
    MalformedHabitat(usize),
    #[error("request timed out after {0:.1}s")]
    Timeout(f64),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("run aborted: {failed} of {total} backend calls failed")]
    AbortedRun { failed: usize, total: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image error on {path}: {message}")]
    Image { path: PathBuf, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
