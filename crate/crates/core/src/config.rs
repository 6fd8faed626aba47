//! The single TOML file that drives a pipeline run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backends::RemoteConfig;
use crate::dataset::DatasetConfig;
use crate::error::{Error, Result};
use crate::evalkit::PromptMode;
use crate::fsio;
use crate::model::{ModelConfig, PretrainConfig};
use crate::scenegen::CorpusConfig;
use crate::train::TrainConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Local,
    Remote,
}

impl std::str::FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "local" => Ok(BackendKind::Local),
            "remote" => Ok(BackendKind::Remote),
            other => Err(Error::Config(format!("unknown backend {other:?}, expected local or remote"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub modes: Vec<PromptMode>,
    pub backend: BackendKind,
    pub parallelism: usize,
    pub remote: RemoteConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            modes: vec![PromptMode::ClosedSet, PromptMode::OpenSet],
            backend: BackendKind::Local,
            parallelism: 4,
            remote: RemoteConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Copied into every stage seed by [`PipelineConfig::resolved`].
    pub seed: u64,
    pub output_root: PathBuf,
    pub scenegen: CorpusConfig,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub align: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            output_root: PathBuf::from("runs"),
            scenegen: CorpusConfig::default(),
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            pretrain: PretrainConfig::default(),
            align: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fsio::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Pushes the global seed into every stage so one number pins the run.
    pub fn resolved(mut self) -> Self {
        self.scenegen.seed = self.seed;
        self.pretrain.scenes.seed = self.seed;
        self.dataset.seed = self.seed;
        self.pretrain.seed = self.seed;
        self.align.seed = self.seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.scenegen.validate()?;
        self.pretrain.scenes.validate()?;
        self.dataset.ratios.validate()?;
        self.model.validate()?;
        self.align.validate()?;
        self.eval.remote.validate()?;
        if self.eval.modes.is_empty() || self.eval.modes.contains(&PromptMode::Habitat) {
            return Err(Error::Config("eval.modes must list closed_set and/or open_set".into()));
        }
        if self.eval.parallelism == 0 {
            return Err(Error::Config("eval.parallelism must be at least 1".into()));
        }
        if self.output_root.as_os_str().is_empty() {
            return Err(Error::Config("output_root must not be empty".into()));
        }
        Ok(())
    }

    /// Relative paths are taken under the output root.
    pub fn under_root(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.output_root.join(path)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = PipelineConfig::default();
        let back = PipelineConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn alignment_defaults() {
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.align.peak_lr, 1e-4);
        assert_eq!(cfg.align.warmup_ratio, 0.03);
        assert_eq!(cfg.align.max_steps, 1000);
        assert_eq!(cfg.dataset.ratios.train, 0.8);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = PipelineConfig::from_toml("seed = 7\n[align]\nmax_steps = 50\neval_interval = 10\n").unwrap();
        assert_eq!(cfg.align.max_steps, 50);
        assert_eq!(cfg.scenegen, CorpusConfig::default());
        let r = cfg.resolved();
        assert_eq!((r.scenegen.seed, r.dataset.seed, r.align.seed), (7, 7, 7));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in ["sed = 1\n", "[align]\nlearning_rate = 1\n", "[dataset.ratios]\ntrain = 0.8\nval = 0.1\ntest = 0.1\nextra = 0\n"] {
            assert!(matches!(PipelineConfig::from_toml(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn habitat_is_not_a_scored_mode() {
        let mut cfg = PipelineConfig::default();
        cfg.eval.modes = vec![PromptMode::Habitat];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn relative_paths_live_under_the_root() {
        let cfg = PipelineConfig { output_root: "out".into(), ..Default::default() };
        assert_eq!(cfg.under_root(Path::new("a")), Path::new("out/a"));
        assert_eq!(cfg.under_root(Path::new("/abs")), Path::new("/abs"));
    }
}
