//! Toy vision-language model: frozen vision encoder, trainable projector and
//! frozen causal language model sharing one vocabulary.

pub mod checkpoint;
pub mod encoder;
pub mod lm;
pub mod nn;
pub mod partition;
pub mod pretrain;
pub mod projector;
pub mod vlm;
pub mod vocab;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::Checkpoint;
pub use encoder::{ImageInput, VisionEncoder};
pub use lm::CausalLm;
pub use partition::PartitionReport;
pub use pretrain::{pretrain_backbones, pretrain_backbones_with, PretrainConfig, PretrainReport, SourceAccuracy};
pub use projector::Projector;
pub use vlm::{ToyVlm, Visual};
pub use vocab::{TokenSequence, Vocabulary};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub vision_dim: usize,
    pub vision_heads: usize,
    pub vision_blocks: usize,
    pub projector_hidden: usize,
    pub lm_dim: usize,
    pub lm_heads: usize,
    pub lm_blocks: usize,
    pub mlp_ratio: usize,
    pub max_seq_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            patch_size: 8,
            vision_dim: 64,
            vision_heads: 4,
            vision_blocks: 1,
            projector_hidden: 128,
            lm_dim: 128,
            lm_heads: 4,
            lm_blocks: 2,
            mlp_ratio: 4,
            max_seq_len: 160,
        }
    }
}

impl ModelConfig {
    pub fn num_patches(&self) -> usize {
        let side = self.image_size / self.patch_size;
        side * side
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.patch_size == 0 || self.image_size % self.patch_size != 0 {
            return bad(format!("image size {} not divisible by patch {}", self.image_size, self.patch_size));
        }
        if self.vision_heads == 0 || self.vision_dim % self.vision_heads != 0 {
            return bad(format!("vision dim {} not divisible by {} heads", self.vision_dim, self.vision_heads));
        }
        if self.lm_heads == 0 || self.lm_dim % self.lm_heads != 0 {
            return bad(format!("lm dim {} not divisible by {} heads", self.lm_dim, self.lm_heads));
        }
        if self.mlp_ratio == 0 || self.projector_hidden == 0 {
            return bad("mlp ratio and projector width must be positive".into());
        }
        if self.max_seq_len <= self.num_patches() + 1 {
            return bad(format!("max_seq_len {} leaves no room for text", self.max_seq_len));
        }
        Ok(())
    }
}
