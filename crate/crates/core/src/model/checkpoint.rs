//! Versioned binary checkpoint container.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header (config, vocabulary, module flags, tensor index with per-tensor
//! SHA-256), then every tensor's `f64` values little-endian in index order.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::nn::Module;
use super::vlm::{tensor_digest, ToyVlm};
use super::{ModelConfig, Vocabulary};
use crate::error::{Error, Result};
use crate::fsio;

const MAGIC: &[u8; 8] = b"TALNCKPT";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainableFlags {
    pub encoder: bool,
    pub projector: bool,
    pub lm: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: Vocabulary,
    trainable: TrainableFlags,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    meta: BTreeMap<String, serde_json::Value>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TensorSelection {
    All,
    TrainableOnly,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub trainable: TrainableFlags,
    pub tensors: BTreeMap<String, Array2<f64>>,
    pub meta: BTreeMap<String, serde_json::Value>,
}

impl Checkpoint {
    pub fn from_model(model: &ToyVlm, selection: TensorSelection) -> Self {
        let mut tensors = BTreeMap::new();
        model.visit_with_flags(&mut |name, p, trainable| {
            if selection == TensorSelection::All || trainable {
                tensors.insert(name.to_string(), p.value.clone());
            }
        });
        Self {
            config: model.config.clone(),
            vocab: model.vocab.clone(),
            trainable: TrainableFlags {
                encoder: model.encoder.trainable,
                projector: model.projector.trainable,
                lm: model.lm.trainable,
            },
            tensors,
            meta: BTreeMap::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.meta.insert(key.to_string(), value.into());
        self
    }

    pub fn digests(&self) -> BTreeMap<String, String> {
        self.tensors.iter().map(|(k, v)| (k.clone(), tensor_digest(v))).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            trainable: self.trainable,
            tensors: self
                .tensors
                .iter()
                .map(|(name, t)| TensorEntry { name: name.clone(), shape: [t.nrows(), t.ncols()], sha256: tensor_digest(t) })
                .collect(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let payload: usize = self.tensors.values().map(|t| t.len() * 8).sum();
        let mut out = Vec::with_capacity(20 + json.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.tensors.values() {
            for v in t.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(m);
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("missing checkpoint magic".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = &bytes[20..];
        if body.len() < hlen {
            return Err(bad("truncated header".into()));
        }
        let header: Header = serde_json::from_slice(&body[..hlen]).map_err(|e| bad(format!("header: {e}")))?;
        let mut data = &body[hlen..];
        let mut tensors = BTreeMap::new();
        for entry in &header.tensors {
            let n = entry.shape[0] * entry.shape[1];
            if data.len() < n * 8 {
                return Err(bad(format!("truncated data for {}", entry.name)));
            }
            let values: Vec<f64> = data[..n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            data = &data[n * 8..];
            let t = Array2::from_shape_vec((entry.shape[0], entry.shape[1]), values).expect("shape matches length");
            if tensor_digest(&t) != entry.sha256 {
                return Err(bad(format!("digest mismatch for {}", entry.name)));
            }
            tensors.insert(entry.name.clone(), t);
        }
        if !data.is_empty() {
            return Err(bad(format!("{} trailing bytes", data.len())));
        }
        Ok(Self { config: header.config, vocab: header.vocab, trainable: header.trainable, tensors, meta: header.meta })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsio::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Overwrites the matching tensors of `model`. Every stored tensor must
    /// exist in the model with the same shape.
    pub fn apply_to(&self, model: &mut ToyVlm) -> Result<()> {
        if self.config != model.config || self.vocab != model.vocab {
            return Err(Error::Checkpoint("checkpoint config or vocabulary differs from model".into()));
        }
        let mut seen = 0;
        let mut err = None;
        model.visit_mut("", &mut |name, p| {
            if let Some(t) = self.tensors.get(name) {
                if t.dim() != p.value.dim() {
                    err.get_or_insert_with(|| Error::Checkpoint(format!("shape mismatch for {name}")));
                } else {
                    p.value.assign(t);
                    seen += 1;
                }
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if seen != self.tensors.len() {
            return Err(Error::Checkpoint(format!("{} stored tensors have no counterpart", self.tensors.len() - seen)));
        }
        Ok(())
    }

    /// Rebuilds a full model; the checkpoint must hold every tensor.
    pub fn into_model(self) -> Result<ToyVlm> {
        let mut model = ToyVlm::new(self.config.clone(), self.vocab.clone(), 0)?;
        let mut expected = 0;
        model.visit("", &mut |_, _| expected += 1);
        if expected != self.tensors.len() {
            return Err(Error::Checkpoint(format!("expected {expected} tensors, found {}", self.tensors.len())));
        }
        self.apply_to(&mut model)?;
        model.encoder.trainable = self.trainable.encoder;
        model.projector.trainable = self.trainable.projector;
        model.lm.trainable = self.trainable.lm;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::vlm::ToyVlm;

    fn small() -> ToyVlm {
        let cfg = ModelConfig {
            image_size: 8,
            patch_size: 4,
            vision_dim: 4,
            vision_heads: 2,
            vision_blocks: 1,
            projector_hidden: 6,
            lm_dim: 8,
            lm_heads: 2,
            lm_blocks: 2,
            mlp_ratio: 2,
            max_seq_len: 24,
        };
        ToyVlm::new(cfg, Vocabulary::truncated(16).unwrap(), 11).unwrap()
    }

    #[test]
    fn full_checkpoint_round_trips_bit_exactly() {
        let mut m = small();
        m.freeze_backbones();
        let ck = Checkpoint::from_model(&m, TensorSelection::All).with_meta("step", 100);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back.meta["step"], 100);
        let m2 = back.into_model().unwrap();
        assert_eq!(m.all_digests(), m2.all_digests());
        assert!(!m2.lm.trainable && m2.projector.trainable);
    }

    #[test]
    fn projector_only_checkpoint_overlays() {
        let mut m = small();
        m.freeze_backbones();
        let ck = Checkpoint::from_model(&m, TensorSelection::TrainableOnly);
        assert_eq!(ck.tensors.len(), 4);
        let mut other = m.clone();
        other.reset_projector(99);
        ck.apply_to(&mut other).unwrap();
        assert_eq!(m.all_digests(), other.all_digests());
        assert!(ck.into_model().is_err());
    }

    #[test]
    fn corruption_is_detected() {
        let m = small();
        let mut bytes = Checkpoint::from_model(&m, TensorSelection::All).to_bytes();
        let n = bytes.len();
        bytes[n - 3] ^= 0x40;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Checkpoint(_))));
        assert!(Checkpoint::from_bytes(&bytes[..n - 8]).is_err());
        assert!(Checkpoint::from_bytes(b"nope").is_err());
    }
}
