use std::collections::BTreeMap;

use ndarray::{s, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::encoder::{ImageInput, VisionEncoder};
use super::lm::CausalLm;
use super::nn::{log_softmax, Module, Param};
use super::projector::Projector;
use super::vocab::{TokenSequence, Vocabulary};
use super::ModelConfig;
use crate::error::{Error, Result};

/// Visual input to a training step: raw pixels, or encoder features that
/// were computed ahead of time because the encoder is frozen.
#[derive(Clone, Copy, Debug)]
pub enum Visual<'a> {
    Image(&'a ImageInput),
    Features(&'a Array2<f64>),
}

/// The assembled model. Input layout is `[BOS] [visual × n] [prompt] [target]`.
#[derive(Clone, Debug)]
pub struct ToyVlm {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub encoder: VisionEncoder,
    pub projector: Projector,
    pub lm: CausalLm,
}

impl ToyVlm {
    pub fn new(config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = VisionEncoder::new(&mut rng, &config);
        let projector = Projector::new(&mut rng, config.vision_dim, config.projector_hidden, config.lm_dim);
        let lm = CausalLm::new(&mut rng, &config, vocab.len());
        Ok(Self { config, vocab, encoder, projector, lm })
    }

    /// Freezes encoder and language model; only the projector stays trainable.
    pub fn freeze_backbones(&mut self) {
        self.encoder.trainable = false;
        self.lm.trainable = false;
        self.projector.trainable = true;
    }

    /// Replaces the projector with a freshly initialized one.
    pub fn reset_projector(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trainable = self.projector.trainable;
        self.projector = Projector::new(&mut rng, self.config.vision_dim, self.config.projector_hidden, self.config.lm_dim);
        self.projector.trainable = trainable;
    }

    pub fn encode_image(&self, image: &ImageInput) -> Result<Array2<f64>> {
        self.encoder.encode(image)
    }

    pub fn project(&self, features: &Array2<f64>) -> Result<Array2<f64>> {
        self.projector.project(features)
    }

    /// Token ids following the `<image>` placeholder in a user turn.
    pub fn user_prompt_tokens(&self, user_text: &str) -> Result<TokenSequence> {
        let ids = self.vocab.tokenize(user_text)?;
        match ids.split_first() {
            Some((&first, rest)) if first == self.vocab.img() => Ok(rest.to_vec()),
            _ => Err(Error::Shape("user turn must start with the <image> placeholder".into())),
        }
    }

    fn assemble(&self, z: &Array2<f64>, text: &[u32]) -> Result<Array2<f64>> {
        let d = self.lm.dim();
        if z.ncols() != d {
            return Err(Error::Shape(format!("visual tokens have {} columns, language model expects {d}", z.ncols())));
        }
        let n = z.nrows();
        let len = 1 + n + text.len();
        if len > self.lm.max_len() {
            return Err(Error::Shape(format!("sequence of {len} exceeds maximum length {}", self.lm.max_len())));
        }
        let mut x = Array2::zeros((len, d));
        x.row_mut(0).assign(&self.lm.token_embedding(self.vocab.bos()));
        x.slice_mut(s![1..1 + n, ..]).assign(z);
        for (i, &id) in text.iter().enumerate() {
            if id as usize >= self.lm.vocab_size() {
                return Err(Error::UnknownToken(format!("id {id}")));
            }
            x.row_mut(1 + n + i).assign(&self.lm.token_embedding(id));
        }
        x += &self.lm.pos.value.slice(s![..len, ..]);
        Ok(x)
    }

    fn text_with_prefix(prompt: &[u32], prefix: &[u32]) -> Vec<u32> {
        prompt.iter().chain(prefix).copied().collect()
    }

    /// `-Σ_t log P(target_t | target_<t, prompt, z)`. Only target positions
    /// contribute.
    pub fn sequence_loss(&self, z: &Array2<f64>, prompt: &[u32], target: &[u32]) -> Result<f64> {
        if target.is_empty() {
            return Err(Error::EmptyTarget);
        }
        let text = Self::text_with_prefix(prompt, &target[..target.len() - 1]);
        let x = self.assemble(z, &text)?;
        let ctx = 1 + z.nrows() + prompt.len();
        let rows: Vec<usize> = (0..target.len()).map(|t| ctx - 1 + t).collect();
        let logits = self.lm.logits(&self.lm.hidden(x), &rows);
        let mut loss = 0.0;
        for (row, &tok) in logits.rows().into_iter().zip(target) {
            let lp = log_softmax(row.as_slice().expect("contiguous logits"));
            loss -= lp[tok as usize];
        }
        Ok(loss)
    }

    /// Logits for the token after `prompt` and `generated`.
    pub fn next_token_logits(&self, z: &Array2<f64>, prompt: &[u32], generated: &[u32]) -> Result<Vec<f64>> {
        let text = Self::text_with_prefix(prompt, generated);
        let x = self.assemble(z, &text)?;
        let last = x.nrows() - 1;
        let logits = self.lm.logits(&self.lm.hidden(x), &[last]);
        Ok(logits.row(0).to_vec())
    }

    /// Greedy decoding; the EOS token is not included in the output. Ties
    /// resolve to the lowest token id.
    pub fn generate(&self, z: &Array2<f64>, prompt: &[u32], max_new_tokens: usize) -> Result<TokenSequence> {
        let mut out = Vec::new();
        let room = self.lm.max_len().saturating_sub(1 + z.nrows() + prompt.len());
        for _ in 0..max_new_tokens.min(room) {
            let logits = self.next_token_logits(z, prompt, &out)?;
            let mut best = 0;
            for (i, &v) in logits.iter().enumerate() {
                if v > logits[best] {
                    best = i;
                }
            }
            let id = best as u32;
            if id == self.vocab.eos() {
                break;
            }
            out.push(id);
        }
        Ok(out)
    }

    /// Image → text convenience used by the local backend.
    pub fn answer(&self, image: &ImageInput, user_text: &str, max_new_tokens: usize) -> Result<String> {
        let prompt = self.user_prompt_tokens(user_text)?;
        let z = self.project(&self.encode_image(image)?)?;
        let ids = self.generate(&z, &prompt, max_new_tokens)?;
        Ok(self.vocab.detokenize(&ids))
    }

    /// One teacher-forced pass with back-propagation. Gradients accumulate
    /// into every trainable module; frozen modules are never written.
    /// Returns the summed target negative log-likelihood.
    pub fn forward_backward(&mut self, visual: Visual<'_>, prompt: &[u32], target: &[u32]) -> Result<f64> {
        if target.is_empty() {
            return Err(Error::EmptyTarget);
        }
        let (features, enc_cache) = match visual {
            Visual::Image(img) if self.encoder.trainable => {
                let (f, c) = self.encoder.forward(img)?;
                (f, Some(c))
            }
            Visual::Image(img) => (self.encoder.encode(img)?, None),
            Visual::Features(f) => (f.clone(), None),
        };
        let (z, proj_cache) = self.projector.forward(&features)?;
        let prefix = &target[..target.len() - 1];
        let text = Self::text_with_prefix(prompt, prefix);
        let x = self.assemble(&z, &text)?;
        let n = z.nrows();
        let ctx = 1 + n + prompt.len();
        let rows: Vec<usize> = (0..target.len()).map(|t| ctx - 1 + t).collect();
        let cache = self.lm.forward(x);
        let mut dlogits = self.lm.logits(cache.hidden(), &rows);
        let mut loss = 0.0;
        for (mut row, &tok) in dlogits.rows_mut().into_iter().zip(target) {
            let lp = log_softmax(row.as_slice().expect("contiguous logits"));
            loss -= lp[tok as usize];
            for (g, l) in row.iter_mut().zip(&lp) {
                *g = l.exp();
            }
            row[tok as usize] -= 1.0;
        }
        if !loss.is_finite() {
            return Ok(loss);
        }
        let dx = self.lm.backward(&cache, &rows, &dlogits);
        if self.lm.trainable {
            let len = dx.nrows();
            let mut pos = self.lm.pos.grad.slice_mut(s![..len, ..]);
            pos += &dx;
            let mut tokens = Vec::with_capacity(1 + text.len());
            tokens.push((0, self.vocab.bos()));
            tokens.extend(text.iter().enumerate().map(|(i, &t)| (1 + n + i, t)));
            for (row, id) in tokens {
                let mut g = self.lm.tok_emb.grad.row_mut(id as usize);
                g += &dx.row(row);
            }
        }
        if self.projector.trainable || enc_cache.is_some() {
            let dz = dx.slice(s![1..1 + n, ..]).to_owned();
            let dfeat = self.projector.backward(&proj_cache, &dz);
            if let Some(c) = enc_cache {
                self.encoder.backward(&c, &dfeat);
            }
        }
        Ok(loss)
    }

    pub fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, p| p.zero_grad());
    }

    pub fn scale_grads(&mut self, factor: f64) {
        self.visit_mut("", &mut |_, p| p.grad *= factor);
    }

    /// Walks every tensor with its module's trainable flag.
    pub fn visit_with_flags(&self, f: &mut dyn FnMut(&str, &Param, bool)) {
        let (e, p, l) = (self.encoder.trainable, self.projector.trainable, self.lm.trainable);
        self.encoder.visit("encoder", &mut |n, t| f(n, t, e));
        self.projector.visit("projector", &mut |n, t| f(n, t, p));
        self.lm.visit("lm", &mut |n, t| f(n, t, l));
    }

    pub fn visit_trainable_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        if self.encoder.trainable {
            self.encoder.visit_mut("encoder", f);
        }
        if self.projector.trainable {
            self.projector.visit_mut("projector", f);
        }
        if self.lm.trainable {
            self.lm.visit_mut("lm", f);
        }
    }

    /// SHA-256 of each frozen tensor's shape and little-endian bytes.
    pub fn frozen_digests(&self) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        self.visit_with_flags(&mut |name, p, trainable| {
            if !trainable {
                out.insert(name.to_string(), tensor_digest(&p.value));
            }
        });
        out
    }

    pub fn all_digests(&self) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        self.visit("", &mut |name, p| {
            out.insert(name.to_string(), tensor_digest(&p.value));
        });
        out
    }
}

impl Module for ToyVlm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        use super::nn::join;
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.projector.visit(&join(prefix, "projector"), f);
        self.lm.visit(&join(prefix, "lm"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        use super::nn::join;
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.projector.visit_mut(&join(prefix, "projector"), f);
        self.lm.visit_mut(&join(prefix, "lm"), f);
    }
}

pub fn tensor_digest(t: &Array2<f64>) -> String {
    let mut h = Sha256::new();
    h.update((t.nrows() as u64).to_le_bytes());
    h.update((t.ncols() as u64).to_le_bytes());
    for v in t.iter() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}
