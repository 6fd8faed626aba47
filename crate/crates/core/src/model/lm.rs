use ndarray::{Array2, Axis};
use rand::Rng;

use super::nn::{join, Block, BlockCache, LayerNorm, LayerNormCache, Linear, Module, Param};
use super::ModelConfig;

/// Decoder-only language model over input embeddings. Token embeddings and
/// learned absolute positions are owned here; visual embeddings are spliced
/// in by the caller.
#[derive(Clone, Debug)]
pub struct CausalLm {
    pub tok_emb: Param,
    pub pos: Param,
    pub blocks: Vec<Block>,
    pub ln_f: LayerNorm,
    pub head: Linear,
    pub trainable: bool,
}

pub struct LmCache {
    blocks: Vec<BlockCache>,
    ln_f: LayerNormCache,
    hidden: Array2<f64>,
}

impl LmCache {
    pub fn hidden(&self) -> &Array2<f64> {
        &self.hidden
    }
}

impl CausalLm {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, cfg: &ModelConfig, vocab_size: usize) -> Self {
        let d = cfg.lm_dim;
        let blocks: Vec<Block> = (0..cfg.lm_blocks)
            .map(|_| Block::new(rng, d, cfg.lm_heads, cfg.mlp_ratio, true))
            .collect();
        let tok_emb = Param::normal(rng, vocab_size, d, 1.0);
        let pos = Param::normal(rng, cfg.max_seq_len, d, 0.1);
        let mut head = Linear::new(rng, d, vocab_size);
        // Small output weights start the model near the uniform distribution.
        head.weight.value *= 0.2;
        Self { tok_emb, pos, blocks, ln_f: LayerNorm::new(d), head, trainable: true }
    }

    pub fn dim(&self) -> usize {
        self.tok_emb.value.ncols()
    }

    pub fn vocab_size(&self) -> usize {
        self.tok_emb.value.nrows()
    }

    pub fn max_len(&self) -> usize {
        self.pos.value.nrows()
    }

    pub fn token_embedding(&self, id: u32) -> ndarray::ArrayView1<'_, f64> {
        self.tok_emb.value.row(id as usize)
    }

    /// Runs the blocks over `x` (positions already added) and returns the
    /// final normalized hidden states.
    pub fn forward(&self, mut x: Array2<f64>) -> LmCache {
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (y, c) = block.forward(x);
            caches.push(c);
            x = y;
        }
        let (hidden, ln_f) = self.ln_f.forward(x.view());
        LmCache { blocks: caches, ln_f, hidden }
    }

    pub fn hidden(&self, mut x: Array2<f64>) -> Array2<f64> {
        for block in &self.blocks {
            x = block.apply(x);
        }
        self.ln_f.forward(x.view()).0
    }

    /// Logits for the selected rows of `hidden`.
    pub fn logits(&self, hidden: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
        let picked = hidden.select(Axis(0), rows);
        self.head.forward(picked.view())
    }

    /// Back-propagates gradients of the selected-row logits down to the
    /// input embeddings. Parameter gradients accumulate only when trainable.
    pub fn backward(&mut self, cache: &LmCache, rows: &[usize], dlogits: &Array2<f64>) -> Array2<f64> {
        let grads = self.trainable;
        let picked = cache.hidden.select(Axis(0), rows);
        let dpicked = self.head.backward(picked.view(), dlogits.view(), grads);
        let mut dhidden = Array2::zeros(cache.hidden.raw_dim());
        for (r, &row) in rows.iter().enumerate() {
            let mut dst = dhidden.row_mut(row);
            dst += &dpicked.row(r);
        }
        let mut dx = self.ln_f.backward(&cache.ln_f, dhidden.view(), grads);
        for (block, c) in self.blocks.iter_mut().zip(&cache.blocks).rev() {
            dx = block.backward(c, dx.view(), grads);
        }
        dx
    }
}

impl Module for CausalLm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "tok_emb"), &self.tok_emb);
        f(&join(prefix, "pos"), &self.pos);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("blocks.{i}")), f);
        }
        self.ln_f.visit(&join(prefix, "ln_f"), f);
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "tok_emb"), &mut self.tok_emb);
        f(&join(prefix, "pos"), &mut self.pos);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("blocks.{i}")), f);
        }
        self.ln_f.visit_mut(&join(prefix, "ln_f"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}
