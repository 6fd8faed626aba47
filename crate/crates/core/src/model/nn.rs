//! Dense layers with hand-written backward passes.
//!
//! Every layer keeps its parameters in [`Param`] cells that carry a gradient
//! accumulator of the same shape. Backward passes always return the input
//! gradient; parameter gradients are accumulated only when the caller asks
//! for them, which is how frozen modules stay untouched.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// A weight tensor plus its gradient accumulator.
#[derive(Clone, Debug)]
pub struct Param {
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
}

impl Param {
    pub fn new(value: Array2<f64>) -> Self {
        let grad = Array2::zeros(value.raw_dim());
        Self { value, grad }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(Array2::zeros((rows, cols)))
    }

    pub fn normal<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Self {
        let dist = Normal::new(0.0, std).expect("finite std");
        Self::new(Array2::from_shape_fn((rows, cols), |_| dist.sample(rng)))
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Hierarchical parameter walk. Names are dot-separated paths.
pub trait Module {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param));

    fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, p| p.zero_grad());
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, p| n += p.len());
        n
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Affine map `y = x W + b` applied row-wise. `W` is `in × out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, input: usize, output: usize) -> Self {
        let std = 1.0 / (input as f64).sqrt();
        Self {
            weight: Param::normal(rng, input, output, std),
            bias: Param::zeros(1, output),
        }
    }

    pub fn zeroed(input: usize, output: usize) -> Self {
        Self {
            weight: Param::zeros(input, output),
            bias: Param::zeros(1, output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.value.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.value.ncols()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight.value);
        y += &self.bias.value;
        y
    }

    pub fn backward(&mut self, x: ArrayView2<f64>, dy: ArrayView2<f64>, param_grads: bool) -> Array2<f64> {
        if param_grads {
            general_mat_mul(1.0, &x.t(), &dy, 1.0, &mut self.weight.grad);
            self.bias.grad += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        }
        dy.dot(&self.weight.value.t())
    }
}

impl Module for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: Param,
    pub beta: Param,
}

pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: Param::new(Array2::ones((1, dim))),
            beta: Param::zeros(1, dim),
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> (Array2<f64>, LayerNormCache) {
        let d = x.ncols() as f64;
        let mut xhat = x.to_owned();
        let mut inv_std = Vec::with_capacity(x.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / d;
            row -= mean;
            let var = row.iter().map(|v| v * v).sum::<f64>() / d;
            let is = 1.0 / (var + LN_EPS).sqrt();
            row *= is;
            inv_std.push(is);
        }
        let mut y = &xhat * &self.gamma.value;
        y += &self.beta.value;
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&mut self, cache: &LayerNormCache, dy: ArrayView2<f64>, param_grads: bool) -> Array2<f64> {
        if param_grads {
            self.gamma.grad += &(&dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
            self.beta.grad += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        }
        let d = dy.ncols() as f64;
        let mut dx = &dy * &self.gamma.value;
        for ((mut row, xh), is) in dx.rows_mut().into_iter().zip(cache.xhat.rows()).zip(&cache.inv_std) {
            let mean_g = row.sum() / d;
            let mean_gx = row.iter().zip(xh.iter()).map(|(g, x)| g * x).sum::<f64>() / d;
            row.zip_mut_with(&xh, |g, &x| *g = is * (*g - mean_g - x * mean_gx));
        }
        dx
    }
}

impl Module for LayerNorm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

// libm tanh is several times slower than one exp; accurate to a few ulp.
#[inline]
fn fast_tanh(u: f64) -> f64 {
    1.0 - 2.0 / ((2.0 * u).exp() + 1.0)
}

#[inline]
fn gelu_inner(v: f64) -> f64 {
    fast_tanh(GELU_C * (v + 0.044715 * v * v * v))
}

/// Tanh approximation of GELU.
pub fn gelu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| 0.5 * v * (1.0 + gelu_inner(v)))
}

pub fn gelu_backward(x: &Array2<f64>, dy: ArrayView2<f64>) -> Array2<f64> {
    let mut dx = dy.to_owned();
    dx.zip_mut_with(x, |g, &v| {
        let t = gelu_inner(v);
        let du = GELU_C * (1.0 + 3.0 * 0.044715 * v * v);
        *g *= 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
    });
    dx
}

/// Multi-head self-attention with fused QKV projection.
#[derive(Clone, Debug)]
pub struct Attention {
    pub qkv: Linear,
    pub out: Linear,
    pub heads: usize,
    pub causal: bool,
}

pub struct AttentionCache {
    qkv: Array2<f64>,
    probs: Vec<Array2<f64>>,
    ctx: Array2<f64>,
}

impl Attention {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, dim: usize, heads: usize, causal: bool) -> Self {
        assert!(heads > 0 && dim % heads == 0, "dim {dim} not divisible by {heads} heads");
        Self {
            qkv: Linear::new(rng, dim, 3 * dim),
            out: Linear::new(rng, dim, dim),
            heads,
            causal,
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> (Array2<f64>, AttentionCache) {
        let t = x.nrows();
        let d = x.ncols();
        let hd = d / self.heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let qkv = self.qkv.forward(x);
        let mut ctx = Array2::zeros((t, d));
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let q = qkv.slice(s![.., h * hd..(h + 1) * hd]);
            let k = qkv.slice(s![.., d + h * hd..d + (h + 1) * hd]);
            let v = qkv.slice(s![.., 2 * d + h * hd..2 * d + (h + 1) * hd]);
            let mut p = q.dot(&k.t());
            for (i, mut row) in p.rows_mut().into_iter().enumerate() {
                let visible = if self.causal { i + 1 } else { t };
                let mut max = f64::NEG_INFINITY;
                for v in row.iter_mut().take(visible) {
                    *v *= scale;
                    max = max.max(*v);
                }
                let mut sum = 0.0;
                for v in row.iter_mut().take(visible) {
                    *v = (*v - max).exp();
                    sum += *v;
                }
                for (j, v) in row.iter_mut().enumerate() {
                    if j < visible {
                        *v /= sum;
                    } else {
                        *v = 0.0;
                    }
                }
            }
            ctx.slice_mut(s![.., h * hd..(h + 1) * hd]).assign(&p.dot(&v));
            probs.push(p);
        }
        let y = self.out.forward(ctx.view());
        (y, AttentionCache { qkv, probs, ctx })
    }

    pub fn backward(
        &mut self,
        x: ArrayView2<f64>,
        cache: &AttentionCache,
        dy: ArrayView2<f64>,
        param_grads: bool,
    ) -> Array2<f64> {
        let t = x.nrows();
        let d = x.ncols();
        let hd = d / self.heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let dctx = self.out.backward(cache.ctx.view(), dy, param_grads);
        let mut dqkv = Array2::zeros((t, 3 * d));
        for h in 0..self.heads {
            let q = cache.qkv.slice(s![.., h * hd..(h + 1) * hd]);
            let k = cache.qkv.slice(s![.., d + h * hd..d + (h + 1) * hd]);
            let v = cache.qkv.slice(s![.., 2 * d + h * hd..2 * d + (h + 1) * hd]);
            let p = &cache.probs[h];
            let dout = dctx.slice(s![.., h * hd..(h + 1) * hd]);
            let dv = p.t().dot(&dout);
            let mut ds = dout.dot(&v.t());
            for (mut drow, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
                let dot: f64 = drow.iter().zip(prow.iter()).map(|(a, b)| a * b).sum();
                drow.zip_mut_with(&prow, |g, &pv| *g = pv * (*g - dot) * scale);
            }
            let dq = ds.dot(&k);
            let dk = ds.t().dot(&q);
            dqkv.slice_mut(s![.., h * hd..(h + 1) * hd]).assign(&dq);
            dqkv.slice_mut(s![.., d + h * hd..d + (h + 1) * hd]).assign(&dk);
            dqkv.slice_mut(s![.., 2 * d + h * hd..2 * d + (h + 1) * hd]).assign(&dv);
        }
        self.qkv.backward(x, dqkv.view(), param_grads)
    }
}

impl Module for Attention {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.qkv.visit(&join(prefix, "qkv"), f);
        self.out.visit(&join(prefix, "out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.qkv.visit_mut(&join(prefix, "qkv"), f);
        self.out.visit_mut(&join(prefix, "out"), f);
    }
}

/// Pre-norm transformer block: `x + attn(ln(x))`, then `x + mlp(ln(x))`.
#[derive(Clone, Debug)]
pub struct Block {
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub ln2: LayerNorm,
    pub fc: Linear,
    pub proj: Linear,
}

pub struct BlockCache {
    ln1: LayerNormCache,
    a_in: Array2<f64>,
    attn: AttentionCache,
    ln2: LayerNormCache,
    m_in: Array2<f64>,
    pre_act: Array2<f64>,
    act: Array2<f64>,
}

impl Block {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, dim: usize, heads: usize, mlp_ratio: usize, causal: bool) -> Self {
        Self {
            ln1: LayerNorm::new(dim),
            attn: Attention::new(rng, dim, heads, causal),
            ln2: LayerNorm::new(dim),
            fc: Linear::new(rng, dim, dim * mlp_ratio),
            proj: Linear::new(rng, dim * mlp_ratio, dim),
        }
    }

    pub fn forward(&self, x: Array2<f64>) -> (Array2<f64>, BlockCache) {
        let (a_in, ln1) = self.ln1.forward(x.view());
        let (a_out, attn) = self.attn.forward(a_in.view());
        let mid = &x + &a_out;
        let (m_in, ln2) = self.ln2.forward(mid.view());
        let pre_act = self.fc.forward(m_in.view());
        let act = gelu(&pre_act);
        let y = &mid + &self.proj.forward(act.view());
        let cache = BlockCache { ln1, a_in, attn, ln2, m_in, pre_act, act };
        (y, cache)
    }

    /// Inference-only forward that drops the cache.
    pub fn apply(&self, x: Array2<f64>) -> Array2<f64> {
        self.forward(x).0
    }

    pub fn backward(&mut self, cache: &BlockCache, dy: ArrayView2<f64>, param_grads: bool) -> Array2<f64> {
        let dact = self.proj.backward(cache.act.view(), dy, param_grads);
        let dpre = gelu_backward(&cache.pre_act, dact.view());
        let dm_in = self.fc.backward(cache.m_in.view(), dpre.view(), param_grads);
        let mut dmid = self.ln2.backward(&cache.ln2, dm_in.view(), param_grads);
        dmid += &dy;
        let da_in = self.attn.backward(cache.a_in.view(), &cache.attn, dmid.view(), param_grads);
        let mut dx = self.ln1.backward(&cache.ln1, da_in.view(), param_grads);
        dx += &dmid;
        dx
    }
}

impl Module for Block {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.ln1.visit(&join(prefix, "ln1"), f);
        self.attn.visit(&join(prefix, "attn"), f);
        self.ln2.visit(&join(prefix, "ln2"), f);
        self.fc.visit(&join(prefix, "mlp.fc"), f);
        self.proj.visit(&join(prefix, "mlp.proj"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.ln1.visit_mut(&join(prefix, "ln1"), f);
        self.attn.visit_mut(&join(prefix, "attn"), f);
        self.ln2.visit_mut(&join(prefix, "ln2"), f);
        self.fc.visit_mut(&join(prefix, "mlp.fc"), f);
        self.proj.visit_mut(&join(prefix, "mlp.proj"), f);
    }
}

/// Numerically stable log-softmax of one logit row.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}
