use ndarray::{Array2, Zip};

use crate::model::ToyVlm;

/// Adam with decoupled weight decay over the model's trainable tensors.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: i32,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl AdamW {
    pub fn new(beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        Self { beta1, beta2, eps, weight_decay, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    pub fn step(&mut self, model: &mut ToyVlm, lr: f64) {
        self.step += 1;
        let (b1, b2, eps, wd) = (self.beta1, self.beta2, self.eps, self.weight_decay);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let (ms, vs) = (&mut self.m, &mut self.v);
        let mut i = 0;
        model.visit_trainable_mut(&mut |_, p| {
            if ms.len() == i {
                ms.push(Array2::zeros(p.value.dim()));
                vs.push(Array2::zeros(p.value.dim()));
            }
            Zip::from(&mut p.value).and(&p.grad).and(&mut ms[i]).and(&mut vs[i]).for_each(|w, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *w -= lr * (wd * *w + (*m / c1) / ((*v / c2).sqrt() + eps));
            });
            i += 1;
        });
    }
}

/// Scales trainable gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(model: &mut ToyVlm, max_norm: f64) -> f64 {
    let mut sq = 0.0;
    model.visit_trainable_mut(&mut |_, p| sq += p.grad.iter().map(|g| g * g).sum::<f64>());
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let f = max_norm / norm;
        model.visit_trainable_mut(&mut |_, p| p.grad *= f);
    }
    norm
}
