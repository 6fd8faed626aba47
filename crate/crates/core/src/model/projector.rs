use ndarray::Array2;
use rand::Rng;

use super::nn::{gelu, gelu_backward, join, Linear, Module, Param};
use crate::error::{Error, Result};

/// Two affine maps with a GELU between them, applied to each patch feature
/// independently: `vision_dim → hidden → lm_dim`.
#[derive(Clone, Debug)]
pub struct Projector {
    pub fc1: Linear,
    pub fc2: Linear,
    pub trainable: bool,
}

pub struct ProjectorCache {
    input: Array2<f64>,
    pre_act: Array2<f64>,
    act: Array2<f64>,
}

impl Projector {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, input: usize, hidden: usize, output: usize) -> Self {
        Self {
            fc1: Linear::new(rng, input, hidden),
            fc2: Linear::new(rng, hidden, output),
            trainable: true,
        }
    }

    pub fn zeroed(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            fc1: Linear::zeroed(input, hidden),
            fc2: Linear::zeroed(hidden, output),
            trainable: true,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.fc1.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.fc2.output_dim()
    }

    /// Maps `n × vision_dim` patch features to the `n × lm_dim` visual tokens.
    pub fn project(&self, features: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward(features)?.0)
    }

    pub fn forward(&self, features: &Array2<f64>) -> Result<(Array2<f64>, ProjectorCache)> {
        if features.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "projector expects {} feature columns, got {}",
                self.input_dim(),
                features.ncols()
            )));
        }
        let pre_act = self.fc1.forward(features.view());
        let act = gelu(&pre_act);
        let out = self.fc2.forward(act.view());
        Ok((out, ProjectorCache { input: features.clone(), pre_act, act }))
    }

    /// Returns the gradient with respect to the input features.
    pub fn backward(&mut self, cache: &ProjectorCache, dz: &Array2<f64>) -> Array2<f64> {
        let grads = self.trainable;
        let dact = self.fc2.backward(cache.act.view(), dz.view(), grads);
        let dpre = gelu_backward(&cache.pre_act, dact.view());
        self.fc1.backward(cache.input.view(), dpre.view(), grads)
    }
}

impl Module for Projector {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.fc1.visit_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_mut(&join(prefix, "fc2"), f);
    }
}
