use rand::Rng;

use super::{matvec_acc, matvec_t_acc, orthogonal, outer_acc, ParamTensor, Parameterized};
use crate::error::{Error, Result};

/// `y = W x + b` with `W` stored row-major as `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: ParamTensor,
    pub bias: ParamTensor,
}

/// Forward context needed by [`Linear::backward`].
#[derive(Debug, Clone)]
pub struct LinearCache {
    pub input: Vec<f64>,
}

impl Linear {
    pub fn zeros(name: &str, input: usize, output: usize) -> Self {
        Self {
            weight: ParamTensor::zeros(format!("{name}.weight"), &[output, input]),
            bias: ParamTensor::zeros(format!("{name}.bias"), &[output]),
        }
    }

    /// Orthogonal weights scaled by `gain`, zero bias.
    pub fn orthogonal<R: Rng + ?Sized>(name: &str, input: usize, output: usize, gain: f64, rng: &mut R) -> Self {
        let mut layer = Self::zeros(name, input, output);
        layer.weight.values = orthogonal(output, input, gain, rng);
        layer
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, LinearCache)> {
        let y = self.apply(x)?;
        Ok((y, LinearCache { input: x.to_vec() }))
    }

    /// Forward pass without recording a cache.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::shape(
                format!("{} input of length {}", self.weight.name, self.input_dim()),
                x.len(),
            ));
        }
        let mut y = self.bias.values.clone();
        matvec_acc(&self.weight.values, self.input_dim(), x, &mut y);
        Ok(y)
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&mut self, cache: &LinearCache, dy: &[f64]) -> Result<Vec<f64>> {
        if dy.len() != self.output_dim() {
            return Err(Error::shape(self.output_dim(), dy.len()));
        }
        let cols = self.input_dim();
        outer_acc(&mut self.weight.grad, cols, dy, &cache.input);
        for (g, d) in self.bias.grad.iter_mut().zip(dy) {
            *g += d;
        }
        let mut dx = vec![0.0; cols];
        matvec_t_acc(&self.weight.values, cols, dy, &mut dx);
        Ok(dx)
    }
}

impl Parameterized for Linear {
    fn params(&self) -> Vec<&ParamTensor> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}
