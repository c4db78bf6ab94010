use rand::Rng;

use super::{matvec_acc, matvec_t_acc, orthogonal, outer_acc, sigmoid, ParamTensor, Parameterized};
use crate::error::{Error, Result};

/// Standard LSTM cell. Gate blocks are stacked `[input, forget, cell, output]`
/// along the first weight axis.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    pub w_ih: ParamTensor,
    pub w_hh: ParamTensor,
    pub bias: ParamTensor,
}

#[derive(Debug, Clone)]
pub struct LstmStepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Activated gates `[i, f, g, o]`.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

/// Per-step caches of a sequence unrolled from zero state.
#[derive(Debug, Clone, Default)]
pub struct LstmSequenceCache {
    pub steps: Vec<LstmStepCache>,
}

impl LstmCell {
    pub fn zeros(name: &str, input: usize, hidden: usize) -> Self {
        Self {
            w_ih: ParamTensor::zeros(format!("{name}.w_ih"), &[4 * hidden, input]),
            w_hh: ParamTensor::zeros(format!("{name}.w_hh"), &[4 * hidden, hidden]),
            bias: ParamTensor::zeros(format!("{name}.bias"), &[4 * hidden]),
        }
    }

    /// Orthogonal input and recurrent weights, zero bias except forget gate = 1.
    pub fn init<R: Rng + ?Sized>(name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut cell = Self::zeros(name, input, hidden);
        cell.w_ih.values = orthogonal(4 * hidden, input, 1.0, rng);
        cell.w_hh.values = orthogonal(4 * hidden, hidden, 1.0, rng);
        cell.bias.values[hidden..2 * hidden].fill(1.0);
        cell
    }

    pub fn input_dim(&self) -> usize {
        self.w_ih.shape[1]
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_hh.shape[1]
    }

    pub fn step(&self, x: &[f64], h: &[f64], c: &[f64]) -> Result<(Vec<f64>, Vec<f64>, LstmStepCache)> {
        let hd = self.hidden_dim();
        if x.len() != self.input_dim() {
            return Err(Error::shape(
                format!("{} input of length {}", self.w_ih.name, self.input_dim()),
                x.len(),
            ));
        }
        if h.len() != hd || c.len() != hd {
            return Err(Error::shape(format!("hidden/cell of length {hd}"), format!("{}/{}", h.len(), c.len())));
        }
        let mut z = self.bias.values.clone();
        matvec_acc(&self.w_ih.values, self.input_dim(), x, &mut z);
        matvec_acc(&self.w_hh.values, hd, h, &mut z);
        for (j, v) in z.iter_mut().enumerate() {
            *v = if (2 * hd..3 * hd).contains(&j) { v.tanh() } else { sigmoid(*v) };
        }
        let (i, rest) = z.split_at(hd);
        let (f, rest) = rest.split_at(hd);
        let (g, o) = rest.split_at(hd);
        let mut c_new = vec![0.0; hd];
        let mut h_new = vec![0.0; hd];
        let mut tanh_c = vec![0.0; hd];
        for k in 0..hd {
            c_new[k] = f[k] * c[k] + i[k] * g[k];
            tanh_c[k] = c_new[k].tanh();
            h_new[k] = o[k] * tanh_c[k];
        }
        let cache = LstmStepCache {
            x: x.to_vec(),
            h_prev: h.to_vec(),
            c_prev: c.to_vec(),
            gates: z,
            tanh_c,
        };
        Ok((h_new, c_new, cache))
    }

    /// Backward through one step given gradients on `h'` and `c'`.
    /// Returns `(dx, dh_prev, dc_prev)`.
    pub fn step_backward(
        &mut self,
        cache: &LstmStepCache,
        dh: &[f64],
        dc_next: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let hd = self.hidden_dim();
        let g = &cache.gates;
        let mut dz = vec![0.0; 4 * hd];
        let mut dc_prev = vec![0.0; hd];
        for k in 0..hd {
            let (i, f, gg, o) = (g[k], g[hd + k], g[2 * hd + k], g[3 * hd + k]);
            let tc = cache.tanh_c[k];
            let d_o = dh[k] * tc;
            let dc = dc_next[k] + dh[k] * o * (1.0 - tc * tc);
            dz[k] = dc * gg * i * (1.0 - i);
            dz[hd + k] = dc * cache.c_prev[k] * f * (1.0 - f);
            dz[2 * hd + k] = dc * i * (1.0 - gg * gg);
            dz[3 * hd + k] = d_o * o * (1.0 - o);
            dc_prev[k] = dc * f;
        }
        let input = self.input_dim();
        outer_acc(&mut self.w_ih.grad, input, &dz, &cache.x);
        outer_acc(&mut self.w_hh.grad, hd, &dz, &cache.h_prev);
        for (b, d) in self.bias.grad.iter_mut().zip(&dz) {
            *b += d;
        }
        let mut dx = vec![0.0; input];
        matvec_t_acc(&self.w_ih.values, input, &dz, &mut dx);
        let mut dh_prev = vec![0.0; hd];
        matvec_t_acc(&self.w_hh.values, hd, &dz, &mut dh_prev);
        (dx, dh_prev, dc_prev)
    }

    /// Runs the sequence oldest-first from zero state; returns the final hidden state.
    pub fn forward_sequence(&self, xs: &[Vec<f64>]) -> Result<(Vec<f64>, LstmSequenceCache)> {
        let hd = self.hidden_dim();
        let mut h = vec![0.0; hd];
        let mut c = vec![0.0; hd];
        let mut steps = Vec::with_capacity(xs.len());
        for x in xs {
            let (h2, c2, cache) = self.step(x, &h, &c)?;
            h = h2;
            c = c2;
            steps.push(cache);
        }
        Ok((h, LstmSequenceCache { steps }))
    }

    /// Backpropagation through time from a gradient on the final hidden state.
    /// Returns input gradients in sequence order.
    pub fn backward_sequence(&mut self, cache: &LstmSequenceCache, dh_last: &[f64]) -> Result<Vec<Vec<f64>>> {
        if cache.steps.is_empty() {
            return Err(Error::NoForward);
        }
        let hd = self.hidden_dim();
        if dh_last.len() != hd {
            return Err(Error::shape(hd, dh_last.len()));
        }
        let mut dh = dh_last.to_vec();
        let mut dc = vec![0.0; hd];
        let mut dxs = vec![Vec::new(); cache.steps.len()];
        for (t, step) in cache.steps.iter().enumerate().rev() {
            let (dx, dh_prev, dc_prev) = self.step_backward(step, &dh, &dc);
            dxs[t] = dx;
            dh = dh_prev;
            dc = dc_prev;
        }
        Ok(dxs)
    }
}

impl Parameterized for LstmCell {
    fn params(&self) -> Vec<&ParamTensor> {
        vec![&self.w_ih, &self.w_hh, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        vec![&mut self.w_ih, &mut self.w_hh, &mut self.bias]
    }
}
