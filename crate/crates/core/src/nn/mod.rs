//! Small differentiable toolkit with explicit backward passes.
//!
//! Every layer exposes `forward` returning a cache and `backward` consuming
//! that cache, accumulating into each [`ParamTensor::grad`].

mod adam;
mod checkpoint;
pub mod gaussian;
pub mod gradcheck;
mod init;
mod linear;
mod lstm;
mod param;

pub use adam::{clip_grad_norm, global_grad_norm, Adam, AdamConfig};
pub use checkpoint::{Checkpoint, CheckpointRecord, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use init::orthogonal;
pub use linear::{Linear, LinearCache};
pub use lstm::{LstmCell, LstmSequenceCache, LstmStepCache};
pub use param::{ParamTensor, Parameterized};

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Applies tanh in place.
pub fn tanh_inplace(v: &mut [f64]) {
    for x in v {
        *x = x.tanh();
    }
}

/// Backward through tanh given its output `y`: `dy * (1 - y^2)`.
pub fn tanh_backward(y: &[f64], dy: &[f64]) -> Vec<f64> {
    y.iter().zip(dy).map(|(y, d)| d * (1.0 - y * y)).collect()
}

/// `out += W x` for a row-major `rows x cols` matrix.
#[inline]
pub(crate) fn matvec_acc(w: &[f64], cols: usize, x: &[f64], out: &mut [f64]) {
    for (row, o) in w.chunks_exact(cols).zip(out.iter_mut()) {
        let mut s = 0.0;
        for (a, b) in row.iter().zip(x) {
            s += a * b;
        }
        *o += s;
    }
}

/// `out += W^T d` for a row-major `rows x cols` matrix.
#[inline]
pub(crate) fn matvec_t_acc(w: &[f64], cols: usize, d: &[f64], out: &mut [f64]) {
    for (row, &di) in w.chunks_exact(cols).zip(d) {
        if di == 0.0 {
            continue;
        }
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * di;
        }
    }
}

/// `g += d x^T` for a row-major gradient matrix.
#[inline]
pub(crate) fn outer_acc(g: &mut [f64], cols: usize, d: &[f64], x: &[f64]) {
    for (row, &di) in g.chunks_exact_mut(cols).zip(d) {
        if di == 0.0 {
            continue;
        }
        for (gij, xj) in row.iter_mut().zip(x) {
            *gij += di * xj;
        }
    }
}
