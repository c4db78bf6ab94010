use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

/// Row-major `rows x cols` matrix with orthonormal rows or columns (whichever
/// is shorter), scaled by `gain`.
pub fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Vec<f64> {
    let (tall, short) = (rows.max(cols), rows.min(cols));
    if short == 0 {
        return vec![0.0; rows * cols];
    }
    let a = DMatrix::<f64>::from_fn(tall, short, |_, _| rng.sample(StandardNormal));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..short {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            // q is tall x short; transpose when the target is wide
            out[i * cols + j] = gain * if rows >= cols { q[(i, j)] } else { q[(j, i)] };
        }
    }
    out
}
