//! Diagonal Gaussian with state-independent log standard deviations.

use rand::Rng;
use rand_distr::StandardNormal;

const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_8;

/// Sum of per-dimension log densities.
pub fn log_prob(action: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    action
        .iter()
        .zip(mean)
        .zip(log_std)
        .map(|((a, m), s)| {
            let z = (a - m) * (-s).exp();
            -0.5 * z * z - s - HALF_LOG_2PI
        })
        .sum()
}

/// Gradients of [`log_prob`] with respect to the mean and the log-std.
pub fn log_prob_grads(action: &[f64], mean: &[f64], log_std: &[f64]) -> (Vec<f64>, Vec<f64>) {
    action
        .iter()
        .zip(mean)
        .zip(log_std)
        .map(|((a, m), s)| {
            let inv_var = (-2.0 * s).exp();
            let d = a - m;
            (d * inv_var, d * d * inv_var - 1.0)
        })
        .unzip()
}

/// Differential entropy; its gradient is 1 for every log-std component.
pub fn entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|s| s + 0.5 + HALF_LOG_2PI).sum()
}

pub fn sample<R: Rng + ?Sized>(mean: &[f64], log_std: &[f64], rng: &mut R) -> Vec<f64> {
    mean.iter()
        .zip(log_std)
        .map(|(m, s)| {
            let z: f64 = rng.sample(StandardNormal);
            m + s.exp() * z
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_normal_density() {
        let lp = log_prob(&[0.0], &[0.0], &[0.0]);
        assert!((lp - (-(2.0 * std::f64::consts::PI).sqrt().ln())).abs() < 1e-15);
    }

    #[test]
    fn grads_match_differences() {
        let a = [0.3, -1.2];
        let m = [0.1, 0.4];
        let s = [-0.5, 0.2];
        let (dm, ds) = log_prob_grads(&a, &m, &s);
        let h = 1e-6;
        for k in 0..2 {
            let mut mp = m;
            mp[k] += h;
            let mut mm = m;
            mm[k] -= h;
            let num = (log_prob(&a, &mp, &s) - log_prob(&a, &mm, &s)) / (2.0 * h);
            assert!((num - dm[k]).abs() < 1e-8);
            let mut sp = s;
            sp[k] += h;
            let mut sm = s;
            sm[k] -= h;
            let num = (log_prob(&a, &m, &sp) - log_prob(&a, &m, &sm)) / (2.0 * h);
            assert!((num - ds[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn entropy_increases_with_log_std() {
        let mut prev = entropy(&[-3.0, 0.0]);
        for i in 1..50 {
            let e = entropy(&[-3.0 + i as f64 * 0.1, 0.0]);
            assert!(e > prev);
            prev = e;
        }
        // closed form for one unit-variance dimension
        let unit = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
        assert!((entropy(&[0.0]) - unit).abs() < 1e-15);
    }
}
