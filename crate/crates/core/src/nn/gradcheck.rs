//! Central finite-difference gradient checker.
//!
//! Uses only forward evaluations of the loss, so it is independent of every
//! hand-written backward pass it audits.

use super::Parameterized;

/// Denominator floor for the relative error, so gradients that are zero up to
/// roundoff are compared on an absolute scale.
pub const RELATIVE_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// `(parameter, index, analytic, numeric)` at the worst element.
    pub worst: Option<(String, usize, f64, f64)>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares the gradients already accumulated in `model` against central
/// differences of `loss` with step `h`, element by element.
pub fn check_gradients<M, F>(model: &mut M, loss: F, h: f64) -> GradCheckReport
where
    M: Parameterized,
    F: Fn(&M) -> f64,
{
    let analytic: Vec<Vec<f64>> = model.params().iter().map(|p| p.grad.clone()).collect();
    let names: Vec<String> = model.params().iter().map(|p| p.name.clone()).collect();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    for (pi, grads) in analytic.iter().enumerate() {
        for (j, &a) in grads.iter().enumerate() {
            let original = model.params_mut()[pi].values[j];
            model.params_mut()[pi].values[j] = original + h;
            let plus = loss(model);
            model.params_mut()[pi].values[j] = original - h;
            let minus = loss(model);
            model.params_mut()[pi].values[j] = original;

            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err.max(report.max_rel_error);
                if err >= report.max_rel_error {
                    report.worst = Some((names[pi].clone(), j, a, numeric));
                }
            }
        }
    }
    report
}
