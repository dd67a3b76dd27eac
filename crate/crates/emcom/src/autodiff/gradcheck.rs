//! Central-finite-difference gradient checking (f64).

use super::tape::{Tape, ValueId};
use super::tensor::Tensor;

/// Outcome of a gradient check over all parameter coordinates.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// max over coordinates of |analytic - numeric| / max(1, |analytic|)
    pub max_relative_error: f64,
    /// (param index, coordinate) attaining the max.
    pub worst: Option<(usize, usize)>,
    /// Coordinates where either side was NaN, as (param, coord).
    pub nan_failures: Vec<(usize, usize)>,
}

impl GradCheckReport {
    pub fn ok(&self, tol: f64) -> bool {
        self.nan_failures.is_empty() && self.max_relative_error <= tol
    }
}

/// Compare reverse-mode gradients of a scalar function against central
/// differences with step `h`, coordinate by coordinate.
///
/// `f` must be a deterministic function of the leaves it is handed; it is
/// re-evaluated 2·n times for n total coordinates.
pub fn grad_check<F>(f: F, params: &[Tensor<f64>], h: f64) -> GradCheckReport
where
    F: Fn(&mut Tape<f64>, &[ValueId]) -> ValueId,
{
    // Analytic pass.
    let mut tape = Tape::new();
    let ids: Vec<ValueId> = params
        .iter()
        .map(|p| tape.leaf(p.clone().with_grad()))
        .collect();
    let root = f(&mut tape, &ids);
    let mut grads = tape.backward(root);
    let analytic: Vec<Tensor<f64>> = ids
        .iter()
        .zip(params)
        .map(|(id, p)| {
            grads
                .take(*id)
                .unwrap_or_else(|| Tensor::zeros(p.shape().to_vec()))
        })
        .collect();

    let eval = |perturbed: &[Tensor<f64>]| -> f64 {
        let mut t = Tape::new();
        let ids: Vec<ValueId> = perturbed.iter().map(|p| t.constant(p.clone())).collect();
        let out = f(&mut t, &ids);
        t.value(out).item()
    };

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        nan_failures: Vec::new(),
    };

    let mut work: Vec<Tensor<f64>> = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        for ci in 0..p.numel() {
            let orig = p.data()[ci];
            work[pi].data_mut()[ci] = orig + h;
            let up = eval(&work);
            work[pi].data_mut()[ci] = orig - h;
            let down = eval(&work);
            work[pi].data_mut()[ci] = orig;

            let numeric = (up - down) / (2.0 * h);
            let a = analytic[pi].data()[ci];
            if !numeric.is_finite() || !a.is_finite() {
                report.nan_failures.push((pi, ci));
                continue;
            }
            let rel = (a - numeric).abs() / a.abs().max(1.0);
            if rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst = Some((pi, ci));
            }
        }
    }
    report
}
