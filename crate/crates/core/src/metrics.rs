//! Objective values, gap reports and the offline rounding bound.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `V(d) = (1/T) Σ (d(t) − mean d)²`.
pub fn variance_objective(d: &[f64]) -> f64 {
    if d.is_empty() {
        return 0.0;
    }
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

/// `(2/(T N²)) Σ ‖p_n‖²` over the final profiles of the discrete DAs.
pub fn offline_bound<'a>(slots: usize, population: usize, discrete: impl IntoIterator<Item = &'a [f64]>) -> f64 {
    let sq: f64 = discrete
        .into_iter()
        .map(|p| p.iter().map(|x| x * x).sum::<f64>())
        .sum();
    if sq == 0.0 {
        return 0.0;
    }
    let n = population as f64;
    2.0 * sq / (slots as f64 * n * n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub v_subject: f64,
    pub v_reference: f64,
    pub absolute_gap: f64,
    /// Absent when the reference objective is zero.
    pub relative_gap: Option<f64>,
    pub bound: Option<f64>,
    pub bound_satisfied: bool,
}

/// Slack allowed when comparing an absolute gap with a bound.
pub const BOUND_SLACK: f64 = 1e-9;

pub fn gap_report(v_subject: f64, v_reference: f64, bound: Option<f64>) -> GapReport {
    let absolute_gap = v_subject - v_reference;
    GapReport {
        v_subject,
        v_reference,
        absolute_gap,
        relative_gap: (v_reference > 0.0).then(|| absolute_gap / v_reference),
        bound,
        bound_satisfied: bound.is_none_or(|b| absolute_gap <= b + BOUND_SLACK),
    }
}

impl GapReport {
    /// The relative gap, or [`Error::ZeroReference`] against a flat reference.
    pub fn relative(&self) -> Result<f64> {
        self.relative_gap.ok_or(Error::ZeroReference {
            absolute_gap: self.absolute_gap,
        })
    }
}

/// Sample mean and standard error of the mean.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}
