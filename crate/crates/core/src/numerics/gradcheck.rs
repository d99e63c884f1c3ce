//! Central finite-difference oracle for analytic gradients.

use super::rng::Rng;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Which coordinates of each parameter tensor to probe.
#[derive(Clone, Copy, Debug)]
pub enum Coverage {
    All,
    /// At most this many coordinates per tensor, picked with the given seed.
    Sample { per_tensor: usize, seed: u64 },
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `(tensor index, flat coordinate)` where the maximum occurred.
    pub worst: Option<(usize, usize)>,
    /// Analytic and numeric derivative at `worst`.
    pub worst_values: (f64, f64),
    pub coordinates_checked: usize,
    /// Probes whose stencil crossed a kink; not part of the error.
    pub kinks_skipped: usize,
}

/// Compares `analytic` against central differences of `f` at `params`.
///
/// The error for one coordinate is
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`; the report
/// carries the maximum over every probed coordinate.
pub fn grad_check<F>(
    mut f: F,
    params: &[Tensor],
    analytic: &[Tensor],
    epsilon: f64,
    coverage: Coverage,
) -> Result<GradCheckReport>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
{
    grad_check_piecewise(|p| Ok((f(p)?, Vec::new())), params, analytic, epsilon, coverage)
}

/// Like [`grad_check`] for piecewise-smooth `f`. Alongside its value, `f`
/// returns the pattern of its branch conditions (for example the signs of
/// every ReLU input). A coordinate whose `±epsilon` stencil changes the
/// pattern straddles a kink, where a central difference does not estimate
/// the derivative; it is counted in `kinks_skipped` instead of the error.
pub fn grad_check_piecewise<F>(
    mut f: F,
    params: &[Tensor],
    analytic: &[Tensor],
    epsilon: f64,
    coverage: Coverage,
) -> Result<GradCheckReport>
where
    F: FnMut(&[Tensor]) -> Result<(f64, Vec<bool>)>,
{
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    if params.len() != analytic.len() {
        return Err(Error::shape("grad_check", "one analytic gradient per parameter"));
    }
    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        worst_values: (0.0, 0.0),
        coordinates_checked: 0,
        kinks_skipped: 0,
    };
    let mut sampler = match coverage {
        Coverage::Sample { seed, .. } => Some(Rng::new(seed)),
        Coverage::All => None,
    };

    for (t, (p, a)) in params.iter().zip(analytic).enumerate() {
        if p.shape() != a.shape() {
            return Err(Error::shape("grad_check", format!("gradient {t} shape")));
        }
        let coords: Vec<usize> = match (coverage, sampler.as_mut()) {
            (Coverage::Sample { per_tensor, .. }, Some(rng)) if per_tensor < p.numel() => {
                rng.sample_indices(p.numel(), per_tensor)
            }
            _ => (0..p.numel()).collect(),
        };
        for k in coords {
            let orig = p.data()[k];
            work[t].data_mut()[k] = orig + epsilon;
            let (plus, plus_pattern) = f(&work)?;
            work[t].data_mut()[k] = orig - epsilon;
            let (minus, minus_pattern) = f(&work)?;
            work[t].data_mut()[k] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!("loss during grad check of tensor {t}")));
            }
            if plus_pattern != minus_pattern {
                report.kinks_skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * epsilon);
            let an = a.data()[k];
            let rel = (an - numeric).abs() / an.abs().max(numeric.abs()).max(1e-8);
            report.coordinates_checked += 1;
            if rel > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = rel.max(report.max_relative_error);
                report.worst = Some((t, k));
                report.worst_values = (an, numeric);
            }
        }
    }
    Ok(report)
}
