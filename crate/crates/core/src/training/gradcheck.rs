use crate::error::{Error, Result};
use crate::model::{Chunk, LanguageModel};
use crate::params::Parameters;

use super::chunk_loss;

/// Magnitudes below this are compared on an absolute scale:
/// `rel = |a - n| / max(|a|, |n|, floor)`.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Tensor name, flat index, analytic and numeric value of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
    pub checked: usize,
}

/// Compares analytic gradients against central differences over every
/// trainable scalar.
pub fn grad_check(model: &LanguageModel<f64>, chunk: &Chunk, epsilon: f64) -> Result<GradCheckReport> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidEpsilon);
    }
    let (_, grads) = super::loss_and_grads(model, chunk)?;
    grad_check_against(model, chunk, epsilon, &grads)
}

/// Like [`grad_check`], against caller-supplied gradients.
pub fn grad_check_against(
    model: &LanguageModel<f64>,
    chunk: &Chunk,
    epsilon: f64,
    analytic: &LanguageModel<f64>,
) -> Result<GradCheckReport> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidEpsilon);
    }
    let state = model.zero_state(chunk.batch);
    let mut probe = model.clone();
    let analytic: Vec<(String, Vec<f64>)> =
        analytic.params().into_iter().map(|p| (p.name, p.data.to_vec())).collect();
    let count = probe.params().len();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for pi in 0..count {
        let len = probe.params()[pi].data.len();
        for j in 0..len {
            if probe.params()[pi].frozen.is_frozen(j) {
                continue;
            }
            let orig = probe.params()[pi].data[j];
            probe.params_mut()[pi].data[j] = orig + epsilon;
            let up = chunk_loss(&probe, chunk, &state)?;
            probe.params_mut()[pi].data[j] = orig - epsilon;
            let down = chunk_loss(&probe, chunk, &state)?;
            probe.params_mut()[pi].data[j] = orig;

            let numeric = (up - down) / (2.0 * epsilon);
            let a = analytic[pi].1[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel.max(report.max_rel_error);
                if rel >= report.max_rel_error {
                    report.worst = Some((analytic[pi].0.clone(), j, a, numeric));
                }
            }
        }
    }
    Ok(report)
}
