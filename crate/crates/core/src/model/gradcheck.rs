//! Finite-difference verification of the analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::masking::MaskPlan;
use crate::model::network::{forward_tokens, loss_and_grads, masked_mse_loss, ModelState};
use crate::tokenizer::TokenField;

pub const FD_STEP: f64 = 1e-4;
/// Denominator floor for the relative error, so gradients that vanish
/// analytically and numerically compare in absolute terms.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradSample {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Checked entries, worst first.
    pub samples: Vec<GradSample>,
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

/// Compares analytic gradients of the masked loss with central differences
/// on `count` parameter entries drawn uniformly (without replacement) from
/// the whole model.
pub fn grad_check(
    state: &ModelState,
    tokens: &TokenField,
    plan: &MaskPlan,
    count: usize,
    tolerance: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let (_, grads) = loss_and_grads(state, tokens, plan)?;
    let total = state.num_scalars();
    let count = count.min(total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offsets: Vec<usize> = state.params().iter().map(|p| p.value.len()).collect();
    let mut work = state.clone();
    let mut samples = Vec::with_capacity(count);
    for flat in sample(&mut rng, total, count).into_iter() {
        let (mut pi, mut idx) = (0, flat);
        while idx >= offsets[pi] {
            idx -= offsets[pi];
            pi += 1;
        }
        let orig = work.params()[pi].value.data[idx];
        let mut eval = |v: f64| -> Result<f64> {
            work.params_mut()[pi].value.data[idx] = v;
            let recon = forward_tokens(&work, tokens, plan)?;
            masked_mse_loss(&recon, tokens, plan)
        };
        let up = eval(orig + FD_STEP)?;
        let down = eval(orig - FD_STEP)?;
        eval(orig)?;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let analytic = grads[pi].data[idx];
        samples.push(GradSample {
            param: state.params()[pi].name.clone(),
            index: idx,
            analytic,
            numeric,
            rel_error: relative_error(analytic, numeric),
        });
    }
    samples.sort_by(|a, b| b.rel_error.total_cmp(&a.rel_error));
    let max_rel_error = samples.first().map_or(0.0, |s| s.rel_error);
    if max_rel_error > tolerance {
        let worst = samples
            .iter()
            .take(5)
            .map(|s| {
                format!(
                    "{}[{}] analytic {:.6e} numeric {:.6e}",
                    s.param, s.index, s.analytic, s.numeric
                )
            })
            .collect::<Vec<_>>()
            .join("; ");
        return Err(Error::GradCheck {
            max_rel_error,
            tolerance,
            worst,
        });
    }
    Ok(GradCheckReport {
        checked: samples.len(),
        max_rel_error,
        samples,
    })
}
