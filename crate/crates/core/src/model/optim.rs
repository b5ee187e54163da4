use crate::error::{Error, Result};
use crate::model::matrix::Matrix;
use crate::model::network::Param;

/// Linear warmup to `peak`, then cosine decay reaching zero on the last
/// step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl LrSchedule {
    pub fn new(peak: f64, warmup_steps: u64, total_steps: u64) -> Self {
        LrSchedule {
            peak,
            warmup_steps: warmup_steps.min(total_steps),
            total_steps,
        }
    }

    pub fn lr(&self, step: u64) -> f64 {
        let w = self.warmup_steps;
        if step < w {
            return self.peak * (step + 1) as f64 / w as f64;
        }
        let span = self.total_steps.saturating_sub(w + 1);
        if span == 0 {
            return if step + 1 >= self.total_steps {
                0.0
            } else {
                self.peak
            };
        }
        let progress = ((step - w) as f64 / span as f64).min(1.0);
        0.5 * self.peak * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// AdamW with decoupled weight decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
        }
    }
}

impl AdamW {
    /// Applies update number `t` (1-based) to every parameter. Nothing is
    /// modified when any gradient entry is non-finite.
    pub fn step(
        &self,
        params: &mut [Param],
        grads: &[Matrix],
        lr: f64,
        weight_decay: f64,
        t: u64,
    ) -> Result<()> {
        assert_eq!(params.len(), grads.len());
        check_finite(params, grads)?;
        let bc1 = 1.0 - self.beta1.powf(t as f64);
        let bc2 = 1.0 - self.beta2.powf(t as f64);
        for (p, g) in params.iter_mut().zip(grads) {
            let decay = if p.decays() { lr * weight_decay } else { 0.0 };
            let Param { value, m, v, .. } = p;
            for i in 0..value.data.len() {
                let gi = g.data[i];
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * gi;
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = m.data[i] / bc1;
                let vhat = v.data[i] / bc2;
                value.data[i] -= decay * value.data[i];
                value.data[i] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

pub(crate) fn check_finite(params: &[Param], grads: &[Matrix]) -> Result<()> {
    for (p, g) in params.iter().zip(grads) {
        let bad: Vec<usize> = g
            .data
            .iter()
            .enumerate()
            .filter(|(_, v)| !v.is_finite())
            .map(|(i, _)| i)
            .collect();
        if let Some(&first_index) = bad.first() {
            return Err(Error::NonFiniteGradient {
                param: p.name.clone(),
                count: bad.len(),
                first_index,
            });
        }
    }
    Ok(())
}
