use crate::density::{DensityFrame, DensitySequence};
use crate::error::{Error, Result};

/// Smoothing mass added to every pixel before normalization.
pub const DEFAULT_EPSILON: f64 = 1e-12;

/// Per-step and aggregate divergences of a forecast against ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub per_step_js: Vec<f64>,
    pub ad_js: f64,
    pub fd_js: f64,
}

impl MetricReport {
    pub fn from_steps(per_step_js: Vec<f64>) -> Result<Self> {
        let Some(&fd_js) = per_step_js.last() else {
            return Err(Error::param("metric report needs at least one step"));
        };
        let ad_js = per_step_js.iter().sum::<f64>() / per_step_js.len() as f64;
        Ok(MetricReport {
            per_step_js,
            ad_js,
            fd_js,
        })
    }
}

/// Turns a frame into a probability grid after adding `epsilon` to each pixel.
pub fn normalize_map(frame: &DensityFrame, epsilon: f64) -> Vec<f64> {
    let mut p: Vec<f64> = frame.values().iter().map(|&v| v as f64 + epsilon).collect();
    let sum: f64 = p.iter().sum();
    if sum > 0.0 {
        p.iter_mut().for_each(|v| *v /= sum);
    } else {
        let u = 1.0 / p.len() as f64;
        p.iter_mut().for_each(|v| *v = u);
    }
    p
}

fn check_shapes(g: &DensityFrame, c: &DensityFrame) -> Result<()> {
    if g.width() != c.width() || g.height() != c.height() {
        return Err(Error::param(format!(
            "frame shapes differ: {}x{} vs {}x{}",
            g.width(),
            g.height(),
            c.width(),
            c.height()
        )));
    }
    Ok(())
}

/// `(1 / WH) * sum p log(p / q)` over already-normalized grids.
fn kl_normalized(p: &[f64], q: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            acc += pi * (pi / qi).ln();
        }
    }
    (acc / p.len() as f64).max(0.0)
}

/// KL divergence between the normalized maps, including the `1 / (W H)`
/// prefactor.
pub fn kl_divergence(g: &DensityFrame, c: &DensityFrame, epsilon: f64) -> Result<f64> {
    check_shapes(g, c)?;
    Ok(kl_normalized(
        &normalize_map(g, epsilon),
        &normalize_map(c, epsilon),
    ))
}

/// Symmetrized KL: `(KL(g||c) + KL(c||g)) / 2`.
pub fn js_divergence(g: &DensityFrame, c: &DensityFrame, epsilon: f64) -> Result<f64> {
    check_shapes(g, c)?;
    let p = normalize_map(g, epsilon);
    let q = normalize_map(c, epsilon);
    Ok(0.5 * (kl_normalized(&p, &q) + kl_normalized(&q, &p)))
}

pub fn score_forecast(
    pred: &DensitySequence,
    gt: &DensitySequence,
    epsilon: f64,
) -> Result<MetricReport> {
    if pred.len() != gt.len() {
        return Err(Error::param(format!(
            "forecast has {} steps, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    let steps = pred
        .frames()
        .iter()
        .zip(gt.frames())
        .map(|(p, g)| js_divergence(p, g, epsilon))
        .collect::<Result<Vec<_>>>()?;
    MetricReport::from_steps(steps)
}
