//! Token masking for training and inference.
//!
//! A mask plan is the union of a *frame mask* (whole temporal slices, which
//! defines the task) and per-slice *temporal-density-aware* masks on the
//! remaining slices: the number of tokens masked in a slice follows a
//! ratio schedule over the slice index, and which tokens get masked is drawn
//! without replacement with probabilities `softmax(d / tau)` over the
//! slice's accumulated densities.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::density::{DensityFrame, DensitySequence, DEFAULT_FRAME_INTERVAL};
use crate::error::{Error, Result};
use crate::tokenizer::{CubeGrid, DensityTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskTask {
    FuturePrediction,
    PastPrediction,
    Interpolation,
}

impl MaskTask {
    pub const ALL: [MaskTask; 3] = [
        MaskTask::FuturePrediction,
        MaskTask::PastPrediction,
        MaskTask::Interpolation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MaskTask::FuturePrediction => "future_prediction",
            MaskTask::PastPrediction => "past_prediction",
            MaskTask::Interpolation => "interpolation",
        }
    }

    /// Position in task-weight arrays.
    pub fn index(self) -> usize {
        match self {
            MaskTask::FuturePrediction => 0,
            MaskTask::PastPrediction => 1,
            MaskTask::Interpolation => 2,
        }
    }
}

/// Shape of the masking-ratio schedule over slice indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TmFunction {
    /// Fixed ratio for every slice.
    Constant,
    Sqrt,
    Linear,
    Square,
    Cubic,
    /// `1 - exp(-lambda u)`.
    #[default]
    Exponential,
}

impl TmFunction {
    pub const ALL: [TmFunction; 6] = [
        TmFunction::Constant,
        TmFunction::Sqrt,
        TmFunction::Linear,
        TmFunction::Square,
        TmFunction::Cubic,
        TmFunction::Exponential,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TmFunction::Constant => "constant",
            TmFunction::Sqrt => "sqrt",
            TmFunction::Linear => "linear",
            TmFunction::Square => "square",
            TmFunction::Cubic => "cubic",
            TmFunction::Exponential => "exponential",
        }
    }

    /// Ratio at normalized position `u` in `[0, 1]`. Polynomial shapes are
    /// scaled to share the exponential schedule's value at `u = 1`.
    pub fn eval(self, u: f64, lambda: f64, constant_ratio: f64) -> f64 {
        let peak = 1.0 - (-lambda).exp();
        match self {
            TmFunction::Constant => constant_ratio,
            TmFunction::Sqrt => peak * u.sqrt(),
            TmFunction::Linear => peak * u,
            TmFunction::Square => peak * u * u,
            TmFunction::Cubic => peak * u * u * u,
            TmFunction::Exponential => 1.0 - (-lambda * u).exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TdmConfig {
    pub lambda_max: f64,
    pub tau: f64,
    /// Sampling weights for future prediction, past prediction, interpolation.
    pub task_weights: [f64; 3],
    /// Draw lambda for every batch instead of once per epoch.
    pub lambda_per_batch: bool,
    pub tm_function: TmFunction,
    /// Ratio used by [`TmFunction::Constant`].
    pub constant_ratio: f64,
    /// When off, tokens within a slice are drawn uniformly.
    pub density_aware: bool,
}

impl Default for TdmConfig {
    fn default() -> Self {
        TdmConfig {
            lambda_max: 9.0,
            tau: 500.0,
            task_weights: [1.0 / 3.0; 3],
            lambda_per_batch: false,
            tm_function: TmFunction::Exponential,
            constant_ratio: 0.5,
            density_aware: true,
        }
    }
}

impl TdmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_max.is_finite() && self.lambda_max >= 0.0) {
            return Err(Error::param(format!(
                "lambda_max must be >= 0, got {}",
                self.lambda_max
            )));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::param(format!("tau must be > 0, got {}", self.tau)));
        }
        validate_weights(&self.task_weights)?;
        if !(0.0..1.0).contains(&self.constant_ratio) {
            return Err(Error::param(format!(
                "constant_ratio must lie in [0, 1), got {}",
                self.constant_ratio
            )));
        }
        Ok(())
    }
}

fn validate_weights(w: &[f64; 3]) -> Result<()> {
    if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::param(format!(
            "task weights must be >= 0, got {w:?}"
        )));
    }
    let sum: f64 = w.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::param(format!(
            "task weights must sum to 1, got {sum}"
        )));
    }
    Ok(())
}

/// Masking ratio for slice `t` (1-based) of `t_max`. Future prediction and
/// interpolation increase with `t`; past prediction decreases.
pub fn tm_ratio(t: usize, t_max: usize, lambda: f64, task: MaskTask) -> Result<f64> {
    tm_ratio_with(TmFunction::Exponential, t, t_max, lambda, 0.0, task)
}

pub fn tm_ratio_with(
    function: TmFunction,
    t: usize,
    t_max: usize,
    lambda: f64,
    constant_ratio: f64,
    task: MaskTask,
) -> Result<f64> {
    if t == 0 || t > t_max {
        return Err(Error::param(format!(
            "temporal index {t} outside 1..={t_max}"
        )));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::param(format!("lambda must be >= 0, got {lambda}")));
    }
    let u = match task {
        MaskTask::FuturePrediction | MaskTask::Interpolation => t as f64 / t_max as f64,
        MaskTask::PastPrediction => (t_max - t) as f64 / t_max as f64,
    };
    Ok(function.eval(u, lambda, constant_ratio))
}

/// Uniform draw from `[0, lambda_max)`.
pub fn sample_lambda<R: Rng + ?Sized>(rng: &mut R, lambda_max: f64) -> f64 {
    rng.gen::<f64>() * lambda_max
}

/// `softmax(d / tau)` with max subtraction.
pub fn dm_probabilities(d: &[f64], tau: f64) -> Result<Vec<f64>> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::param(format!("tau must be > 0, got {tau}")));
    }
    let max = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = d.iter().map(|&v| ((v - max) / tau).exp()).collect();
    let sum: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= sum);
    Ok(p)
}

/// Draws `k` distinct indices, each draw proportional to the weights of
/// the indices not yet taken. Falls back to uniform over the remainder if
/// all remaining weight has underflowed.
pub fn weighted_sample_without_replacement<R: Rng + ?Sized>(
    weights: &[f64],
    k: usize,
    rng: &mut R,
) -> Vec<usize> {
    let k = k.min(weights.len());
    let mut w = weights.to_vec();
    let mut taken = vec![false; w.len()];
    let mut picked = Vec::with_capacity(k);
    for _ in 0..k {
        let total: f64 = w.iter().sum();
        let choice = if total > 0.0 && total.is_finite() {
            let mut u = rng.gen::<f64>() * total;
            let mut choice = None;
            for (i, &wi) in w.iter().enumerate() {
                if wi > 0.0 {
                    choice = Some(i);
                    if u < wi {
                        break;
                    }
                    u -= wi;
                }
            }
            choice.expect("positive total implies a positive weight")
        } else {
            let free: Vec<usize> = (0..w.len()).filter(|&i| !taken[i]).collect();
            free[rng.gen_range(0..free.len())]
        };
        taken[choice] = true;
        w[choice] = 0.0;
        picked.push(choice);
    }
    picked
}

fn count_for_ratio(gamma: f64, n: usize) -> usize {
    ((gamma * n as f64).floor().max(0.0) as usize).min(n)
}

/// Masks exactly `floor(gamma * N_s)` tokens of one slice.
pub fn sample_tdm_slice<R: Rng + ?Sized>(
    d: &[f64],
    gamma: f64,
    tau: f64,
    rng: &mut R,
) -> Result<Vec<bool>> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::param(format!(
            "gamma must lie in [0, 1), got {gamma}"
        )));
    }
    let p = dm_probabilities(d, tau)?;
    Ok(sample_slice_from_probs(
        &p,
        count_for_ratio(gamma, d.len()),
        rng,
    ))
}

fn sample_slice_from_probs<R: Rng + ?Sized>(p: &[f64], k: usize, rng: &mut R) -> Vec<bool> {
    let mut mask = vec![false; p.len()];
    if k == 0 {
        return mask;
    }
    for i in weighted_sample_without_replacement(p, k, rng) {
        mask[i] = true;
    }
    mask
}

/// Row-major `N_r x N_s` frame mask of `task`.
pub fn frame_mask(task: MaskTask, slices: usize, spatial: usize, obs_slices: usize) -> Vec<bool> {
    let mut mask = vec![false; slices * spatial];
    let range = match task {
        MaskTask::FuturePrediction => obs_slices.min(slices)..slices,
        MaskTask::PastPrediction => 0..obs_slices.min(slices),
        MaskTask::Interpolation => 0..0,
    };
    for r in range {
        mask[r * spatial..(r + 1) * spatial].fill(true);
    }
    mask
}

/// Which tokens are hidden from the encoder for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlan {
    slices: usize,
    spatial: usize,
    mask: Vec<bool>,
    task: MaskTask,
    lambda_used: f64,
}

impl MaskPlan {
    pub fn from_mask(
        slices: usize,
        spatial: usize,
        mask: Vec<bool>,
        task: MaskTask,
        lambda_used: f64,
    ) -> Result<Self> {
        if mask.len() != slices * spatial {
            return Err(Error::param(format!(
                "mask has {} entries, expected {slices} x {spatial}",
                mask.len()
            )));
        }
        Ok(MaskPlan {
            slices,
            spatial,
            mask,
            task,
            lambda_used,
        })
    }

    pub fn slices(&self) -> usize {
        self.slices
    }

    pub fn spatial(&self) -> usize {
        self.spatial
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn task(&self) -> MaskTask {
        self.task
    }

    pub fn lambda_used(&self) -> f64 {
        self.lambda_used
    }

    pub fn is_masked(&self, r: usize, s: usize) -> bool {
        self.mask[r * self.spatial + s]
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn slice_masked_count(&self, r: usize) -> usize {
        self.mask[r * self.spatial..(r + 1) * self.spatial]
            .iter()
            .filter(|&&m| m)
            .count()
    }

    pub fn masked_indices(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&i| self.mask[i]).collect()
    }

    pub fn visible_indices(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&i| !self.mask[i]).collect()
    }

    pub fn is_degenerate(&self) -> bool {
        let m = self.masked_count();
        m == 0 || m == self.mask.len()
    }

    /// Token-resolution picture of the plan: one frame per slice, one pixel
    /// per spatial block, 1.0 where masked.
    pub fn to_sequence(&self, grid: &CubeGrid) -> Result<DensitySequence> {
        if grid.temporal_tokens() != self.slices || grid.spatial_tokens() != self.spatial {
            return Err(Error::param("mask plan does not match the cube grid"));
        }
        let frames = (0..self.slices)
            .map(|r| {
                let vals = self.mask[r * self.spatial..(r + 1) * self.spatial]
                    .iter()
                    .map(|&m| if m { 1.0 } else { 0.0 })
                    .collect();
                DensityFrame::new(grid.blocks_x(), grid.blocks_y(), vals)
            })
            .collect::<Result<Vec<_>>>()?;
        DensitySequence::new(frames, DEFAULT_FRAME_INTERVAL)
    }
}

/// Slices that receive the ratio schedule for `task`, paired with their
/// 1-based schedule index, plus the schedule length.
fn tdm_slices(task: MaskTask, slices: usize, obs_slices: usize) -> (Vec<(usize, usize)>, usize) {
    match task {
        MaskTask::FuturePrediction => ((0..obs_slices).map(|r| (r, r + 1)).collect(), obs_slices),
        MaskTask::PastPrediction => (
            (obs_slices..slices)
                .map(|r| (r, r - obs_slices + 1))
                .collect(),
            slices - obs_slices,
        ),
        MaskTask::Interpolation => ((0..slices).map(|r| (r, r + 1)).collect(), slices),
    }
}

fn plan_once<R: Rng + ?Sized>(
    task: MaskTask,
    table: &DensityTable,
    cfg: &TdmConfig,
    lambda: f64,
    obs_slices: usize,
    rng: &mut R,
) -> Result<MaskPlan> {
    let (slices, spatial) = (table.slices(), table.spatial());
    let mut mask = frame_mask(task, slices, spatial, obs_slices);
    let (schedule, t_max) = tdm_slices(task, slices, obs_slices);
    for (r, t) in schedule {
        let gamma = tm_ratio_with(cfg.tm_function, t, t_max, lambda, cfg.constant_ratio, task)?;
        let k = count_for_ratio(gamma, spatial);
        let probs = if cfg.density_aware {
            dm_probabilities(table.slice(r), cfg.tau)?
        } else {
            vec![1.0 / spatial as f64; spatial]
        };
        let picked = sample_slice_from_probs(&probs, k, rng);
        for (s, hit) in picked.into_iter().enumerate() {
            mask[r * spatial + s] |= hit;
        }
    }
    MaskPlan::from_mask(slices, spatial, mask, task, lambda)
}

/// Builds the mask for one training sample. A plan that masks nothing or
/// everything gets one retry with a freshly drawn lambda.
pub fn build_mask_plan<R: Rng + ?Sized>(
    task: MaskTask,
    table: &DensityTable,
    cfg: &TdmConfig,
    lambda: f64,
    obs_slices: usize,
    rng: &mut R,
) -> Result<MaskPlan> {
    cfg.validate()?;
    let slices = table.slices();
    if task != MaskTask::Interpolation && (obs_slices == 0 || obs_slices >= slices) {
        return Err(Error::param(format!(
            "observation slices must lie in 1..{slices}, got {obs_slices}"
        )));
    }
    let plan = plan_once(task, table, cfg, lambda, obs_slices, rng)?;
    if !plan.is_degenerate() {
        return Ok(plan);
    }
    let retry_lambda = sample_lambda(rng, cfg.lambda_max);
    let plan = plan_once(task, table, cfg, retry_lambda, obs_slices, rng)?;
    if plan.is_degenerate() {
        return Err(Error::DegenerateMask(format!(
            "{} plan masks {} of {} tokens (lambda {lambda}, retry {retry_lambda})",
            task.name(),
            plan.masked_count(),
            plan.mask.len()
        )));
    }
    Ok(plan)
}

/// The deterministic forecasting mask: every future slice hidden.
pub fn inference_mask(slices: usize, spatial: usize, obs_slices: usize) -> Result<MaskPlan> {
    let plan = MaskPlan::from_mask(
        slices,
        spatial,
        frame_mask(MaskTask::FuturePrediction, slices, spatial, obs_slices),
        MaskTask::FuturePrediction,
        0.0,
    )?;
    if plan.is_degenerate() {
        return Err(Error::DegenerateMask(format!(
            "inference mask with {obs_slices} of {slices} observed slices"
        )));
    }
    Ok(plan)
}

pub fn sample_task<R: Rng + ?Sized>(rng: &mut R, weights: &[f64; 3]) -> MaskTask {
    let u = rng.gen::<f64>() * weights.iter().sum::<f64>();
    let mut acc = 0.0;
    let mut last = MaskTask::FuturePrediction;
    for task in MaskTask::ALL {
        let w = weights[task.index()];
        if w > 0.0 {
            acc += w;
            last = task;
            if u < acc {
                return task;
            }
        }
    }
    last
}
