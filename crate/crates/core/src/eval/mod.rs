//! Forecast evaluation: window scoring, the persistence baseline,
//! miss-detection sweeps and ablation grids.

mod ablation;

pub use ablation::{
    ablation_csv, default_task_combos, run_ablation, task_cells, tm_cells, AblationCell,
    AblationRow, TASK_REFERENCE, TM_REFERENCE,
};

use serde::{Deserialize, Serialize};

use crate::density::{rasterize_frames, score_forecast, DensitySequence, KernelSpec, MetricReport};
use crate::error::{Error, Result};
use crate::model::{predict_future, ModelState};
use crate::simdata::{corrupt_missdetect, CorruptionMode, CorruptionSpec, TrajectoryWindow};

/// Where the observed frames come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InputSource {
    #[default]
    GroundTruth,
    /// Observation records dropped at the given miss-detection ratio.
    Corrupted { miss_ratio: f64 },
}

impl InputSource {
    pub fn miss_ratio(&self) -> f64 {
        match self {
            InputSource::GroundTruth => 0.0,
            InputSource::Corrupted { miss_ratio } => *miss_ratio,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalProtocol {
    pub obs_frames: usize,
    pub pred_frames: usize,
    pub input: InputSource,
    pub corruption_mode: CorruptionMode,
    pub sigma: f64,
    pub epsilon: f64,
    /// Seeds the miss-detection draw; window `i` uses `seed + i`.
    pub seed: u64,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        EvalProtocol {
            obs_frames: 8,
            pred_frames: 12,
            input: InputSource::GroundTruth,
            corruption_mode: CorruptionMode::PerRecord,
            sigma: 3.0,
            epsilon: crate::density::DEFAULT_EPSILON,
            seed: 0,
        }
    }
}

impl EvalProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.obs_frames == 0 || self.pred_frames == 0 {
            return Err(Error::param(
                "observation and prediction lengths must be positive",
            ));
        }
        KernelSpec::peak(self.sigma).validate()?;
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::param(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        let p = self.input.miss_ratio();
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::param(format!(
                "miss ratio must lie in [0, 1], got {p}"
            )));
        }
        Ok(())
    }

    pub fn with_miss_ratio(&self, miss_ratio: f64) -> Self {
        EvalProtocol {
            input: if miss_ratio == 0.0 {
                InputSource::GroundTruth
            } else {
                InputSource::Corrupted { miss_ratio }
            },
            ..self.clone()
        }
    }

    pub fn kernel(&self) -> KernelSpec {
        KernelSpec::peak(self.sigma)
    }
}

/// Observed input and ground-truth future of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSample {
    pub obs: DensitySequence,
    pub future: DensitySequence,
}

/// Rasterizes windows into scoring samples, corrupting the observed part
/// as the protocol asks. The future is always rendered from clean records.
pub fn prepare_samples(
    windows: &[TrajectoryWindow],
    protocol: &EvalProtocol,
    width: usize,
    height: usize,
) -> Result<Vec<EvalSample>> {
    protocol.validate()?;
    let kernel = protocol.kernel();
    let (obs, pred) = (protocol.obs_frames, protocol.pred_frames);
    windows
        .iter()
        .enumerate()
        .map(|(i, w)| {
            if w.obs_len != obs || w.pred_len != pred {
                return Err(Error::Protocol(format!(
                    "window {i} is {}+{} frames, protocol expects {obs}+{pred}",
                    w.obs_len, w.pred_len
                )));
            }
            let spec = CorruptionSpec {
                miss_ratio: protocol.input.miss_ratio(),
                mode: protocol.corruption_mode,
                frames: Some((w.obs_frames().start, w.obs_frames().end)),
                seed: protocol.seed.wrapping_add(i as u64),
            };
            let observed = w.with_records(corrupt_missdetect(&w.records, &spec)?);
            Ok(EvalSample {
                obs: rasterize_frames(&observed, 0..obs, width, height, &kernel)?,
                future: rasterize_frames(w, obs..obs + pred, width, height, &kernel)?,
            })
        })
        .collect()
}

/// Full-length rasterized windows for training.
pub fn training_sequences(
    windows: &[TrajectoryWindow],
    width: usize,
    height: usize,
    kernel: &KernelSpec,
) -> Result<Vec<DensitySequence>> {
    windows
        .iter()
        .map(|w| rasterize_frames(w, 0..w.len(), width, height, kernel))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    /// Mean over windows of the per-step, average and final divergences.
    pub aggregate: MetricReport,
    pub per_window: Vec<MetricReport>,
}

/// Scores `predict` on every sample.
pub fn evaluate_with(
    samples: &[EvalSample],
    epsilon: f64,
    mut predict: impl FnMut(&DensitySequence) -> Result<DensitySequence>,
) -> Result<EvalResult> {
    if samples.is_empty() {
        return Err(Error::Protocol(
            "evaluation needs at least one window".into(),
        ));
    }
    let per_window = samples
        .iter()
        .map(|s| score_forecast(&predict(&s.obs)?, &s.future, epsilon))
        .collect::<Result<Vec<_>>>()?;
    let n = per_window.len() as f64;
    let steps = per_window[0].per_step_js.len();
    let per_step_js = (0..steps)
        .map(|t| per_window.iter().map(|r| r.per_step_js[t]).sum::<f64>() / n)
        .collect();
    let aggregate = MetricReport {
        per_step_js,
        ad_js: per_window.iter().map(|r| r.ad_js).sum::<f64>() / n,
        fd_js: per_window.iter().map(|r| r.fd_js).sum::<f64>() / n,
    };
    Ok(EvalResult {
        aggregate,
        per_window,
    })
}

fn check_model(state: &ModelState, protocol: &EvalProtocol) -> Result<()> {
    if state.obs_frames() != protocol.obs_frames || state.pred_frames() != protocol.pred_frames {
        return Err(Error::Protocol(format!(
            "model forecasts {}+{} frames, protocol asks {}+{}",
            state.obs_frames(),
            state.pred_frames(),
            protocol.obs_frames,
            protocol.pred_frames
        )));
    }
    Ok(())
}

pub fn evaluate(
    state: &ModelState,
    windows: &[TrajectoryWindow],
    protocol: &EvalProtocol,
) -> Result<EvalResult> {
    check_model(state, protocol)?;
    let g = state.grid();
    let samples = prepare_samples(windows, protocol, g.width, g.height)?;
    evaluate_with(&samples, protocol.epsilon, |obs| predict_future(obs, state))
}

/// Repeats the last observed frame `pred_frames` times.
pub fn persistence_baseline(obs: &DensitySequence, pred_frames: usize) -> Result<DensitySequence> {
    if obs.is_empty() {
        return Err(Error::param("persistence needs an observed frame"));
    }
    let last = obs.frame(obs.len() - 1).clone();
    DensitySequence::new(vec![last; pred_frames], obs.frame_interval())
}

pub fn evaluate_persistence(samples: &[EvalSample], epsilon: f64) -> Result<EvalResult> {
    evaluate_with(samples, epsilon, |obs| {
        persistence_baseline(obs, samples[0].future.len())
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustnessPoint {
    pub miss_ratio: f64,
    pub ad_js: f64,
    pub fd_js: f64,
}

/// Evaluates at every miss-detection ratio. All ratios share the
/// protocol seed, so records dropped at a lower ratio are also dropped at
/// every higher one.
pub fn robustness_sweep(
    state: &ModelState,
    windows: &[TrajectoryWindow],
    protocol: &EvalProtocol,
    ratios: &[f64],
) -> Result<Vec<RobustnessPoint>> {
    ratios
        .iter()
        .map(|&p| {
            let r = evaluate(state, windows, &protocol.with_miss_ratio(p))?;
            Ok(RobustnessPoint {
                miss_ratio: p,
                ad_js: r.aggregate.ad_js,
                fd_js: r.aggregate.fd_js,
            })
        })
        .collect()
}

pub fn robustness_csv(points: &[RobustnessPoint]) -> String {
    let mut out = String::from("miss_ratio,ad_js,fd_js\n");
    for p in points {
        out.push_str(&format!("{},{:.6},{:.6}\n", p.miss_ratio, p.ad_js, p.fd_js));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simdata::{simulate_crowd, window_split, SimConfig, TrackRecord, TrajectoryDataset};

    fn static_windows() -> Vec<TrajectoryWindow> {
        let mut recs = Vec::new();
        for f in 0..40 {
            recs.push(TrackRecord {
                frame: f,
                agent: 0,
                x: 10.0,
                y: 12.0,
            });
            recs.push(TrackRecord {
                frame: f,
                agent: 1,
                x: 25.0,
                y: 5.0,
            });
        }
        let ds = TrajectoryDataset::from_records(recs, 0.4).unwrap();
        window_split(&ds, 8, 12, 10).unwrap()
    }

    fn moving_windows() -> Vec<TrajectoryWindow> {
        let cfg = SimConfig {
            width: 32,
            height: 32,
            n_agents: 4,
            frames: 300,
            spawn_rate: 0.05,
            seed: 9,
            ..SimConfig::default()
        };
        window_split(&simulate_crowd(&cfg).unwrap(), 8, 12, 5).unwrap()
    }

    #[test]
    fn oracle_scores_exactly_zero() {
        let samples = prepare_samples(&moving_windows(), &EvalProtocol::default(), 32, 32).unwrap();
        let mut it = samples.iter();
        let r = evaluate_with(&samples, 1e-12, |_| Ok(it.next().unwrap().future.clone())).unwrap();
        assert_eq!(r.aggregate.ad_js, 0.0);
        assert_eq!(r.aggregate.fd_js, 0.0);
    }

    #[test]
    fn single_window_aggregate_is_that_window() {
        let samples =
            prepare_samples(&moving_windows()[..1], &EvalProtocol::default(), 32, 32).unwrap();
        let r = evaluate_persistence(&samples, 1e-12).unwrap();
        assert_eq!(r.aggregate, r.per_window[0]);
    }

    #[test]
    fn aggregate_is_mean_of_windows() {
        let samples =
            prepare_samples(&moving_windows()[..10], &EvalProtocol::default(), 32, 32).unwrap();
        let r = evaluate_persistence(&samples, 1e-12).unwrap();
        let mut ad = 0.0;
        let mut fd = 0.0;
        for s in &samples {
            let pred = persistence_baseline(&s.obs, 12).unwrap();
            let m = score_forecast(&pred, &s.future, 1e-12).unwrap();
            ad += m.ad_js;
            fd += m.fd_js;
        }
        assert!((r.aggregate.ad_js - ad / 10.0).abs() < 1e-15);
        assert!((r.aggregate.fd_js - fd / 10.0).abs() < 1e-15);
    }

    #[test]
    fn static_crowd_persistence_is_near_zero() {
        let samples = prepare_samples(&static_windows(), &EvalProtocol::default(), 32, 32).unwrap();
        let r = evaluate_persistence(&samples, 1e-12).unwrap();
        assert!(r.aggregate.ad_js < 1e-6);
        assert_eq!(persistence_baseline(&samples[0].obs, 12).unwrap().len(), 12);
    }

    #[test]
    fn persistence_error_grows_with_horizon_on_moving_crowd() {
        let samples = prepare_samples(&moving_windows(), &EvalProtocol::default(), 32, 32).unwrap();
        let r = evaluate_persistence(&samples, 1e-12).unwrap();
        let s = &r.aggregate.per_step_js;
        for t in 1..s.len() {
            assert!(s[t] >= s[t - 1], "step {t}: {} < {}", s[t], s[t - 1]);
        }
    }

    #[test]
    fn empty_inputs_are_rejected() {
        assert!(matches!(
            evaluate_with(&[], 1e-12, |o| Ok(o.clone())),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn zero_miss_ratio_matches_clean_input() {
        let w = moving_windows();
        let clean = prepare_samples(&w, &EvalProtocol::default(), 32, 32).unwrap();
        let zero =
            prepare_samples(&w, &EvalProtocol::default().with_miss_ratio(0.0), 32, 32).unwrap();
        assert_eq!(clean, zero);
        let corrupted =
            prepare_samples(&w, &EvalProtocol::default().with_miss_ratio(0.5), 32, 32).unwrap();
        assert_ne!(clean, corrupted);
        for (c, k) in clean.iter().zip(&corrupted) {
            assert_eq!(c.future, k.future);
        }
    }

    #[test]
    fn window_length_mismatch_is_protocol_error() {
        let proto = EvalProtocol {
            obs_frames: 4,
            pred_frames: 16,
            ..EvalProtocol::default()
        };
        assert!(matches!(
            prepare_samples(&moving_windows(), &proto, 32, 32),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn csv_uses_six_decimals() {
        let csv = robustness_csv(&[RobustnessPoint {
            miss_ratio: 0.3,
            ad_js: 0.1234567,
            fd_js: 0.5,
        }]);
        assert_eq!(csv, "miss_ratio,ad_js,fd_js\n0.3,0.123457,0.500000\n");
    }
}
