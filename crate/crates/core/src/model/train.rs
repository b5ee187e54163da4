//! The training loop: per epoch a shuffled pass over the samples with one
//! masking ratio parameter, per sample a task, an augmentation and a mask
//! plan, and one AdamW update per batch.

use std::ops::ControlFlow;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::density::DensitySequence;
use crate::error::{Error, Result};
use crate::masking::{build_mask_plan, sample_lambda, sample_task, TdmConfig};
use crate::model::augment::augment;
use crate::model::config::{ModelConfig, TrainConfig};
use crate::model::matrix::Matrix;
use crate::model::network::{loss_and_grads, ModelState};
use crate::model::optim::{AdamW, LrSchedule};
use crate::tokenizer::{accumulated_from_tokens, cubify, CubeGrid};

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean masked loss over the samples that produced a valid plan.
    pub mean_loss: f64,
    /// Learning rate of the epoch's last update.
    pub lr: f64,
    /// Masking ratio parameter (mean over batches when drawn per batch).
    pub lambda: f64,
    pub samples: usize,
    /// Samples dropped because no usable mask plan could be drawn.
    pub skipped: usize,
}

pub struct TrainOutcome {
    pub state: ModelState,
    pub history: Vec<EpochStats>,
}

/// Renders a loss curve as CSV `epoch,mean_loss,lr,lambda`.
pub fn history_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,mean_loss,lr,lambda\n");
    for h in history {
        out.push_str(&format!(
            "{},{:.9e},{:.9e},{:.6}\n",
            h.epoch, h.mean_loss, h.lr, h.lambda
        ));
    }
    out
}

pub fn schedule(train_cfg: &TrainConfig, samples: usize) -> LrSchedule {
    let per_epoch = samples.div_ceil(train_cfg.batch_size) as u64;
    LrSchedule::new(
        train_cfg.peak_lr(),
        per_epoch * train_cfg.warmup_epochs as u64,
        per_epoch * train_cfg.epochs as u64,
    )
}

/// Trains a fresh model initialized from `train_cfg.seed`.
pub fn train(
    samples: &[DensitySequence],
    grid: CubeGrid,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    tdm_cfg: &TdmConfig,
) -> Result<TrainOutcome> {
    let state = ModelState::new(
        model_cfg.clone(),
        grid,
        train_cfg.obs_frames,
        train_cfg.seed,
    )?;
    train_from(state, samples, train_cfg, tdm_cfg, |_, _| {
        ControlFlow::Continue(())
    })
}

/// Runs the remaining epochs of `train_cfg` starting at `state.epoch`;
/// `on_epoch` sees every finished epoch and may stop the run early.
/// Every epoch draws from its own seeded stream, so a resumed run follows
/// the same sample order, tasks and masks as an uninterrupted one.
pub fn train_from(
    mut state: ModelState,
    samples: &[DensitySequence],
    train_cfg: &TrainConfig,
    tdm_cfg: &TdmConfig,
    mut on_epoch: impl FnMut(&EpochStats, &ModelState) -> ControlFlow<()>,
) -> Result<TrainOutcome> {
    train_cfg.validate()?;
    tdm_cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::param("training needs at least one sample"));
    }
    if state.obs_frames() != train_cfg.obs_frames {
        return Err(Error::param(format!(
            "model observes {} frames, training config {}",
            state.obs_frames(),
            train_cfg.obs_frames
        )));
    }
    let grid = *state.grid();
    let sched = schedule(train_cfg, samples.len());
    let opt = AdamW::default();
    let obs_slices = state.obs_slices();
    let mut history = Vec::new();
    for epoch in state.epoch..train_cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng);
        let mut lambda = sample_lambda(&mut rng, tdm_cfg.lambda_max);
        let (mut loss_sum, mut used_total, mut skipped) = (0.0, 0usize, 0usize);
        let (mut lambda_sum, mut batches) = (0.0, 0usize);
        let mut lr = 0.0;
        for batch in order.chunks(train_cfg.batch_size) {
            if tdm_cfg.lambda_per_batch {
                lambda = sample_lambda(&mut rng, tdm_cfg.lambda_max);
            }
            lambda_sum += lambda;
            batches += 1;
            lr = sched.lr(state.step);
            let mut grads: Option<Vec<Matrix>> = None;
            let mut used = 0usize;
            for &i in batch {
                let task = sample_task(&mut rng, &tdm_cfg.task_weights);
                let seq = augment(&samples[i], &mut rng, &train_cfg.augment);
                let tokens = cubify(&seq, &grid)?;
                let table = accumulated_from_tokens(&tokens);
                let plan =
                    match build_mask_plan(task, &table, tdm_cfg, lambda, obs_slices, &mut rng) {
                        Ok(p) => p,
                        Err(Error::DegenerateMask(_)) => {
                            skipped += 1;
                            continue;
                        }
                        Err(e) => return Err(e),
                    };
                let (loss, g) = loss_and_grads(&state, &tokens, &plan)?;
                loss_sum += loss;
                used += 1;
                match &mut grads {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| a.add_assign(b)),
                    None => grads = Some(g),
                }
            }
            if let Some(mut g) = grads {
                let scale = 1.0 / used as f64;
                g.iter_mut()
                    .for_each(|m| m.data.iter_mut().for_each(|v| *v *= scale));
                let t = state.step + 1;
                opt.step(state.params_mut(), &g, lr, train_cfg.weight_decay, t)?;
            }
            used_total += used;
            state.step += 1;
        }
        state.epoch = epoch + 1;
        let stats = EpochStats {
            epoch,
            mean_loss: if used_total > 0 {
                loss_sum / used_total as f64
            } else {
                f64::NAN
            },
            lr,
            lambda: lambda_sum / batches as f64,
            samples: used_total,
            skipped,
        };
        let flow = on_epoch(&stats, &state);
        history.push(stats);
        if flow.is_break() {
            break;
        }
    }
    Ok(TrainOutcome { state, history })
}
