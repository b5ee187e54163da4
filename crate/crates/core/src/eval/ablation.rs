use std::time::Instant;

use crate::density::DensitySequence;
use crate::error::{Error, Result};
use crate::eval::{evaluate_with, EvalProtocol, EvalSample};
use crate::masking::{MaskTask, TdmConfig, TmFunction};
use crate::model::{predict_future, train, ModelConfig, TrainConfig};
use crate::tokenizer::CubeGrid;

/// Published SDD results per ratio function, `(function, AD_JS, FD_JS)`.
/// Reference only; desk-scale runs are not expected to match them.
pub const TM_REFERENCE: [(TmFunction, f64, f64); 6] = [
    (TmFunction::Constant, 0.077, 0.136),
    (TmFunction::Sqrt, 0.076, 0.138),
    (TmFunction::Linear, 0.074, 0.137),
    (TmFunction::Square, 0.071, 0.129),
    (TmFunction::Cubic, 0.075, 0.134),
    (TmFunction::Exponential, 0.068, 0.129),
];

/// Published SDD results per task combination.
pub const TASK_REFERENCE: [(&[MaskTask], f64, f64); 4] = [
    (&[MaskTask::FuturePrediction], 0.080, 0.146),
    (
        &[MaskTask::FuturePrediction, MaskTask::Interpolation],
        0.070,
        0.129,
    ),
    (
        &[MaskTask::FuturePrediction, MaskTask::PastPrediction],
        0.075,
        0.143,
    ),
    (
        &[
            MaskTask::FuturePrediction,
            MaskTask::Interpolation,
            MaskTask::PastPrediction,
        ],
        0.068,
        0.129,
    ),
];

/// One training configuration of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub id: String,
    pub tdm: TdmConfig,
    /// Published `(AD_JS, FD_JS)` for the matching table row, if any.
    pub reference: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub cell_id: String,
    pub config_json: String,
    pub ad_js: f64,
    pub fd_js: f64,
    pub train_seconds: f64,
    pub reference: Option<(f64, f64)>,
}

/// One cell per ratio function, everything else taken from `base`.
pub fn tm_cells(base: &TdmConfig, functions: &[TmFunction]) -> Result<Vec<AblationCell>> {
    if functions.is_empty() {
        return Err(Error::Protocol("ablation grid is empty".into()));
    }
    Ok(functions
        .iter()
        .map(|&f| AblationCell {
            id: f.name().to_string(),
            tdm: TdmConfig {
                tm_function: f,
                ..base.clone()
            },
            reference: TM_REFERENCE
                .iter()
                .find(|(g, _, _)| *g == f)
                .map(|&(_, a, d)| (a, d)),
        })
        .collect())
}

fn same_tasks(a: &[MaskTask], b: &[MaskTask]) -> bool {
    a.len() == b.len() && a.iter().all(|t| b.contains(t))
}

/// One cell per task combination, sampled uniformly within the combination.
/// Every combination must train the forecasting task.
pub fn task_cells(base: &TdmConfig, combos: &[Vec<MaskTask>]) -> Result<Vec<AblationCell>> {
    if combos.is_empty() {
        return Err(Error::Protocol("ablation grid is empty".into()));
    }
    combos
        .iter()
        .map(|combo| {
            if !combo.contains(&MaskTask::FuturePrediction) {
                return Err(Error::Protocol(format!(
                    "task combination {:?} does not include future prediction",
                    combo.iter().map(|t| t.name()).collect::<Vec<_>>()
                )));
            }
            let mut weights = [0.0; 3];
            for t in combo {
                weights[t.index()] = 1.0;
            }
            let n: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= n);
            let mut names: Vec<&str> = MaskTask::ALL
                .iter()
                .filter(|t| combo.contains(t))
                .map(|t| t.name())
                .collect();
            names.dedup();
            Ok(AblationCell {
                id: names.join("+"),
                tdm: TdmConfig {
                    task_weights: weights,
                    ..base.clone()
                },
                reference: TASK_REFERENCE
                    .iter()
                    .find(|(ts, _, _)| same_tasks(ts, combo))
                    .map(|&(_, a, d)| (a, d)),
            })
        })
        .collect()
}

/// The four task combinations of the multi-task ablation.
pub fn default_task_combos() -> Vec<Vec<MaskTask>> {
    TASK_REFERENCE
        .iter()
        .map(|(ts, _, _)| ts.to_vec())
        .collect()
}

/// Trains and scores one model per cell with identical seeds and budgets.
#[allow(clippy::too_many_arguments)]
pub fn run_ablation(
    cells: &[AblationCell],
    train_set: &[DensitySequence],
    test_set: &[EvalSample],
    grid: CubeGrid,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    protocol: &EvalProtocol,
    mut on_row: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(cells.len());
    for cell in cells {
        let started = Instant::now();
        let outcome = train(train_set, grid, model_cfg, train_cfg, &cell.tdm)?;
        let train_seconds = started.elapsed().as_secs_f64();
        let result = evaluate_with(test_set, protocol.epsilon, |obs| {
            predict_future(obs, &outcome.state)
        })?;
        let row = AblationRow {
            cell_id: cell.id.clone(),
            config_json: serde_json::to_string(&cell.tdm).expect("config serializes"),
            ad_js: result.aggregate.ad_js,
            fd_js: result.aggregate.fd_js,
            train_seconds,
            reference: cell.reference,
        };
        on_row(&row);
        rows.push(row);
    }
    Ok(rows)
}

/// CSV `cell_id,config_json,ad_js,fd_js,train_seconds`.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("cell_id,config_json,ad_js,fd_js,train_seconds\n");
    for r in rows {
        out.push_str(&format!(
            "{},\"{}\",{:.6},{:.6},{:.3}\n",
            r.cell_id,
            r.config_json.replace('"', "\"\""),
            r.ad_js,
            r.fd_js,
            r.train_seconds
        ));
    }
    out
}
