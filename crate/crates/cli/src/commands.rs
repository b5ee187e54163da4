use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use crowdfc::config::RunConfig;
use crowdfc::density::io::{encode_cdmp, encode_pgm};
use crowdfc::density::DensitySequence;
use crowdfc::eval::{
    ablation_csv, default_task_combos, evaluate_persistence, evaluate_with, prepare_samples,
    robustness_csv, robustness_sweep, run_ablation, task_cells, tm_cells, training_sequences,
    EvalResult,
};
use crowdfc::masking::{build_mask_plan, MaskTask, TmFunction};
use crowdfc::model::{
    history_csv, load_checkpoint, predict_future, save_checkpoint, train_from, ModelState,
};
use crowdfc::simdata::{
    corrupt_missdetect, format_trajectories, simulate_crowd, CorruptionSpec, TrajectoryWindow,
};
use crowdfc::tokenizer::{accumulated_from_tokens, cubify};
use crowdfc::Error;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::run::{load_dataset, new_run_dir, split_windows, write_file, CliError, CliResult};

fn flag_error(flag: &str, e: Error) -> CliError {
    CliError::Config(format!("--{flag}: {e}"))
}

fn report_dir(dir: &Path) {
    println!("run directory: {}", dir.display());
}

pub fn simulate(cfg: &RunConfig, out: Option<PathBuf>) -> CliResult {
    let dataset = simulate_crowd(&cfg.sim)?;
    let path = match out {
        Some(p) => p,
        None => new_run_dir(cfg, "simulate")?.join("trajectories.txt"),
    };
    write_file(&path, format_trajectories(&dataset))?;
    println!(
        "{} records of {} agents written to {}",
        dataset.len(),
        dataset.agent_count(),
        path.display()
    );
    Ok(())
}

pub fn rasterize(
    cfg: &RunConfig,
    trajectories: Option<PathBuf>,
    start: usize,
    frames: Option<usize>,
    pgm: bool,
) -> CliResult {
    let dataset = load_dataset(cfg, trajectories.as_deref())?;
    let Some((first, last)) = dataset.frame_span() else {
        return Err(CliError::Runtime(Error::Protocol(
            "trajectory data has no records".into(),
        )));
    };
    let span = (last - first) as usize + 1;
    let frames = frames.unwrap_or(span.saturating_sub(start));
    if frames == 0 || start + frames > span {
        return Err(CliError::Config(format!(
            "--start {start} with {frames} frames does not fit the {span}-frame data"
        )));
    }
    let window = TrajectoryWindow::new(&dataset, first + start as u32, frames, 0);
    let seq = crowdfc::density::rasterize_sequence(
        &window,
        cfg.grid.width,
        cfg.grid.height,
        &cfg.eval.kernel(),
    )?;
    let dir = new_run_dir(cfg, "rasterize")?;
    write_file(&dir.join("density.cdmp"), encode_cdmp(&seq))?;
    if pgm {
        write_frames(&dir.join("frames"), "frame", &seq)?;
    }
    report_dir(&dir);
    println!("{frames} frames of {}x{}", cfg.grid.height, cfg.grid.width);
    Ok(())
}

fn write_frames(dir: &Path, prefix: &str, seq: &DensitySequence) -> CliResult {
    for (t, frame) in seq.frames().iter().enumerate() {
        write_file(&dir.join(format!("{prefix}_{t:04}.pgm")), encode_pgm(frame))?;
    }
    Ok(())
}

fn check_checkpoint(cfg: &RunConfig, state: &ModelState, path: &Path) -> CliResult {
    if state.config() != &cfg.model || state.grid() != &cfg.grid {
        return Err(CliError::Config(format!(
            "{} was trained with a different [model] or [grid] section",
            path.display()
        )));
    }
    if state.obs_frames() != cfg.eval.obs_frames {
        return Err(CliError::Config(format!(
            "{} observes {} frames but eval.obs_frames = {}",
            path.display(),
            state.obs_frames(),
            cfg.eval.obs_frames
        )));
    }
    Ok(())
}

pub fn train(cfg: &RunConfig, resume: Option<PathBuf>) -> CliResult {
    let state = match &resume {
        Some(path) => {
            let state = load_checkpoint(path)?;
            check_checkpoint(cfg, &state, path)?;
            state
        }
        None => ModelState::new(
            cfg.model.clone(),
            cfg.grid,
            cfg.train.obs_frames,
            cfg.train.seed,
        )?,
    };
    let dataset = load_dataset(cfg, None)?;
    let split = split_windows(cfg, &dataset)?;
    let samples = training_sequences(
        &split.train,
        cfg.grid.width,
        cfg.grid.height,
        &cfg.eval.kernel(),
    )?;
    let dir = new_run_dir(cfg, "train")?;
    report_dir(&dir);
    println!(
        "{} training windows, {} parameters, starting at epoch {} step {}",
        samples.len(),
        state.num_scalars(),
        state.epoch,
        state.step
    );
    let outcome = train_from(state, &samples, &cfg.train, &cfg.tdm, |s, _| {
        println!(
            "epoch {:>4}/{}  loss {:.6e}  lr {:.3e}  lambda {:.3}  skipped {}",
            s.epoch + 1,
            cfg.train.epochs,
            s.mean_loss,
            s.lr,
            s.lambda,
            s.skipped
        );
        ControlFlow::Continue(())
    })?;
    save_checkpoint(&outcome.state, &dir.join("model.ckpt"))?;
    write_file(&dir.join("loss.csv"), history_csv(&outcome.history))?;
    println!(
        "finished at epoch {} step {}",
        outcome.state.epoch, outcome.state.step
    );
    Ok(())
}

fn metrics_csv(miss_ratio: f64, windows: usize, model: &EvalResult, base: &EvalResult) -> String {
    let mut out = String::from("method,miss_ratio,windows,ad_js,fd_js\n");
    for (name, r) in [("model", model), ("persistence", base)] {
        out.push_str(&format!(
            "{name},{miss_ratio},{windows},{:.6},{:.6}\n",
            r.aggregate.ad_js, r.aggregate.fd_js
        ));
    }
    out
}

fn per_step_csv(model: &EvalResult, base: &EvalResult) -> String {
    let mut out = String::from("step,model_js,persistence_js\n");
    let steps = model
        .aggregate
        .per_step_js
        .iter()
        .zip(&base.aggregate.per_step_js);
    for (t, (m, p)) in steps.enumerate() {
        out.push_str(&format!("{},{m:.6},{p:.6}\n", t + 1));
    }
    out
}

pub fn eval(
    cfg: &RunConfig,
    checkpoint: &Path,
    miss_ratio: Option<f64>,
    sweep: &[f64],
    window: usize,
) -> CliResult {
    let protocol = match miss_ratio {
        Some(p) => cfg.eval.with_miss_ratio(p),
        None => cfg.eval.clone(),
    };
    protocol
        .validate()
        .map_err(|e| flag_error("miss-ratio", e))?;
    for &p in sweep {
        cfg.eval
            .with_miss_ratio(p)
            .validate()
            .map_err(|e| flag_error("sweep", e))?;
    }
    let state = load_checkpoint(checkpoint)?;
    check_checkpoint(cfg, &state, checkpoint)?;
    let dataset = load_dataset(cfg, None)?;
    let split = split_windows(cfg, &dataset)?;
    if window >= split.test.len() {
        return Err(CliError::Config(format!(
            "--window {window} but the test split has {} windows",
            split.test.len()
        )));
    }
    let (w, h) = (cfg.grid.width, cfg.grid.height);
    let samples = prepare_samples(&split.test, &protocol, w, h)?;
    let model = evaluate_with(&samples, protocol.epsilon, |obs| {
        predict_future(obs, &state)
    })?;
    let base = evaluate_persistence(&samples, protocol.epsilon)?;

    let dir = new_run_dir(cfg, "eval")?;
    report_dir(&dir);
    let p = protocol.input.miss_ratio();
    write_file(
        &dir.join("metrics.csv"),
        metrics_csv(p, samples.len(), &model, &base),
    )?;
    write_file(&dir.join("per_step.csv"), per_step_csv(&model, &base))?;
    let sample = &samples[window];
    let heatmaps = dir.join("heatmaps");
    write_frames(&heatmaps, "obs", &sample.obs)?;
    write_frames(&heatmaps, "truth", &sample.future)?;
    write_frames(&heatmaps, "pred", &predict_future(&sample.obs, &state)?)?;
    if !sweep.is_empty() {
        let points = robustness_sweep(&state, &split.test, &cfg.eval, sweep)?;
        write_file(&dir.join("robustness.csv"), robustness_csv(&points))?;
        for pt in &points {
            println!(
                "p={:<5} AD_JS {:.6}  FD_JS {:.6}",
                pt.miss_ratio, pt.ad_js, pt.fd_js
            );
        }
    }
    println!(
        "model        AD_JS {:.6}  FD_JS {:.6}\npersistence  AD_JS {:.6}  FD_JS {:.6}",
        model.aggregate.ad_js, model.aggregate.fd_js, base.aggregate.ad_js, base.aggregate.fd_js
    );
    Ok(())
}

pub fn corrupt(
    cfg: &RunConfig,
    trajectories: Option<PathBuf>,
    miss_ratio: f64,
    out: Option<PathBuf>,
) -> CliResult {
    let spec = CorruptionSpec {
        miss_ratio,
        mode: cfg.eval.corruption_mode,
        frames: None,
        seed: cfg.eval.seed,
    };
    spec.validate().map_err(|e| flag_error("miss-ratio", e))?;
    let dataset = load_dataset(cfg, trajectories.as_deref())?;
    let kept = corrupt_missdetect(&dataset, &spec)?;
    let path = match out {
        Some(p) => p,
        None => new_run_dir(cfg, "corrupt")?.join("trajectories.txt"),
    };
    write_file(&path, format_trajectories(&kept))?;
    println!(
        "kept {} of {} records, written to {}",
        kept.len(),
        dataset.len(),
        path.display()
    );
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub enum Grid {
    TmFunctions,
    Tasks,
}

pub fn ablate(cfg: &RunConfig, grid: Grid) -> CliResult {
    let (cells, name) = match grid {
        Grid::TmFunctions => (tm_cells(&cfg.tdm, &TmFunction::ALL)?, "ablate-tm"),
        Grid::Tasks => (
            task_cells(&cfg.tdm, &default_task_combos())?,
            "ablate-tasks",
        ),
    };
    let dataset = load_dataset(cfg, None)?;
    let split = split_windows(cfg, &dataset)?;
    let (w, h) = (cfg.grid.width, cfg.grid.height);
    let train_set = training_sequences(&split.train, w, h, &cfg.eval.kernel())?;
    let test_set = prepare_samples(&split.test, &cfg.eval, w, h)?;
    let dir = new_run_dir(cfg, name)?;
    report_dir(&dir);
    println!(
        "{:<48} {:>9} {:>9}   reference AD/FD",
        "cell", "AD_JS", "FD_JS"
    );
    let rows = run_ablation(
        &cells,
        &train_set,
        &test_set,
        cfg.grid,
        &cfg.model,
        &cfg.train,
        &cfg.eval,
        |row| {
            let reference = row
                .reference
                .map_or_else(|| "-".to_string(), |(a, f)| format!("{a:.3} / {f:.3}"));
            println!(
                "{:<48} {:>9.6} {:>9.6}   {reference}",
                row.cell_id, row.ad_js, row.fd_js
            );
        },
    )?;
    write_file(&dir.join("ablation.csv"), ablation_csv(&rows))?;
    Ok(())
}

pub fn mask_viz(
    cfg: &RunConfig,
    lambda: Option<f64>,
    window: usize,
    out: Option<PathBuf>,
) -> CliResult {
    let lambda = lambda.unwrap_or(cfg.tdm.lambda_max);
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(CliError::Config(format!(
            "--lambda must be >= 0, got {lambda}"
        )));
    }
    let dataset = load_dataset(cfg, None)?;
    let split = split_windows(cfg, &dataset)?;
    let Some(w) = split.train.get(window) else {
        return Err(CliError::Config(format!(
            "--window {window} but the training split has {} windows",
            split.train.len()
        )));
    };
    let seq = training_sequences(
        std::slice::from_ref(w),
        cfg.grid.width,
        cfg.grid.height,
        &cfg.eval.kernel(),
    )?
    .remove(0);
    let table = accumulated_from_tokens(&cubify(&seq, &cfg.grid)?);
    let obs_slices = cfg.eval.obs_frames / cfg.grid.cube_t;
    let dir = match out {
        Some(d) => d,
        None => new_run_dir(cfg, "mask-viz")?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let mut summary = String::from("task,lambda,slice,masked,spatial\n");
    for task in MaskTask::ALL {
        let plan = build_mask_plan(task, &table, &cfg.tdm, lambda, obs_slices, &mut rng)?;
        write_file(
            &dir.join(format!("mask_{}.cdmp", task.name())),
            encode_cdmp(&plan.to_sequence(&cfg.grid)?),
        )?;
        for r in 0..plan.slices() {
            summary.push_str(&format!(
                "{},{},{r},{},{}\n",
                task.name(),
                plan.lambda_used(),
                plan.slice_masked_count(r),
                plan.spatial()
            ));
        }
    }
    write_file(&dir.join("masks.csv"), summary)?;
    report_dir(&dir);
    Ok(())
}
