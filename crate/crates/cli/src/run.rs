use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crowdfc::config::RunConfig;
use crowdfc::simdata::{
    load_trajectories, simulate_crowd, window_split, TrajectoryDataset, TrajectoryWindow,
};
use crowdfc::Error;

use crate::GlobalArgs;

/// A command failure, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or flag values; exit code 2.
    Config(String),
    /// Anything that went wrong while running; exit code 3.
    Runtime(Error),
}

impl CliError {
    pub fn is_config(&self) -> bool {
        matches!(self, CliError::Config(_))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Runtime(e) => e.fmt(f),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(msg) => CliError::Config(msg),
            other => CliError::Runtime(other),
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

pub fn load_config(args: &GlobalArgs) -> Result<RunConfig, Error> {
    RunConfig::load(args.config.as_deref(), &args.overrides)
}

pub fn io_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Runtime(Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| io_err(path, e))
}

/// Creates `<output.dir>/<command>-<unix seconds>`, adding `-1`, `-2`, ...
/// when that name is taken, and stores the resolved config inside.
pub fn new_run_dir(cfg: &RunConfig, command: &str) -> CliResult<PathBuf> {
    let root = &cfg.output.dir;
    std::fs::create_dir_all(root).map_err(|e| io_err(root, e))?;
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let base = format!("{command}-{secs}");
    for n in 0.. {
        let name = if n == 0 {
            base.clone()
        } else {
            format!("{base}-{n}")
        };
        let dir = root.join(name);
        match std::fs::create_dir(&dir) {
            Ok(()) => {
                write_file(&dir.join("config.toml"), cfg.to_toml_string())?;
                return Ok(dir);
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(io_err(&dir, e)),
        }
    }
    unreachable!("run directory suffixes exhausted")
}

/// Trajectories from `path`, then `data.trajectories`, then the simulator.
pub fn load_dataset(cfg: &RunConfig, path: Option<&Path>) -> CliResult<TrajectoryDataset> {
    match path.or(cfg.data.trajectories.as_deref()) {
        Some(p) => Ok(load_trajectories(p)?),
        None => Ok(simulate_crowd(&cfg.sim)?),
    }
}

pub struct Split {
    pub train: Vec<TrajectoryWindow>,
    pub test: Vec<TrajectoryWindow>,
}

/// Cuts the frame span in time: the last `test_fraction` of it is held out.
pub fn split_windows(cfg: &RunConfig, dataset: &TrajectoryDataset) -> CliResult<Split> {
    let (obs, pred) = (cfg.eval.obs_frames, cfg.eval.pred_frames);
    let Some((first, last)) = dataset.frame_span() else {
        return Err(CliError::Runtime(Error::Protocol(
            "trajectory data has no records".into(),
        )));
    };
    let span = (last - first) as u64 + 1;
    let cut = first + ((span as f64) * (1.0 - cfg.data.test_fraction)).round() as u32;
    let train = window_split(
        &dataset.subset(first, cut),
        obs,
        pred,
        cfg.data.train_stride,
    )?;
    let test = window_split(
        &dataset.subset(cut, last.saturating_add(1)),
        obs,
        pred,
        cfg.data.test_stride,
    )?;
    if train.is_empty() || test.is_empty() {
        return Err(CliError::Runtime(Error::Protocol(format!(
            "frames {first}..={last} give {} training and {} test windows of {} frames; \
             both splits need at least one",
            train.len(),
            test.len(),
            obs + pred
        ))));
    }
    Ok(Split { train, test })
}
