mod commands;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Masked crowd-density completion: simulate, train, evaluate and ablate.
#[derive(Debug, Parser)]
#[command(name = "crowdfc", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration; defaults apply to anything it leaves out.
    #[arg(long, short = 'c', global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Override one config value, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a moving crowd and write its trajectory file.
    Simulate {
        /// Output trajectory file; defaults to a new run directory.
        #[arg(long, short = 'o', value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Render trajectories into a density sequence (CDMP) and PGM frames.
    Rasterize {
        /// Trajectory file; defaults to `data.trajectories` or a simulation.
        #[arg(long, value_name = "FILE")]
        trajectories: Option<PathBuf>,
        /// First frame to render, relative to the start of the data.
        #[arg(long, default_value_t = 0)]
        start: usize,
        /// Number of frames; defaults to the rest of the data.
        #[arg(long)]
        frames: Option<usize>,
        /// Also write one PGM image per frame.
        #[arg(long)]
        pgm: bool,
    },
    /// Train a model on the training split.
    Train {
        /// Continue from this checkpoint instead of a fresh model.
        #[arg(long, value_name = "CHECKPOINT")]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint on the test split against persistence.
    Eval {
        #[arg(long, value_name = "CHECKPOINT")]
        checkpoint: PathBuf,
        /// Drop this share of observed records; overrides `eval.input`.
        #[arg(long, value_name = "P")]
        miss_ratio: Option<f64>,
        /// Also evaluate at each of these comma-separated miss ratios.
        #[arg(long, value_name = "P,P,...", value_delimiter = ',')]
        sweep: Vec<f64>,
        /// Test window whose forecast is rendered as heatmaps.
        #[arg(long, default_value_t = 0)]
        window: usize,
    },
    /// Remove trajectory records to simulate missed detections.
    Corrupt {
        /// Trajectory file; defaults to `data.trajectories` or a simulation.
        #[arg(long, value_name = "FILE")]
        trajectories: Option<PathBuf>,
        #[arg(long, value_name = "P")]
        miss_ratio: f64,
        /// Output trajectory file; defaults to a new run directory.
        #[arg(long, short = 'o', value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Train and score one model per masking-ratio function.
    AblateTm,
    /// Train and score one model per training task combination.
    AblateTasks,
    /// Write the mask of every training task as CDMP sidecar files.
    MaskViz {
        /// Masking-ratio parameter; defaults to `tdm.lambda_max`.
        #[arg(long)]
        lambda: Option<f64>,
        /// Training window whose densities drive the sampling.
        #[arg(long, default_value_t = 0)]
        window: usize,
        /// Output directory; defaults to a new run directory.
        #[arg(long, short = 'o', value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match run::load_config(&cli.global) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("crowdfc: {e}");
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Simulate { out } => commands::simulate(&cfg, out),
        Command::Rasterize {
            trajectories,
            start,
            frames,
            pgm,
        } => commands::rasterize(&cfg, trajectories, start, frames, pgm),
        Command::Train { resume } => commands::train(&cfg, resume),
        Command::Eval {
            checkpoint,
            miss_ratio,
            sweep,
            window,
        } => commands::eval(&cfg, &checkpoint, miss_ratio, &sweep, window),
        Command::Corrupt {
            trajectories,
            miss_ratio,
            out,
        } => commands::corrupt(&cfg, trajectories, miss_ratio, out),
        Command::AblateTm => commands::ablate(&cfg, commands::Grid::TmFunctions),
        Command::AblateTasks => commands::ablate(&cfg, commands::Grid::Tasks),
        Command::MaskViz {
            lambda,
            window,
            out,
        } => commands::mask_viz(&cfg, lambda, window, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("crowdfc: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
