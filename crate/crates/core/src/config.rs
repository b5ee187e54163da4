//! The run configuration document: one TOML file covering every module,
//! plus `key.path=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::EvalProtocol;
use crate::masking::TdmConfig;
use crate::model::{ModelConfig, TrainConfig};
use crate::simdata::SimConfig;
use crate::tokenizer::CubeGrid;

/// Where training and evaluation windows come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Trajectory file to read; the simulator runs when absent.
    pub trajectories: Option<PathBuf>,
    /// Share of the frame span, taken from the end, held out for testing.
    pub test_fraction: f64,
    pub train_stride: usize,
    pub test_stride: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            trajectories: None,
            test_fraction: 0.2,
            train_stride: 4,
            test_stride: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Parent of the per-run output directories.
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("runs"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// When set, replaces the seeds of the sim, train and eval sections.
    pub seed: Option<u64>,
    pub sim: SimConfig,
    pub data: DataConfig,
    pub grid: CubeGrid,
    pub tdm: TdmConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalProtocol,
    pub output: OutputConfig,
}

fn section<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Config(format!("[{name}] {e}")))
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_value(parse_document(text)?)
    }

    fn from_value(value: toml::Value) -> Result<Self> {
        let mut cfg = RunConfig::deserialize(value).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(seed) = cfg.seed {
            cfg.sim.seed = seed;
            cfg.train.seed = seed;
            cfg.eval.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (or starts from defaults) and applies `overrides` of the
    /// form `section.key=value`, values written as TOML literals.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut doc = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                parse_document(&text)?
            }
            None => toml::Value::Table(Default::default()),
        };
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        Self::from_value(doc)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        section("sim", self.sim.validate())?;
        section("grid", self.grid.validate())?;
        section("tdm", self.tdm.validate())?;
        section("model", self.model.validate())?;
        section("train", self.train.validate())?;
        section("eval", self.eval.validate())?;
        let d = &self.data;
        if !(d.test_fraction > 0.0 && d.test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "[data] test_fraction must lie in (0, 1), got {}",
                d.test_fraction
            )));
        }
        if d.train_stride == 0 || d.test_stride == 0 {
            return Err(Error::Config("[data] strides must be positive".into()));
        }
        let window = self.eval.obs_frames + self.eval.pred_frames;
        if window != self.grid.frames {
            return Err(Error::Config(format!(
                "eval.obs_frames + eval.pred_frames = {window} but grid.frames = {}",
                self.grid.frames
            )));
        }
        if self.train.obs_frames != self.eval.obs_frames {
            return Err(Error::Config(format!(
                "train.obs_frames = {} but eval.obs_frames = {}",
                self.train.obs_frames, self.eval.obs_frames
            )));
        }
        if !self.eval.obs_frames.is_multiple_of(self.grid.cube_t) {
            return Err(Error::Config(format!(
                "eval.obs_frames = {} is not a multiple of grid.cube_t = {}",
                self.eval.obs_frames, self.grid.cube_t
            )));
        }
        if d.trajectories.is_none()
            && (self.sim.width != self.grid.width || self.sim.height != self.grid.height)
        {
            return Err(Error::Config(format!(
                "sim scene {}x{} differs from grid {}x{}",
                self.sim.width, self.sim.height, self.grid.width, self.grid.height
            )));
        }
        Ok(())
    }
}

fn parse_document(text: &str) -> Result<toml::Value> {
    text.parse::<toml::Table>()
        .map(toml::Value::Table)
        .map_err(|e| Error::Config(e.to_string()))
}

/// Sets `key.path=value` inside `doc`, creating intermediate tables.
pub fn apply_override(doc: &mut toml::Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key `{key}` is malformed")));
    }
    let mut node = doc;
    for part in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override key `{key}` crosses a non-table")))?;
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    node.as_table_mut()
        .ok_or_else(|| Error::Config(format!("override key `{key}` crosses a non-table")))?
        .insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
