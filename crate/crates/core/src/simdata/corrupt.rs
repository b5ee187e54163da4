use std::collections::HashSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simdata::TrajectoryDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionMode {
    /// Each `(agent, frame)` record is dropped independently.
    #[default]
    PerRecord,
    /// Each agent loses all of its in-scope records at once.
    WholeTrack,
}

/// Synthetic miss-detections.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionSpec {
    pub miss_ratio: f64,
    pub mode: CorruptionMode,
    /// Frames `[start, end)` eligible for removal; records elsewhere are
    /// kept. `None` means every frame.
    pub frames: Option<(u32, u32)>,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.miss_ratio) {
            return Err(Error::param(format!(
                "miss ratio must lie in [0, 1], got {}",
                self.miss_ratio
            )));
        }
        Ok(())
    }

    fn in_scope(&self, frame: u32) -> bool {
        self.frames.is_none_or(|(s, e)| (s..e).contains(&frame))
    }
}

/// Removes records at random; surviving records are untouched.
pub fn corrupt_missdetect(
    dataset: &TrajectoryDataset,
    spec: &CorruptionSpec,
) -> Result<TrajectoryDataset> {
    spec.validate()?;
    if spec.miss_ratio == 0.0 {
        return Ok(dataset.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let kept = match spec.mode {
        CorruptionMode::PerRecord => dataset
            .records()
            .iter()
            .filter(|r| !(spec.in_scope(r.frame) && rng.gen::<f64>() < spec.miss_ratio))
            .copied()
            .collect(),
        CorruptionMode::WholeTrack => {
            let mut agents: Vec<u32> = dataset
                .records()
                .iter()
                .filter(|r| spec.in_scope(r.frame))
                .map(|r| r.agent)
                .collect::<HashSet<_>>()
                .into_iter()
                .collect();
            agents.sort_unstable();
            let dropped: HashSet<u32> = agents
                .into_iter()
                .filter(|_| rng.gen::<f64>() < spec.miss_ratio)
                .collect();
            dataset
                .records()
                .iter()
                .filter(|r| !(spec.in_scope(r.frame) && dropped.contains(&r.agent)))
                .copied()
                .collect()
        }
    };
    Ok(TrajectoryDataset::from_sorted_unchecked(
        kept,
        dataset.frame_interval(),
    ))
}
