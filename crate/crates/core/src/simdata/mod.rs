//! Trajectory data: the synthetic crowd simulator, the flat text format,
//! windowing into training samples and synthetic miss-detections.

mod corrupt;
mod dataset;
mod sim;
mod window;

pub use corrupt::{corrupt_missdetect, CorruptionMode, CorruptionSpec};
pub use dataset::{
    format_trajectories, load_trajectories, parse_trajectories, save_trajectories, TrackRecord,
    TrajectoryDataset,
};
pub use sim::{simulate_crowd, SimConfig};
pub use window::{window_split, TrajectoryWindow};
