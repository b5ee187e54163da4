//! Crowd density maps: rasterization of pedestrian positions, the
//! divergence metrics used to score forecasts, and the binary formats the
//! maps are exchanged in.

mod frame;
pub mod io;
mod metrics;
mod raster;

pub use frame::{
    rasterize_frame, rasterize_frame_with, DensityFrame, DensitySequence, KernelNorm, KernelSpec,
    DEFAULT_FRAME_INTERVAL,
};
pub use metrics::{
    js_divergence, kl_divergence, normalize_map, score_forecast, MetricReport, DEFAULT_EPSILON,
};
pub use raster::{rasterize_frames, rasterize_sequence};
