//! Crowd density forecasting as masked space-time completion.
//!
//! Pedestrian trajectories are rendered into density maps ([`density`]),
//! cut into space-time cube tokens ([`tokenizer`]) and completed by a
//! masked-autoencoder transformer ([`model`]) trained with temporal- and
//! density-aware masking ([`masking`]). [`simdata`] provides a crowd
//! simulator, trajectory I/O and miss-detection corruption; [`eval`]
//! scores forecasts and runs ablations; [`config`] ties every section
//! into one run document.

pub mod config;
pub mod density;
pub mod error;
pub mod eval;
pub mod masking;
pub mod model;
pub mod simdata;
pub mod tokenizer;

pub use error::{Error, Result};
