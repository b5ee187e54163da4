pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod gradcheck;
pub mod matrix;
pub mod network;
pub mod optim;
pub mod tape;
pub mod train;

pub use augment::{augment, Transform};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use config::{AugmentPolicy, ModelConfig, TrainConfig};
pub use gradcheck::{grad_check, GradCheckReport, GradSample};
pub use matrix::Matrix;
pub use network::{
    embed_tokens, forward, forward_tokens, loss_and_grads, masked_mse_loss, position_embedding,
    predict_future, ModelState, Param,
};
pub use optim::{AdamW, LrSchedule};
pub use train::{history_csv, train, train_from, EpochStats, TrainOutcome};
