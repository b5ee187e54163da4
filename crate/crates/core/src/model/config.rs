use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Transformer sizes. The encoder works at `embed_dim`, the decoder at
/// `decoder_dim`; both use `heads` attention heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub encoder_depth: usize,
    pub decoder_dim: usize,
    pub decoder_depth: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 64,
            encoder_depth: 4,
            decoder_dim: 32,
            decoder_depth: 2,
            heads: 4,
            mlp_ratio: 4.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("embed_dim", self.embed_dim),
            ("encoder_depth", self.encoder_depth),
            ("decoder_dim", self.decoder_dim),
            ("decoder_depth", self.decoder_depth),
            ("heads", self.heads),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::param(format!("{name} must be positive")));
            }
        }
        for (name, dim) in [
            ("embed_dim", self.embed_dim),
            ("decoder_dim", self.decoder_dim),
        ] {
            if dim % self.heads != 0 {
                return Err(Error::param(format!(
                    "{name} {dim} is not divisible by {} heads",
                    self.heads
                )));
            }
            if dim < 6 || dim % 2 != 0 {
                return Err(Error::param(format!(
                    "{name} must be even and at least 6 for position embeddings, got {dim}"
                )));
            }
        }
        if !(self.mlp_ratio.is_finite() && self.mlp_ratio > 0.0) {
            return Err(Error::param(format!(
                "mlp_ratio must be positive, got {}",
                self.mlp_ratio
            )));
        }
        Ok(())
    }

    pub(crate) fn hidden(&self, dim: usize) -> usize {
        ((dim as f64 * self.mlp_ratio).round() as usize).max(1)
    }
}

/// Which geometric augmentations training may apply; each enabled one
/// fires with probability one half.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentPolicy {
    pub rotate: bool,
    pub hflip: bool,
    pub vflip: bool,
    pub scale: bool,
    pub scale_range: (f64, f64),
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            rotate: true,
            hflip: true,
            vflip: true,
            scale: true,
            scale_range: (0.8, 1.25),
        }
    }
}

impl AugmentPolicy {
    pub fn none() -> Self {
        AugmentPolicy {
            rotate: false,
            hflip: false,
            vflip: false,
            scale: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scale_range;
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
            return Err(Error::param(format!(
                "scale_range must satisfy 0 < lo <= hi, got ({lo}, {hi})"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Learning rate for a batch of 256; the peak rate is
    /// `base_lr * batch_size / 256`.
    pub base_lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Linear warmup length; runs shorter than this warm up throughout.
    pub warmup_epochs: usize,
    pub batch_size: usize,
    /// Frames of each window treated as observation.
    pub obs_frames: usize,
    pub augment: AugmentPolicy,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 5e-4,
            weight_decay: 1e-5,
            epochs: 200,
            warmup_epochs: 10,
            batch_size: 32,
            obs_frames: 8,
            augment: AugmentPolicy::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(Error::param(format!(
                "base_lr must be positive, got {}",
                self.base_lr
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::param(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.obs_frames == 0 {
            return Err(Error::param(
                "epochs, batch_size and obs_frames must be positive",
            ));
        }
        self.augment.validate()
    }

    pub fn peak_lr(&self) -> f64 {
        self.base_lr * self.batch_size as f64 / 256.0
    }
}
