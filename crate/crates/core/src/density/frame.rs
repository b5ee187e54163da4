use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Seconds between consecutive density frames.
pub const DEFAULT_FRAME_INTERVAL: f64 = 0.4;

/// A single `height x width` crowd density map, stored row-major.
///
/// Every value is finite and lies in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityFrame {
    width: usize,
    height: usize,
    values: Vec<f32>,
}

impl DensityFrame {
    pub fn zeros(width: usize, height: usize) -> Self {
        DensityFrame {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::param(format!(
                "frame dimensions must be positive, got {width}x{height}"
            )));
        }
        if values.len() != width * height {
            return Err(Error::param(format!(
                "frame of {width}x{height} needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if let Some(i) = values
            .iter()
            .position(|v| !v.is_finite() || *v < 0.0 || *v > 1.0)
        {
            return Err(Error::Range(format!(
                "density value {} at index {i} outside [0, 1]",
                values[i]
            )));
        }
        Ok(DensityFrame {
            width,
            height,
            values,
        })
    }

    /// Builds a frame from arbitrary reals, clamping each into `[0, 1]`.
    /// Non-finite inputs become 0.
    pub fn from_clamped(
        width: usize,
        height: usize,
        values: impl IntoIterator<Item = f64>,
    ) -> Self {
        let values: Vec<f32> = values
            .into_iter()
            .map(|v| {
                if v.is_finite() {
                    v.clamp(0.0, 1.0) as f32
                } else {
                    0.0
                }
            })
            .collect();
        assert_eq!(values.len(), width * height, "frame size mismatch");
        DensityFrame {
            width,
            height,
            values,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }

    pub fn total(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum()
    }
}

/// An ordered run of equally sized density frames.
#[derive(Debug, Clone, PartialEq)]
pub struct DensitySequence {
    frames: Vec<DensityFrame>,
    frame_interval: f64,
}

impl DensitySequence {
    pub fn new(frames: Vec<DensityFrame>, frame_interval: f64) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::param("density sequence needs at least one frame"));
        };
        let (w, h) = (first.width, first.height);
        if let Some(t) = frames.iter().position(|f| f.width != w || f.height != h) {
            return Err(Error::param(format!(
                "frame {t} is {}x{}, expected {w}x{h}",
                frames[t].width, frames[t].height
            )));
        }
        if !(frame_interval.is_finite() && frame_interval > 0.0) {
            return Err(Error::param(format!(
                "frame interval must be positive, got {frame_interval}"
            )));
        }
        Ok(DensitySequence {
            frames,
            frame_interval,
        })
    }

    pub fn zeros(len: usize, width: usize, height: usize) -> Self {
        DensitySequence {
            frames: vec![DensityFrame::zeros(width, height); len],
            frame_interval: DEFAULT_FRAME_INTERVAL,
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width
    }

    pub fn height(&self) -> usize {
        self.frames[0].height
    }

    pub fn frame_interval(&self) -> f64 {
        self.frame_interval
    }

    pub fn frames(&self) -> &[DensityFrame] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &DensityFrame {
        &self.frames[t]
    }

    pub fn into_frames(self) -> Vec<DensityFrame> {
        self.frames
    }

    /// Frames `range` as a new sequence with the same interval.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.frames.len() {
            return Err(Error::param(format!(
                "frame range {range:?} invalid for a sequence of {} frames",
                self.frames.len()
            )));
        }
        DensitySequence::new(self.frames[range].to_vec(), self.frame_interval)
    }

    /// Concatenation along time; both sequences must share their frame size.
    pub fn concat(&self, other: &DensitySequence) -> Result<Self> {
        let mut frames = self.frames.clone();
        frames.extend_from_slice(&other.frames);
        DensitySequence::new(frames, self.frame_interval)
    }

    pub fn total(&self) -> f64 {
        self.frames.iter().map(DensityFrame::total).sum()
    }
}

/// How the per-pedestrian Gaussian is scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KernelNorm {
    /// Peak value 1 at the pedestrian position.
    #[default]
    Peak,
    /// Unit mass, `1 / (2 pi sigma^2)` at the peak.
    Mass,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub sigma: f64,
    #[serde(default)]
    pub norm: KernelNorm,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec {
            sigma: 3.0,
            norm: KernelNorm::Peak,
        }
    }
}

impl KernelSpec {
    pub fn peak(sigma: f64) -> Self {
        KernelSpec {
            sigma,
            norm: KernelNorm::Peak,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::param(format!(
                "kernel sigma must be positive, got {}",
                self.sigma
            )));
        }
        Ok(())
    }

    /// Kernel support radius in pixels.
    pub fn radius(&self) -> usize {
        (4.0 * self.sigma).ceil() as usize
    }

    fn amplitude(&self) -> f64 {
        match self.norm {
            KernelNorm::Peak => 1.0,
            KernelNorm::Mass => 1.0 / (2.0 * std::f64::consts::PI * self.sigma * self.sigma),
        }
    }
}

/// Rasterizes pedestrian positions `(x, y)` (x = column, y = row, pixel
/// centers at integer coordinates) with peak-normalized Gaussians.
pub fn rasterize_frame(
    positions: &[(f64, f64)],
    width: usize,
    height: usize,
    sigma: f64,
) -> Result<DensityFrame> {
    rasterize_frame_with(positions, width, height, &KernelSpec::peak(sigma))
}

pub fn rasterize_frame_with(
    positions: &[(f64, f64)],
    width: usize,
    height: usize,
    kernel: &KernelSpec,
) -> Result<DensityFrame> {
    kernel.validate()?;
    if width == 0 || height == 0 {
        return Err(Error::param(format!(
            "frame dimensions must be positive, got {width}x{height}"
        )));
    }
    for &(x, y) in positions {
        if !(x >= 0.0 && x < width as f64 && y >= 0.0 && y < height as f64) {
            return Err(Error::Range(format!(
                "position ({x}, {y}) outside the {width}x{height} scene"
            )));
        }
    }

    let radius = kernel.radius() as f64;
    let inv_two_var = 1.0 / (2.0 * kernel.sigma * kernel.sigma);
    let amplitude = kernel.amplitude();
    let mut acc = vec![0.0f64; width * height];
    for &(x, y) in positions {
        let c0 = (x - radius).ceil().max(0.0) as usize;
        let c1 = ((x + radius).floor() as usize).min(width - 1);
        let r0 = (y - radius).ceil().max(0.0) as usize;
        let r1 = ((y + radius).floor() as usize).min(height - 1);
        for row in r0..=r1 {
            let dy = row as f64 - y;
            let line = &mut acc[row * width..(row + 1) * width];
            for (col, cell) in line.iter_mut().enumerate().take(c1 + 1).skip(c0) {
                let dx = col as f64 - x;
                let d2 = dx * dx + dy * dy;
                if d2 <= radius * radius {
                    *cell += amplitude * (-d2 * inv_two_var).exp();
                }
            }
        }
    }
    Ok(DensityFrame::from_clamped(width, height, acc))
}
