//! Space-time cube tokenization.
//!
//! A sequence of `T` frames of `H x W` pixels is cut into
//! `N_r = T / T_c` temporal slices and `N_s = (H / H_c) (W / W_c)` spatial
//! blocks. Token `(r, s)` holds the `T_c * H_c * W_c` pixels of slice `r`
//! and block `s`; tokens are indexed `r * N_s + s` (temporal-major), blocks
//! in row-major order, and values inside a token in `(t, row, col)` order.

use serde::{Deserialize, Serialize};

use crate::density::{DensityFrame, DensitySequence, DEFAULT_FRAME_INTERVAL};
use crate::error::{Error, Result};

/// Cube size plus the sequence geometry it tiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CubeGrid {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub cube_t: usize,
    pub cube_h: usize,
    pub cube_w: usize,
}

impl Default for CubeGrid {
    fn default() -> Self {
        CubeGrid {
            frames: 20,
            height: 80,
            width: 80,
            cube_t: 4,
            cube_h: 8,
            cube_w: 8,
        }
    }
}

impl CubeGrid {
    pub fn validate(&self) -> Result<()> {
        let axes = [
            ("time", self.frames, self.cube_t),
            ("height", self.height, self.cube_h),
            ("width", self.width, self.cube_w),
        ];
        for (axis, len, cube) in axes {
            if len == 0 || cube == 0 {
                return Err(Error::param(format!("{axis} axis: sizes must be positive")));
            }
            if len % cube != 0 {
                return Err(Error::param(format!(
                    "{axis} axis: cube size {cube} does not divide {len}"
                )));
            }
        }
        Ok(())
    }

    pub fn blocks_y(&self) -> usize {
        self.height / self.cube_h
    }

    pub fn blocks_x(&self) -> usize {
        self.width / self.cube_w
    }

    /// `N_s`.
    pub fn spatial_tokens(&self) -> usize {
        self.blocks_y() * self.blocks_x()
    }

    /// `N_r`.
    pub fn temporal_tokens(&self) -> usize {
        self.frames / self.cube_t
    }

    pub fn num_tokens(&self) -> usize {
        self.spatial_tokens() * self.temporal_tokens()
    }

    pub fn token_len(&self) -> usize {
        self.cube_t * self.cube_h * self.cube_w
    }

    /// `(slice, block_row, block_col)` of flat token index `i`.
    pub fn token_coords(&self, i: usize) -> (usize, usize, usize) {
        let ns = self.spatial_tokens();
        let (r, s) = (i / ns, i % ns);
        (r, s / self.blocks_x(), s % self.blocks_x())
    }

    /// Token index and in-token offset of pixel `(t, row, col)`.
    pub fn locate(&self, t: usize, row: usize, col: usize) -> (usize, usize) {
        let token = (t / self.cube_t) * self.spatial_tokens()
            + (row / self.cube_h) * self.blocks_x()
            + col / self.cube_w;
        let offset =
            ((t % self.cube_t) * self.cube_h + row % self.cube_h) * self.cube_w + col % self.cube_w;
        (token, offset)
    }

    fn check_sequence(&self, seq: &DensitySequence) -> Result<()> {
        self.validate()?;
        let dims = [
            ("time", seq.len(), self.frames),
            ("height", seq.height(), self.height),
            ("width", seq.width(), self.width),
        ];
        for (axis, got, want) in dims {
            if got != want {
                return Err(Error::param(format!(
                    "{axis} axis: sequence has {got}, grid expects {want}"
                )));
            }
        }
        Ok(())
    }
}

/// Tokens as a dense `num_tokens x token_len` row-major array.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenField {
    grid: CubeGrid,
    values: Vec<f64>,
}

impl TokenField {
    pub fn new(grid: CubeGrid, values: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if values.len() != grid.num_tokens() * grid.token_len() {
            return Err(Error::param(format!(
                "token field needs {} x {} values, got {}",
                grid.num_tokens(),
                grid.token_len(),
                values.len()
            )));
        }
        Ok(TokenField { grid, values })
    }

    pub fn grid(&self) -> &CubeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn token(&self, i: usize) -> &[f64] {
        let l = self.grid.token_len();
        &self.values[i * l..(i + 1) * l]
    }

    /// Token `(r, s)`.
    pub fn at(&self, r: usize, s: usize) -> &[f64] {
        self.token(r * self.grid.spatial_tokens() + s)
    }
}

pub fn cubify(seq: &DensitySequence, grid: &CubeGrid) -> Result<TokenField> {
    grid.check_sequence(seq)?;
    let l = grid.token_len();
    let mut values = vec![0.0; grid.num_tokens() * l];
    for (t, frame) in seq.frames().iter().enumerate() {
        for row in 0..grid.height {
            for col in 0..grid.width {
                let (tok, off) = grid.locate(t, row, col);
                values[tok * l + off] = frame.get(row, col) as f64;
            }
        }
    }
    Ok(TokenField {
        grid: *grid,
        values,
    })
}

/// Inverse of [`cubify`]. With `clamp` set (model output), values are
/// clamped into `[0, 1]`; otherwise they must already lie there.
pub fn decubify(tokens: &TokenField, clamp: bool) -> Result<DensitySequence> {
    let grid = tokens.grid;
    grid.validate()?;
    let l = grid.token_len();
    if tokens.values.len() != grid.num_tokens() * l {
        return Err(Error::param("token field shape inconsistent with its grid"));
    }
    let mut frames = Vec::with_capacity(grid.frames);
    for t in 0..grid.frames {
        let mut buf = Vec::with_capacity(grid.height * grid.width);
        for row in 0..grid.height {
            for col in 0..grid.width {
                let (tok, off) = grid.locate(t, row, col);
                buf.push(tokens.values[tok * l + off]);
            }
        }
        let frame = if clamp {
            DensityFrame::from_clamped(grid.width, grid.height, buf)
        } else {
            DensityFrame::new(
                grid.width,
                grid.height,
                buf.iter().map(|&v| v as f32).collect(),
            )?
        };
        frames.push(frame);
    }
    DensitySequence::new(frames, DEFAULT_FRAME_INTERVAL)
}

/// Per-token accumulated density `d[r][s]`, row-major `N_r x N_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityTable {
    slices: usize,
    spatial: usize,
    d: Vec<f64>,
}

impl DensityTable {
    pub fn from_values(slices: usize, spatial: usize, d: Vec<f64>) -> Result<Self> {
        if d.len() != slices * spatial {
            return Err(Error::param("density table size mismatch"));
        }
        if d.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Range(
                "accumulated densities must be finite and >= 0".into(),
            ));
        }
        Ok(DensityTable { slices, spatial, d })
    }

    pub fn slices(&self) -> usize {
        self.slices
    }

    pub fn spatial(&self) -> usize {
        self.spatial
    }

    pub fn slice(&self, r: usize) -> &[f64] {
        &self.d[r * self.spatial..(r + 1) * self.spatial]
    }

    pub fn get(&self, r: usize, s: usize) -> f64 {
        self.d[r * self.spatial + s]
    }

    pub fn total(&self) -> f64 {
        self.d.iter().sum()
    }
}

pub fn accumulated_density(seq: &DensitySequence, grid: &CubeGrid) -> Result<DensityTable> {
    grid.check_sequence(seq)?;
    Ok(accumulated_from_tokens(&cubify(seq, grid)?))
}

pub fn accumulated_from_tokens(tokens: &TokenField) -> DensityTable {
    let grid = tokens.grid;
    let d = (0..grid.num_tokens())
        .map(|i| tokens.token(i).iter().sum())
        .collect();
    DensityTable {
        slices: grid.temporal_tokens(),
        spatial: grid.spatial_tokens(),
        d,
    }
}
