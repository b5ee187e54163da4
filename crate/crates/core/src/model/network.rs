//! The masked autoencoder: cube projection, fixed space-time position
//! embeddings, a pre-norm transformer encoder over visible tokens and a
//! lighter decoder that sees every position.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::density::DensitySequence;
use crate::error::{Error, Result};
use crate::masking::{inference_mask, MaskPlan};
use crate::model::config::ModelConfig;
use crate::model::matrix::{matmul, Matrix};
use crate::model::tape::{Tape, Var};
use crate::tokenizer::{cubify, decubify, CubeGrid, TokenField};

const MASK_TOKEN_STD: f64 = 0.02;
const HEAD_INIT_GAIN: f64 = 0.1;

/// One named tensor with its AdamW moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
    pub m: Matrix,
    pub v: Matrix,
}

impl Param {
    fn new(name: String, value: Matrix) -> Self {
        let (r, c) = (value.rows, value.cols);
        Param {
            name,
            value,
            m: Matrix::zeros(r, c),
            v: Matrix::zeros(r, c),
        }
    }

    /// Weight decay applies to projection matrices only.
    pub fn decays(&self) -> bool {
        self.name.ends_with(".weight")
    }
}

#[derive(Debug, Clone, PartialEq)]
struct BlockIdx {
    norm1: (usize, usize),
    qkv: (usize, usize),
    proj: (usize, usize),
    norm2: (usize, usize),
    fc1: (usize, usize),
    fc2: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
struct ParamIdx {
    patch: (usize, usize),
    encoder: Vec<BlockIdx>,
    encoder_norm: (usize, usize),
    mask_token: usize,
    decoder_embed: (usize, usize),
    decoder: Vec<BlockIdx>,
    decoder_norm: (usize, usize),
    head: (usize, usize),
}

/// Names and shapes of every parameter, in storage order.
struct Spec {
    entries: Vec<(String, usize, usize, Init)>,
}

#[derive(Clone, Copy)]
enum Init {
    Xavier,
    /// Xavier scaled by [`HEAD_INIT_GAIN`].
    Head,
    Zeros,
    Ones,
    MaskToken,
}

impl Spec {
    fn add(&mut self, name: String, rows: usize, cols: usize, init: Init) -> usize {
        self.entries.push((name, rows, cols, init));
        self.entries.len() - 1
    }

    fn linear(&mut self, prefix: &str, inp: usize, out: usize) -> (usize, usize) {
        (
            self.add(format!("{prefix}.weight"), inp, out, Init::Xavier),
            self.add(format!("{prefix}.bias"), 1, out, Init::Zeros),
        )
    }

    fn norm(&mut self, prefix: &str, dim: usize) -> (usize, usize) {
        (
            self.add(format!("{prefix}.gamma"), 1, dim, Init::Ones),
            self.add(format!("{prefix}.beta"), 1, dim, Init::Zeros),
        )
    }

    fn block(&mut self, prefix: &str, dim: usize, hidden: usize) -> BlockIdx {
        BlockIdx {
            norm1: self.norm(&format!("{prefix}.norm1"), dim),
            qkv: self.linear(&format!("{prefix}.attn.qkv"), dim, 3 * dim),
            proj: self.linear(&format!("{prefix}.attn.proj"), dim, dim),
            norm2: self.norm(&format!("{prefix}.norm2"), dim),
            fc1: self.linear(&format!("{prefix}.mlp.fc1"), dim, hidden),
            fc2: self.linear(&format!("{prefix}.mlp.fc2"), hidden, dim),
        }
    }
}

fn layout(cfg: &ModelConfig, token_len: usize) -> (Spec, ParamIdx) {
    let mut s = Spec {
        entries: Vec::new(),
    };
    let (f, d) = (cfg.embed_dim, cfg.decoder_dim);
    let patch = s.linear("patch_embed", token_len, f);
    let encoder = (0..cfg.encoder_depth)
        .map(|i| s.block(&format!("encoder.{i}"), f, cfg.hidden(f)))
        .collect();
    let encoder_norm = s.norm("encoder.norm", f);
    let mask_token = s.add("mask_token".into(), 1, f, Init::MaskToken);
    let decoder_embed = s.linear("decoder_embed", f, d);
    let decoder = (0..cfg.decoder_depth)
        .map(|i| s.block(&format!("decoder.{i}"), d, cfg.hidden(d)))
        .collect();
    let decoder_norm = s.norm("decoder.norm", d);
    let head = (
        s.add("head.weight".into(), d, token_len, Init::Head),
        s.add("head.bias".into(), 1, token_len, Init::Zeros),
    );
    let idx = ParamIdx {
        patch,
        encoder,
        encoder_norm,
        mask_token,
        decoder_embed,
        decoder,
        decoder_norm,
        head,
    };
    (s, idx)
}

/// Parameters, optimizer moments and the geometry they were trained for.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    config: ModelConfig,
    grid: CubeGrid,
    obs_frames: usize,
    params: Vec<Param>,
    idx: ParamIdx,
    /// Optimizer steps taken.
    pub step: u64,
    /// Completed training epochs.
    pub epoch: usize,
}

impl ModelState {
    /// Freshly initialized model: Xavier-uniform projections (scaled down
    /// for the output head), zero biases, unit norm gains and a small
    /// Gaussian mask token.
    pub fn new(config: ModelConfig, grid: CubeGrid, obs_frames: usize, seed: u64) -> Result<Self> {
        check_geometry(&config, &grid, obs_frames)?;
        let (spec, idx) = layout(&config, grid.token_len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, MASK_TOKEN_STD).expect("valid std");
        let params = spec
            .entries
            .into_iter()
            .map(|(name, rows, cols, init)| {
                let value = match init {
                    Init::Zeros => Matrix::zeros(rows, cols),
                    Init::Ones => Matrix::filled(rows, cols, 1.0),
                    Init::Xavier | Init::Head => {
                        let gain = if matches!(init, Init::Head) {
                            HEAD_INIT_GAIN
                        } else {
                            1.0
                        };
                        let limit = gain * (6.0 / (rows + cols) as f64).sqrt();
                        Matrix::from_vec(
                            rows,
                            cols,
                            (0..rows * cols)
                                .map(|_| rng.gen_range(-limit..limit))
                                .collect(),
                        )
                    }
                    Init::MaskToken => Matrix::from_vec(
                        rows,
                        cols,
                        (0..rows * cols).map(|_| normal.sample(&mut rng)).collect(),
                    ),
                };
                Param::new(name, value)
            })
            .collect();
        Ok(ModelState {
            config,
            grid,
            obs_frames,
            params,
            idx,
            step: 0,
            epoch: 0,
        })
    }

    /// Rebuilds a state from named tensors, e.g. a decoded checkpoint.
    /// Every expected tensor must be present with the right shape.
    pub fn from_params(
        config: ModelConfig,
        grid: CubeGrid,
        obs_frames: usize,
        mut named: Vec<Param>,
        step: u64,
        epoch: usize,
    ) -> Result<Self> {
        check_geometry(&config, &grid, obs_frames)?;
        let (spec, idx) = layout(&config, grid.token_len());
        if named.len() != spec.entries.len() {
            return Err(Error::Format(format!(
                "expected {} parameters, found {}",
                spec.entries.len(),
                named.len()
            )));
        }
        let mut params = Vec::with_capacity(named.len());
        for (name, rows, cols, _) in spec.entries {
            let pos = named
                .iter()
                .position(|p| p.name == name)
                .ok_or_else(|| Error::Format(format!("missing parameter `{name}`")))?;
            let p = named.swap_remove(pos);
            for (what, m) in [("value", &p.value), ("adam_m", &p.m), ("adam_v", &p.v)] {
                if m.rows != rows || m.cols != cols {
                    return Err(Error::Format(format!(
                        "parameter `{name}` {what} is {}x{}, expected {rows}x{cols}",
                        m.rows, m.cols
                    )));
                }
                if m.data.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Format(format!(
                        "parameter `{name}` {what} is not finite"
                    )));
                }
            }
            params.push(p);
        }
        Ok(ModelState {
            config,
            grid,
            obs_frames,
            params,
            idx,
            step,
            epoch,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn grid(&self) -> &CubeGrid {
        &self.grid
    }

    pub fn obs_frames(&self) -> usize {
        self.obs_frames
    }

    pub fn pred_frames(&self) -> usize {
        self.grid.frames - self.obs_frames
    }

    pub fn obs_slices(&self) -> usize {
        self.obs_frames / self.grid.cube_t
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    #[cfg(test)]
    pub(crate) fn mask_token_index(&self) -> usize {
        self.idx.mask_token
    }
}

fn check_geometry(config: &ModelConfig, grid: &CubeGrid, obs_frames: usize) -> Result<()> {
    config.validate()?;
    grid.validate()?;
    if !obs_frames.is_multiple_of(grid.cube_t) {
        return Err(Error::param(format!(
            "observation length {obs_frames} is not a multiple of the cube length {}",
            grid.cube_t
        )));
    }
    let obs_slices = obs_frames / grid.cube_t;
    if obs_slices == 0 || obs_slices >= grid.temporal_tokens() {
        return Err(Error::param(format!(
            "observation length {obs_frames} must leave both observed and future slices in {} frames",
            grid.frames
        )));
    }
    Ok(())
}

fn axis_embedding(out: &mut [f64], pos: f64) {
    let half = out.len() / 2;
    for i in 0..half {
        let omega = 1.0 / 10000f64.powf(i as f64 / half as f64);
        out[i] = (pos * omega).sin();
        out[half + i] = (pos * omega).cos();
    }
}

/// Fixed sinusoidal embedding factored over (slice, block row, block
/// column). The first two axes get `2 * floor(dim / 6)` channels each and
/// the column axis the rest.
pub fn position_embedding(grid: &CubeGrid, dim: usize) -> Result<Matrix> {
    if dim < 6 || !dim.is_multiple_of(2) {
        return Err(Error::param(format!(
            "position embedding width must be even and >= 6, got {dim}"
        )));
    }
    let a = 2 * (dim / 6);
    let n = grid.num_tokens();
    let mut m = Matrix::zeros(n, dim);
    for i in 0..n {
        let (r, by, bx) = grid.token_coords(i);
        let row = m.row_mut(i);
        let (t_part, rest) = row.split_at_mut(a);
        let (y_part, x_part) = rest.split_at_mut(a);
        axis_embedding(t_part, r as f64);
        axis_embedding(y_part, by as f64);
        axis_embedding(x_part, bx as f64);
    }
    Ok(m)
}

fn token_matrix(tokens: &TokenField) -> Matrix {
    let g = tokens.grid();
    Matrix::from_vec(g.num_tokens(), g.token_len(), tokens.values().to_vec())
}

fn check_tokens(state: &ModelState, tokens: &TokenField) -> Result<()> {
    if tokens.grid() != &state.grid {
        return Err(Error::param(format!(
            "token grid {:?} does not match model grid {:?}",
            tokens.grid(),
            state.grid
        )));
    }
    Ok(())
}

/// Linear projection of every token to `embed_dim` channels.
pub fn embed_tokens(tokens: &TokenField, state: &ModelState) -> Result<Matrix> {
    check_tokens(state, tokens)?;
    let (w, b) = state.idx.patch;
    let mut out = matmul(&token_matrix(tokens), &state.params[w].value);
    let bias = &state.params[b].value;
    for r in 0..out.rows {
        out.row_mut(r)
            .iter_mut()
            .zip(&bias.data)
            .for_each(|(o, b)| *o += b);
    }
    Ok(out)
}

fn block(tape: &mut Tape, p: &[Var], b: &BlockIdx, x: Var, heads: usize) -> Var {
    let h = tape.layer_norm(x, p[b.norm1.0], p[b.norm1.1]);
    let h = tape.matmul(h, p[b.qkv.0]);
    let h = tape.add_bias(h, p[b.qkv.1]);
    let h = tape.attention(h, heads);
    let h = tape.matmul(h, p[b.proj.0]);
    let h = tape.add_bias(h, p[b.proj.1]);
    let x = tape.add(x, h);
    let h = tape.layer_norm(x, p[b.norm2.0], p[b.norm2.1]);
    let h = tape.matmul(h, p[b.fc1.0]);
    let h = tape.add_bias(h, p[b.fc1.1]);
    let h = tape.gelu(h);
    let h = tape.matmul(h, p[b.fc2.0]);
    let h = tape.add_bias(h, p[b.fc2.1]);
    tape.add(x, h)
}

/// Records the full forward pass on `tape`, feeding the encoder the
/// `visible` tokens in the given order. Returns the parameter leaves and
/// the `num_tokens x token_len` prediction.
fn build(
    tape: &mut Tape,
    state: &ModelState,
    tokens: &Matrix,
    visible: &[usize],
    masked: &[usize],
) -> Result<(Vec<Var>, Var)> {
    let idx = &state.idx;
    let cfg = &state.config;
    let p: Vec<Var> = state
        .params
        .iter()
        .enumerate()
        .map(|(i, prm)| tape.param(i, prm.value.clone()))
        .collect();
    let enc_pos = position_embedding(&state.grid, cfg.embed_dim)?;
    let dec_pos = position_embedding(&state.grid, cfg.decoder_dim)?;

    let x = tape.constant(tokens.gather_rows(visible));
    let x = tape.matmul(x, p[idx.patch.0]);
    let x = tape.add_bias(x, p[idx.patch.1]);
    let pos = tape.constant(enc_pos.gather_rows(visible));
    let mut x = tape.add(x, pos);
    for b in &idx.encoder {
        x = block(tape, &p, b, x, cfg.heads);
    }
    let x = tape.layer_norm(x, p[idx.encoder_norm.0], p[idx.encoder_norm.1]);

    let full = tape.scatter_rows(x, p[idx.mask_token], visible.to_vec(), masked.to_vec());
    let y = tape.matmul(full, p[idx.decoder_embed.0]);
    let y = tape.add_bias(y, p[idx.decoder_embed.1]);
    let pos = tape.constant(dec_pos);
    let mut y = tape.add(y, pos);
    for b in &idx.decoder {
        y = block(tape, &p, b, y, cfg.heads);
    }
    let y = tape.layer_norm(y, p[idx.decoder_norm.0], p[idx.decoder_norm.1]);
    let y = tape.matmul(y, p[idx.head.0]);
    let y = tape.add_bias(y, p[idx.head.1]);
    Ok((p, y))
}

fn check_plan(state: &ModelState, plan: &MaskPlan) -> Result<()> {
    if plan.slices() != state.grid.temporal_tokens()
        || plan.spatial() != state.grid.spatial_tokens()
    {
        return Err(Error::param(format!(
            "mask plan is {}x{}, model expects {}x{}",
            plan.slices(),
            plan.spatial(),
            state.grid.temporal_tokens(),
            state.grid.spatial_tokens()
        )));
    }
    if plan.masked_count() == plan.mask().len() {
        return Err(Error::DegenerateMask("plan leaves no visible token".into()));
    }
    Ok(())
}

pub(crate) fn forward_ordered(
    state: &ModelState,
    tokens: &TokenField,
    visible: &[usize],
    masked: &[usize],
) -> Result<TokenField> {
    let mut tape = Tape::new();
    let (_, out) = build(&mut tape, state, &token_matrix(tokens), visible, masked)?;
    TokenField::new(state.grid, tape.value(out).data.clone())
}

/// Reconstructs every token from the visible ones.
pub fn forward_tokens(
    state: &ModelState,
    tokens: &TokenField,
    plan: &MaskPlan,
) -> Result<TokenField> {
    check_tokens(state, tokens)?;
    check_plan(state, plan)?;
    forward_ordered(
        state,
        tokens,
        &plan.visible_indices(),
        &plan.masked_indices(),
    )
}

pub fn forward(state: &ModelState, seq: &DensitySequence, plan: &MaskPlan) -> Result<TokenField> {
    forward_tokens(state, &cubify(seq, &state.grid)?, plan)
}

/// Mean squared error over the values of masked tokens only.
pub fn masked_mse_loss(recon: &TokenField, target: &TokenField, plan: &MaskPlan) -> Result<f64> {
    if recon.grid() != target.grid() {
        return Err(Error::param("reconstruction and target grids differ"));
    }
    let g = recon.grid();
    if plan.mask().len() != g.num_tokens() {
        return Err(Error::param("mask plan does not match token count"));
    }
    let masked = plan.masked_indices();
    if masked.is_empty() {
        return Err(Error::DegenerateMask("plan masks no token".into()));
    }
    let mut acc = 0.0;
    for &i in &masked {
        for (a, b) in recon.token(i).iter().zip(target.token(i)) {
            acc += (a - b) * (a - b);
        }
    }
    Ok(acc / (masked.len() * g.token_len()) as f64)
}

/// Loss and gradient for one sample, gradients indexed like
/// [`ModelState::params`].
pub fn loss_and_grads(
    state: &ModelState,
    tokens: &TokenField,
    plan: &MaskPlan,
) -> Result<(f64, Vec<Matrix>)> {
    check_tokens(state, tokens)?;
    check_plan(state, plan)?;
    let masked = plan.masked_indices();
    if masked.is_empty() {
        return Err(Error::DegenerateMask("plan masks no token".into()));
    }
    let target = token_matrix(tokens);
    let mut tape = Tape::new();
    let (_, out) = build(&mut tape, state, &target, &plan.visible_indices(), &masked)?;
    let loss = tape.masked_mse(out, &target, masked);
    let value = tape.value(loss).data[0];
    let mut grads: Vec<Matrix> = state
        .params
        .iter()
        .map(|p| Matrix::zeros(p.value.rows, p.value.cols))
        .collect();
    for (i, g) in tape.backward(loss).grads {
        grads[i].add_assign(&g);
    }
    Ok((value, grads))
}

/// Forecasts the frames after `obs`: the future is zero-filled, hidden by
/// the inference mask and reconstructed, then clamped to `[0, 1]`.
pub fn predict_future(obs: &DensitySequence, state: &ModelState) -> Result<DensitySequence> {
    let g = &state.grid;
    if obs.len() != state.obs_frames || obs.height() != g.height || obs.width() != g.width {
        return Err(Error::param(format!(
            "observation is {}x{}x{}, model expects {}x{}x{}",
            obs.len(),
            obs.height(),
            obs.width(),
            state.obs_frames,
            g.height,
            g.width
        )));
    }
    let future = DensitySequence::zeros(state.pred_frames(), g.width, g.height);
    let full = obs.concat(&future)?;
    let plan = inference_mask(g.temporal_tokens(), g.spatial_tokens(), state.obs_slices())?;
    let recon = forward(state, &full, &plan)?;
    decubify(&recon, true)?.slice(state.obs_frames..g.frames)
}
