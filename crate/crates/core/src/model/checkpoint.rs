//! `CDCK` checkpoint files.
//!
//! Layout: the 8-byte magic `CDCK\0\0\0\1`; a little-endian `u32` length
//! and that many bytes of JSON header (model config, cube grid,
//! observation length, step and epoch counters); a `u32` tensor count;
//! then per tensor a `u32` name length, the UTF-8 name, `u32` rows and
//! columns and `rows * cols` little-endian `f32` values. Each parameter is
//! stored with its AdamW moments as `<name>.adam_m` and `<name>.adam_v`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::matrix::Matrix;
use crate::model::network::{ModelState, Param};
use crate::tokenizer::CubeGrid;

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"CDCK\0\0\0\x01";
const MOMENT_SUFFIXES: [&str; 2] = [".adam_m", ".adam_v"];

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelConfig,
    grid: CubeGrid,
    obs_frames: usize,
    step: u64,
    epoch: usize,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(
        &u32::try_from(v)
            .expect("checkpoint field fits in u32")
            .to_le_bytes(),
    );
}

fn put_tensor(out: &mut Vec<u8>, name: &str, m: &Matrix) {
    put_u32(out, name.len());
    out.extend_from_slice(name.as_bytes());
    put_u32(out, m.rows);
    put_u32(out, m.cols);
    for v in &m.data {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
}

pub fn encode_checkpoint(state: &ModelState) -> Vec<u8> {
    let header = Header {
        model: state.config().clone(),
        grid: *state.grid(),
        obs_frames: state.obs_frames(),
        step: state.step,
        epoch: state.epoch,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    put_u32(&mut out, json.len());
    out.extend_from_slice(&json);
    put_u32(&mut out, 3 * state.params().len());
    for p in state.params() {
        put_tensor(&mut out, &p.name, &p.value);
        put_tensor(&mut out, &format!("{}{}", p.name, MOMENT_SUFFIXES[0]), &p.m);
        put_tensor(&mut out, &format!("{}{}", p.name, MOMENT_SUFFIXES[1]), &p.v);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("checkpoint truncated in {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

fn expected_tensors(cfg: &ModelConfig) -> Option<usize> {
    let per_block = 12usize;
    let blocks = cfg.encoder_depth.checked_add(cfg.decoder_depth)?;
    let params = blocks.checked_mul(per_block)?.checked_add(11)?;
    params.checked_mul(3)
}

/// Decodes a checkpoint buffer. Never panics on malformed input.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelState> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let header_len = r.u32("header length")?;
    let header: Header = serde_json::from_slice(r.take(header_len, "header")?)
        .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    header
        .model
        .validate()
        .and_then(|_| header.grid.validate())
        .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    let count = r.u32("tensor count")?;
    if Some(count) != expected_tensors(&header.model) {
        return Err(Error::Format(format!(
            "checkpoint holds {count} tensors, configuration implies {:?}",
            expected_tensors(&header.model)
        )));
    }
    let mut tensors: Vec<(String, Matrix)> = Vec::with_capacity(count.min(r.remaining() / 12));
    for _ in 0..count {
        let name_len = r.u32("tensor name length")?;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let rows = r.u32("tensor rows")?;
        let cols = r.u32("tensor cols")?;
        let n = rows
            .checked_mul(cols)
            .filter(|n| n.checked_mul(4).is_some_and(|b| b <= r.remaining()))
            .ok_or_else(|| Error::Format(format!("tensor `{name}` is larger than the file")))?;
        let data = r
            .take(4 * n, "tensor data")?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        if tensors.iter().any(|(existing, _)| *existing == name) {
            return Err(Error::Format(format!("duplicate tensor `{name}`")));
        }
        tensors.push((name, Matrix::from_vec(rows, cols, data)));
    }
    if r.remaining() != 0 {
        return Err(Error::Format(format!(
            "{} trailing bytes after tensors",
            r.remaining()
        )));
    }
    let names: Vec<String> = tensors
        .iter()
        .map(|(n, _)| n)
        .filter(|n| !MOMENT_SUFFIXES.iter().any(|s| n.ends_with(s)))
        .cloned()
        .collect();
    let mut take = |name: &str| -> Result<Matrix> {
        let pos = tensors
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::Format(format!("missing tensor `{name}`")))?;
        Ok(tensors.swap_remove(pos).1)
    };
    let mut params = Vec::with_capacity(names.len());
    for name in names {
        let value = take(&name)?;
        let m = take(&format!("{name}{}", MOMENT_SUFFIXES[0]))?;
        let v = take(&format!("{name}{}", MOMENT_SUFFIXES[1]))?;
        params.push(Param { name, value, m, v });
    }
    ModelState::from_params(
        header.model,
        header.grid,
        header.obs_frames,
        params,
        header.step,
        header.epoch,
    )
    .map_err(|e| match e {
        Error::Format(_) => e,
        other => Error::Format(other.to_string()),
    })
}

pub fn save_checkpoint(state: &ModelState, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(state)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelState> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
