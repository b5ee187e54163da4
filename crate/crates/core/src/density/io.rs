//! `CDMP` density-sequence files and PGM heatmap export.
//!
//! A `CDMP` file is the 8-byte magic `CDMP\0\0\0\1`, then `T`, `H`, `W` as
//! little-endian `u32`, then `T*H*W` little-endian `f32` values in
//! `(t, row, column)` order.

use std::path::Path;

use crate::density::{DensityFrame, DensitySequence, DEFAULT_FRAME_INTERVAL};
use crate::error::{Error, Result};

pub const CDMP_MAGIC: [u8; 8] = *b"CDMP\0\0\0\x01";
const HEADER_LEN: usize = 8 + 12;

pub fn encode_cdmp(seq: &DensitySequence) -> Vec<u8> {
    let (t, h, w) = (seq.len(), seq.height(), seq.width());
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * t * h * w);
    out.extend_from_slice(&CDMP_MAGIC);
    for dim in [t, h, w] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for frame in seq.frames() {
        for v in frame.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

/// Decodes a `CDMP` buffer. Never panics on malformed input.
pub fn decode_cdmp(bytes: &[u8]) -> Result<DensitySequence> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "CDMP buffer of {} bytes is shorter than its header",
            bytes.len()
        )));
    }
    if bytes[..8] != CDMP_MAGIC {
        return Err(Error::Format("bad CDMP magic".into()));
    }
    let t = read_u32(bytes, 8) as usize;
    let h = read_u32(bytes, 12) as usize;
    let w = read_u32(bytes, 16) as usize;
    if t == 0 || h == 0 || w == 0 {
        return Err(Error::Format(format!(
            "CDMP dimensions {t}x{h}x{w} contain zero"
        )));
    }
    let count = t
        .checked_mul(h)
        .and_then(|n| n.checked_mul(w))
        .filter(|n| n.checked_mul(4).is_some())
        .ok_or_else(|| Error::Format(format!("CDMP dimensions {t}x{h}x{w} overflow")))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != count * 4 {
        return Err(Error::Format(format!(
            "CDMP payload has {} bytes, header implies {}",
            payload.len(),
            count * 4
        )));
    }
    let mut frames = Vec::with_capacity(t);
    for chunk in payload.chunks_exact(4 * h * w) {
        let values = chunk
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let frame = DensityFrame::new(w, h, values).map_err(|e| Error::Format(e.to_string()))?;
        frames.push(frame);
    }
    DensitySequence::new(frames, DEFAULT_FRAME_INTERVAL)
}

pub fn write_cdmp(path: &Path, seq: &DensitySequence) -> Result<()> {
    std::fs::write(path, encode_cdmp(seq)).map_err(|e| Error::io(path, e))
}

pub fn read_cdmp(path: &Path) -> Result<DensitySequence> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_cdmp(&bytes)
}

/// Binary PGM (P5), maxval 255, pixel = round(density * 255).
pub fn encode_pgm(frame: &DensityFrame) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", frame.width(), frame.height()).into_bytes();
    out.extend(
        frame
            .values()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

pub fn write_pgm(path: &Path, frame: &DensityFrame) -> Result<()> {
    std::fs::write(path, encode_pgm(frame)).map_err(|e| Error::io(path, e))
}
