//! Geometric augmentation of density sequences. One transform is drawn
//! per call and applied to every frame.

use rand::Rng;

use crate::density::{DensityFrame, DensitySequence};
use crate::model::config::AugmentPolicy;

/// The concrete transform drawn for one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    /// Quarter turns; `(r, c)` moves to `(c, H - 1 - r)` per turn.
    pub quarter_turns: u8,
    pub hflip: bool,
    pub vflip: bool,
    pub scale: Option<f64>,
}

impl Transform {
    pub const IDENTITY: Transform = Transform {
        quarter_turns: 0,
        hflip: false,
        vflip: false,
        scale: None,
    };

    /// Draws a transform; each enabled augmentation fires with
    /// probability one half. Non-square frames only rotate by 180 degrees.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, policy: &AugmentPolicy, square: bool) -> Self {
        let mut t = Transform::IDENTITY;
        if policy.rotate && rng.gen_bool(0.5) {
            t.quarter_turns = if square { rng.gen_range(1..4) } else { 2 };
        }
        if policy.hflip && rng.gen_bool(0.5) {
            t.hflip = true;
        }
        if policy.vflip && rng.gen_bool(0.5) {
            t.vflip = true;
        }
        if policy.scale && rng.gen_bool(0.5) {
            let (lo, hi) = policy.scale_range;
            t.scale = Some(if lo < hi { rng.gen_range(lo..hi) } else { lo });
        }
        t
    }

    pub fn apply_frame(&self, frame: &DensityFrame) -> DensityFrame {
        let mut f = frame.clone();
        for _ in 0..self.quarter_turns {
            f = rotate90(&f);
        }
        if self.hflip {
            f = hflip(&f);
        }
        if self.vflip {
            f = vflip(&f);
        }
        if let Some(s) = self.scale {
            f = rescale(&f, s);
        }
        f
    }

    pub fn apply(&self, seq: &DensitySequence) -> DensitySequence {
        if *self == Transform::IDENTITY {
            return seq.clone();
        }
        let frames = seq.frames().iter().map(|f| self.apply_frame(f)).collect();
        DensitySequence::new(frames, seq.frame_interval()).expect("transform preserves geometry")
    }
}

pub fn augment<R: Rng + ?Sized>(
    seq: &DensitySequence,
    rng: &mut R,
    policy: &AugmentPolicy,
) -> DensitySequence {
    Transform::sample(rng, policy, seq.width() == seq.height()).apply(seq)
}

fn remap(
    frame: &DensityFrame,
    w: usize,
    h: usize,
    src: impl Fn(usize, usize) -> (usize, usize),
) -> DensityFrame {
    let mut out = Vec::with_capacity(w * h);
    for r in 0..h {
        for c in 0..w {
            let (sr, sc) = src(r, c);
            out.push(frame.get(sr, sc));
        }
    }
    DensityFrame::new(w, h, out).expect("remap keeps values in range")
}

fn rotate90(f: &DensityFrame) -> DensityFrame {
    let (w, h) = (f.width(), f.height());
    // new(c, h-1-r) = old(r, c); the result is h wide and w tall
    remap(f, h, w, |r, c| (h - 1 - c, r))
}

fn hflip(f: &DensityFrame) -> DensityFrame {
    let w = f.width();
    remap(f, w, f.height(), |r, c| (r, w - 1 - c))
}

fn vflip(f: &DensityFrame) -> DensityFrame {
    let h = f.height();
    remap(f, f.width(), h, |r, c| (h - 1 - r, c))
}

/// Zooms about the frame center by `s` with bilinear sampling; samples
/// falling outside the source read as zero.
fn rescale(f: &DensityFrame, s: f64) -> DensityFrame {
    let (w, h) = (f.width(), f.height());
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let px = |r: isize, c: isize| -> f64 {
        if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
            0.0
        } else {
            f.get(r as usize, c as usize) as f64
        }
    };
    let mut vals = Vec::with_capacity(w * h);
    for r in 0..h {
        for c in 0..w {
            let y = (r as f64 - cy) / s + cy;
            let x = (c as f64 - cx) / s + cx;
            let (y0, x0) = (y.floor(), x.floor());
            let (fy, fx) = (y - y0, x - x0);
            let (y0, x0) = (y0 as isize, x0 as isize);
            let v = (1.0 - fy) * ((1.0 - fx) * px(y0, x0) + fx * px(y0, x0 + 1))
                + fy * ((1.0 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1));
            vals.push(v);
        }
    }
    DensityFrame::from_clamped(w, h, vals)
}
