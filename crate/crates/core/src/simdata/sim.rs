use std::f64::consts::{FRAC_PI_3, PI};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::density::DEFAULT_FRAME_INTERVAL;
use crate::error::{Error, Result};
use crate::simdata::{TrackRecord, TrajectoryDataset};

/// Noisy constant-velocity crowd.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub width: usize,
    pub height: usize,
    /// Agents present at frame 0.
    pub n_agents: usize,
    pub frames: usize,
    /// Pixels per frame.
    pub speed_mean: f64,
    pub speed_std: f64,
    /// Heading random-walk step, radians per frame.
    pub turn_std: f64,
    /// Expected new agents per frame, entering at the scene edges.
    pub spawn_rate: f64,
    /// Remove agents that leave the scene; otherwise they bounce.
    pub despawn: bool,
    pub frame_interval: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            width: 80,
            height: 80,
            n_agents: 8,
            frames: 400,
            speed_mean: 1.0,
            speed_std: 0.25,
            turn_std: 0.05,
            spawn_rate: 0.1,
            despawn: true,
            frame_interval: DEFAULT_FRAME_INTERVAL,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::param("scene dimensions must be positive"));
        }
        let nonneg = [
            ("speed_mean", self.speed_mean),
            ("speed_std", self.speed_std),
            ("turn_std", self.turn_std),
            ("spawn_rate", self.spawn_rate),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::param(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(self.frame_interval.is_finite() && self.frame_interval > 0.0) {
            return Err(Error::param("frame_interval must be positive"));
        }
        Ok(())
    }
}

struct Agent {
    id: u32,
    x: f64,
    y: f64,
    heading: f64,
    speed: f64,
}

/// Largest coordinate strictly inside `[0, extent)`.
fn inside(v: f64, extent: f64) -> f64 {
    v.clamp(0.0, extent * (1.0 - f64::EPSILON))
}

/// Reflects `v` into `[0, extent)`; returns whether a bounce happened.
fn bounce(v: &mut f64, extent: f64) -> bool {
    if *v < 0.0 {
        *v = inside(-*v, extent);
        true
    } else if *v >= extent {
        *v = inside(2.0 * extent - *v, extent);
        true
    } else {
        false
    }
}

pub fn simulate_crowd(cfg: &SimConfig) -> Result<TrajectoryDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let speed = Normal::new(cfg.speed_mean, cfg.speed_std).expect("validated std");
    let turn = Normal::new(0.0, cfg.turn_std).expect("validated std");
    let spawn =
        (cfg.spawn_rate > 0.0).then(|| Poisson::new(cfg.spawn_rate).expect("positive rate"));

    let mut next_id = 0u32;
    let mut agents: Vec<Agent> = (0..cfg.n_agents)
        .map(|_| {
            let a = Agent {
                id: next_id,
                x: rng.gen::<f64>() * w,
                y: rng.gen::<f64>() * h,
                heading: rng.gen::<f64>() * 2.0 * PI,
                speed: speed.sample(&mut rng).max(0.0),
            };
            next_id += 1;
            a
        })
        .collect();

    let mut records = Vec::new();
    for frame in 0..cfg.frames {
        for a in &agents {
            records.push(TrackRecord {
                frame: frame as u32,
                agent: a.id,
                x: a.x,
                y: a.y,
            });
        }

        agents.retain_mut(|a| {
            a.heading += turn.sample(&mut rng);
            a.x += a.speed * a.heading.cos();
            a.y += a.speed * a.heading.sin();
            let out = !(0.0..w).contains(&a.x) || !(0.0..h).contains(&a.y);
            if out && cfg.despawn {
                return false;
            }
            if bounce(&mut a.x, w) {
                a.heading = PI - a.heading;
            }
            if bounce(&mut a.y, h) {
                a.heading = -a.heading;
            }
            true
        });

        let arrivals = spawn.map_or(0, |p| p.sample(&mut rng) as usize);
        for _ in 0..arrivals {
            let along = rng.gen::<f64>();
            let (x, y, inward) = match rng.gen_range(0..4) {
                0 => (inside(along * w, w), 0.0, PI / 2.0),
                1 => (inside(along * w, w), inside(h, h), -PI / 2.0),
                2 => (0.0, inside(along * h, h), 0.0),
                _ => (inside(w, w), inside(along * h, h), PI),
            };
            agents.push(Agent {
                id: next_id,
                x,
                y,
                heading: inward + (rng.gen::<f64>() * 2.0 - 1.0) * FRAC_PI_3,
                speed: speed.sample(&mut rng).max(0.0),
            });
            next_id += 1;
        }
    }
    // records are generated frame-major with increasing ids inside a frame
    Ok(TrajectoryDataset::from_sorted_unchecked(
        records,
        cfg.frame_interval,
    ))
}
