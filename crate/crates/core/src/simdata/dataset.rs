use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::density::DEFAULT_FRAME_INTERVAL;
use crate::error::{Error, Result};

/// One observed pedestrian position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackRecord {
    pub frame: u32,
    pub agent: u32,
    pub x: f64,
    pub y: f64,
}

/// Pedestrian positions over time, sorted by `(frame, agent)` with at most
/// one record per pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    records: Vec<TrackRecord>,
    frame_interval: f64,
}

impl Default for TrajectoryDataset {
    fn default() -> Self {
        TrajectoryDataset {
            records: Vec::new(),
            frame_interval: DEFAULT_FRAME_INTERVAL,
        }
    }
}

impl TrajectoryDataset {
    pub fn from_records(mut records: Vec<TrackRecord>, frame_interval: f64) -> Result<Self> {
        if !(frame_interval.is_finite() && frame_interval > 0.0) {
            return Err(Error::param(format!(
                "frame interval must be positive, got {frame_interval}"
            )));
        }
        if let Some(r) = records
            .iter()
            .find(|r| !(r.x.is_finite() && r.y.is_finite()))
        {
            return Err(Error::Integrity(format!(
                "non-finite position for agent {} in frame {}",
                r.agent, r.frame
            )));
        }
        records.sort_by_key(|r| (r.frame, r.agent));
        if let Some(w) = records
            .windows(2)
            .find(|w| (w[0].frame, w[0].agent) == (w[1].frame, w[1].agent))
        {
            return Err(Error::Integrity(format!(
                "duplicate record for agent {} in frame {}",
                w[0].agent, w[0].frame
            )));
        }
        Ok(TrajectoryDataset {
            records,
            frame_interval,
        })
    }

    pub(crate) fn from_sorted_unchecked(records: Vec<TrackRecord>, frame_interval: f64) -> Self {
        debug_assert!(records
            .windows(2)
            .all(|w| (w[0].frame, w[0].agent) < (w[1].frame, w[1].agent)));
        TrajectoryDataset {
            records,
            frame_interval,
        }
    }

    pub fn records(&self) -> &[TrackRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn frame_interval(&self) -> f64 {
        self.frame_interval
    }

    /// Smallest and largest frame id present.
    pub fn frame_span(&self) -> Option<(u32, u32)> {
        Some((self.records.first()?.frame, self.records.last()?.frame))
    }

    pub fn agent_count(&self) -> usize {
        self.records
            .iter()
            .map(|r| r.agent)
            .collect::<HashSet<_>>()
            .len()
    }

    /// Records with `start <= frame < end`.
    pub fn frame_records(&self, start: u32, end: u32) -> &[TrackRecord] {
        let lo = self.records.partition_point(|r| r.frame < start);
        let hi = self.records.partition_point(|r| r.frame < end);
        &self.records[lo..hi.max(lo)]
    }

    pub fn positions_at(&self, frame: u32) -> Vec<(f64, f64)> {
        self.frame_records(frame, frame.saturating_add(1))
            .iter()
            .map(|r| (r.x, r.y))
            .collect()
    }

    pub fn subset(&self, start: u32, end: u32) -> TrajectoryDataset {
        TrajectoryDataset::from_sorted_unchecked(
            self.frame_records(start, end).to_vec(),
            self.frame_interval,
        )
    }
}

/// Parses `frame_id,agent_id,x,y` lines; `#` lines and blank lines are
/// skipped.
pub fn parse_trajectories(text: &str) -> Result<TrajectoryDataset> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 4 comma-separated fields, found {}", fields.len()),
            });
        }
        let parse_err = |what: &str, v: &str| Error::Parse {
            line: line_no,
            message: format!("invalid {what} `{v}`"),
        };
        let frame: u32 = fields[0]
            .parse()
            .map_err(|_| parse_err("frame id", fields[0]))?;
        let agent: u32 = fields[1]
            .parse()
            .map_err(|_| parse_err("agent id", fields[1]))?;
        let x: f64 = fields[2]
            .parse()
            .map_err(|_| parse_err("x coordinate", fields[2]))?;
        let y: f64 = fields[3]
            .parse()
            .map_err(|_| parse_err("y coordinate", fields[3]))?;
        if !(x.is_finite() && y.is_finite()) {
            return Err(Error::Parse {
                line: line_no,
                message: "coordinates must be finite".into(),
            });
        }
        if !seen.insert((frame, agent)) {
            return Err(Error::Integrity(format!(
                "duplicate record for agent {agent} in frame {frame} (line {line_no})"
            )));
        }
        records.push(TrackRecord { frame, agent, x, y });
    }
    TrajectoryDataset::from_records(records, DEFAULT_FRAME_INTERVAL)
}

/// Renders records in `(frame, agent)` order. Coordinates use the shortest
/// decimal form that reads back to the same `f64`.
pub fn format_trajectories(dataset: &TrajectoryDataset) -> String {
    let mut out = String::with_capacity(dataset.len() * 32);
    out.push_str("# frame_id,agent_id,x,y\n");
    for r in dataset.records() {
        writeln!(out, "{},{},{:?},{:?}", r.frame, r.agent, r.x, r.y).unwrap();
    }
    out
}

pub fn load_trajectories(path: &Path) -> Result<TrajectoryDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trajectories(&text)
}

pub fn save_trajectories(dataset: &TrajectoryDataset, path: &Path) -> Result<()> {
    std::fs::write(path, format_trajectories(dataset)).map_err(|e| Error::io(path, e))
}
