use crate::error::{Error, Result};
use crate::simdata::TrajectoryDataset;

/// `obs_len + pred_len` consecutive frames starting at `start`, holding
/// every record in those frames.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryWindow {
    pub start: u32,
    pub obs_len: usize,
    pub pred_len: usize,
    pub records: TrajectoryDataset,
}

impl TrajectoryWindow {
    pub fn new(dataset: &TrajectoryDataset, start: u32, obs_len: usize, pred_len: usize) -> Self {
        let end = start.saturating_add((obs_len + pred_len) as u32);
        TrajectoryWindow {
            start,
            obs_len,
            pred_len,
            records: dataset.subset(start, end),
        }
    }

    pub fn len(&self) -> usize {
        self.obs_len + self.pred_len
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Absolute frame ids of the observed part.
    pub fn obs_frames(&self) -> std::ops::Range<u32> {
        self.start..self.start + self.obs_len as u32
    }

    /// Positions at window-relative frame `t`.
    pub fn positions(&self, t: usize) -> Vec<(f64, f64)> {
        self.records.positions_at(self.start + t as u32)
    }

    /// Same window with its records replaced.
    pub fn with_records(&self, records: TrajectoryDataset) -> Self {
        TrajectoryWindow {
            records,
            ..self.clone()
        }
    }
}

/// Sliding windows over the dataset's frame span. No completeness filter:
/// agents may enter or leave mid-window.
pub fn window_split(
    dataset: &TrajectoryDataset,
    obs_len: usize,
    pred_len: usize,
    stride: usize,
) -> Result<Vec<TrajectoryWindow>> {
    if obs_len == 0 || pred_len == 0 || stride == 0 {
        return Err(Error::param(format!(
            "window lengths and stride must be positive (obs {obs_len}, pred {pred_len}, stride {stride})"
        )));
    }
    let Some((first, last)) = dataset.frame_span() else {
        return Ok(Vec::new());
    };
    let span = (last - first) as usize + 1;
    let len = obs_len + pred_len;
    if span < len {
        return Ok(Vec::new());
    }
    Ok((0..=span - len)
        .step_by(stride)
        .map(|off| TrajectoryWindow::new(dataset, first + off as u32, obs_len, pred_len))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simdata::TrackRecord;

    fn dataset(frames: u32) -> TrajectoryDataset {
        let records = (0..frames)
            .map(|f| TrackRecord {
                frame: f,
                agent: 0,
                x: 1.0,
                y: 1.0,
            })
            .collect();
        TrajectoryDataset::from_records(records, 0.4).unwrap()
    }

    #[test]
    fn single_window() {
        assert_eq!(window_split(&dataset(20), 8, 12, 20).unwrap().len(), 1);
    }

    #[test]
    fn window_starts() {
        let w = window_split(&dataset(40), 8, 12, 10).unwrap();
        assert_eq!(
            w.iter().map(|w| w.start).collect::<Vec<_>>(),
            vec![0, 10, 20]
        );
        for win in &w {
            assert_eq!(win.len(), 20);
            assert_eq!(win.records.len(), 20);
            let frames: Vec<u32> = win.records.records().iter().map(|r| r.frame).collect();
            assert_eq!(frames, (win.start..win.start + 20).collect::<Vec<_>>());
        }
    }

    #[test]
    fn short_dataset_yields_no_windows() {
        assert!(window_split(&dataset(19), 8, 12, 1).unwrap().is_empty());
        assert!(window_split(&TrajectoryDataset::default(), 8, 12, 1)
            .unwrap()
            .is_empty());
        assert!(window_split(&dataset(40), 0, 12, 1).is_err());
    }

    #[test]
    fn partial_tracks_are_kept() {
        let mut records: Vec<TrackRecord> = (0..8)
            .map(|f| TrackRecord {
                frame: f,
                agent: 1,
                x: 2.0,
                y: 2.0,
            })
            .collect();
        records.push(TrackRecord {
            frame: 19,
            agent: 2,
            x: 3.0,
            y: 3.0,
        });
        let ds = TrajectoryDataset::from_records(records, 0.4).unwrap();
        let w = window_split(&ds, 8, 12, 20).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].records.len(), 9);
        assert_eq!(w[0].positions(7), vec![(2.0, 2.0)]);
        assert!(w[0].positions(8).is_empty());
    }
}
