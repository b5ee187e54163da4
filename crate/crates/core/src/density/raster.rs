use crate::density::{rasterize_frame_with, DensitySequence, KernelSpec};
use crate::error::{Error, Result};
use crate::simdata::TrajectoryWindow;

/// One density frame per window frame, each holding exactly the agents
/// recorded in that frame.
pub fn rasterize_sequence(
    window: &TrajectoryWindow,
    width: usize,
    height: usize,
    kernel: &KernelSpec,
) -> Result<DensitySequence> {
    rasterize_frames(window, 0..window.len(), width, height, kernel)
}

/// Rasterizes window-relative frames `range`.
pub fn rasterize_frames(
    window: &TrajectoryWindow,
    range: std::ops::Range<usize>,
    width: usize,
    height: usize,
    kernel: &KernelSpec,
) -> Result<DensitySequence> {
    if range.is_empty() || range.end > window.len() {
        return Err(Error::param(format!(
            "cannot rasterize frames {range:?} of a {}-frame window",
            window.len()
        )));
    }
    let frames = range
        .map(|t| rasterize_frame_with(&window.positions(t), width, height, kernel))
        .collect::<Result<Vec<_>>>()?;
    DensitySequence::new(frames, window.records.frame_interval())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simdata::{TrackRecord, TrajectoryDataset};

    fn window(records: Vec<TrackRecord>) -> TrajectoryWindow {
        let ds = TrajectoryDataset::from_records(records, 0.4).unwrap();
        TrajectoryWindow::new(&ds, 0, 8, 12)
    }

    #[test]
    fn static_agent_gives_identical_frames() {
        let w = window(
            (0..20)
                .map(|f| TrackRecord {
                    frame: f,
                    agent: 0,
                    x: 30.0,
                    y: 50.0,
                })
                .collect(),
        );
        let seq = rasterize_sequence(&w, 80, 80, &KernelSpec::default()).unwrap();
        assert_eq!(seq.len(), 20);
        assert!(seq.frames().iter().all(|f| f == seq.frame(0)));
        assert_eq!(seq.frame(0).get(50, 30), 1.0);
    }

    #[test]
    fn absent_agents_leave_empty_frames() {
        let w = window(
            (0..8)
                .map(|f| TrackRecord {
                    frame: f,
                    agent: 0,
                    x: 30.0,
                    y: 50.0,
                })
                .collect(),
        );
        let seq = rasterize_sequence(&w, 80, 80, &KernelSpec::default()).unwrap();
        assert!(seq.frames()[..8].iter().all(|f| f.total() > 0.0));
        assert!(seq.frames()[8..].iter().all(|f| f.total() == 0.0));
    }

    #[test]
    fn moving_peak_advances_one_pixel_per_frame() {
        let w = window(
            (0..20)
                .map(|f| TrackRecord {
                    frame: f,
                    agent: 0,
                    x: 20.0 + f as f64,
                    y: 40.0,
                })
                .collect(),
        );
        let seq = rasterize_sequence(&w, 80, 80, &KernelSpec::default()).unwrap();
        for (t, frame) in seq.frames().iter().enumerate() {
            let argmax = frame
                .values()
                .iter()
                .enumerate()
                .fold((0, f32::MIN), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
                .0;
            assert_eq!((argmax / 80, argmax % 80), (40, 20 + t));
            // per-frame oracle
            let single =
                crate::density::rasterize_frame(&[(20.0 + t as f64, 40.0)], 80, 80, 3.0).unwrap();
            assert_eq!(frame, &single);
        }
    }

    #[test]
    fn out_of_scene_position_is_range_error() {
        let w = window(vec![TrackRecord {
            frame: 3,
            agent: 0,
            x: 90.0,
            y: 1.0,
        }]);
        assert!(matches!(
            rasterize_sequence(&w, 80, 80, &KernelSpec::default()),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn empty_window_is_parameter_error() {
        let w = TrajectoryWindow::new(&TrajectoryDataset::default(), 0, 0, 0);
        assert!(matches!(
            rasterize_sequence(&w, 80, 80, &KernelSpec::default()),
            Err(Error::Parameter(_))
        ));
    }
}
