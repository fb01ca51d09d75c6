//! Greedy IoU tracker: no motion model, association by raw box overlap.

use serde::{Deserialize, Serialize};

use crate::cuboid::DetectionCc;
use crate::detections::iou;
use crate::error::{Error, Result};
use crate::geometry::RoadPoint;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerParams {
    /// Minimum IoU between a track's last box and a new detection.
    pub sigma_iou: f64,
    /// A finished track must have at least one detection this confident.
    pub sigma_h: f64,
    /// Minimum number of detections in a finished track.
    pub t_min: usize,
    /// Frames a track survives without a match.
    pub max_gap: u64,
}

impl Default for TrackerParams {
    fn default() -> Self {
        Self {
            sigma_iou: 0.5,
            sigma_h: 0.5,
            t_min: 5,
            max_gap: 1,
        }
    }
}

impl TrackerParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("sigma_iou", self.sigma_iou), ("sigma_h", self.sigma_h)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if self.t_min < 2 {
            return Err(Error::InvalidConfig(format!(
                "t_min = {} must be at least 2",
                self.t_min
            )));
        }
        Ok(())
    }
}

/// A detection together with its road-plane tracking point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub detection: DetectionCc,
    pub world: RoadPoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservedFrame {
    pub frame_index: u64,
    pub timestamp: f64,
    pub observations: Vec<Observation>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackEntry {
    pub frame_index: u64,
    pub detection: DetectionCc,
    pub world: RoadPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackState {
    Active,
    Finished,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub entries: Vec<TrackEntry>,
    pub max_confidence: f64,
    pub state: TrackState,
}

impl Track {
    fn start(id: u64, frame_index: u64, obs: &Observation) -> Self {
        Track {
            id,
            entries: vec![TrackEntry {
                frame_index,
                detection: obs.detection,
                world: obs.world,
            }],
            max_confidence: obs.detection.confidence,
            state: TrackState::Active,
        }
    }

    pub fn last(&self) -> &TrackEntry {
        // entries are never empty
        self.entries.last().expect("track without entries")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Tracker {
    params: TrackerParams,
    active: Vec<Track>,
    next_id: u64,
    last_frame: Option<u64>,
}

impl Tracker {
    pub fn new(params: TrackerParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            active: Vec::new(),
            next_id: 0,
            last_frame: None,
        })
    }

    pub fn params(&self) -> &TrackerParams {
        &self.params
    }

    pub fn active(&self) -> &[Track] {
        &self.active
    }

    /// Feeds one frame; returns the tracks closed by it that pass the
    /// confidence and length filters, in id order.
    pub fn step(&mut self, frame: &ObservedFrame) -> Result<Vec<Track>> {
        let f = frame.frame_index;
        if let Some(last) = self.last_frame {
            if f <= last {
                return Err(Error::OutOfOrderFrame { last, got: f });
            }
        }
        self.last_frame = Some(f);

        let max_gap = self.params.max_gap;
        let (stale, mut live): (Vec<Track>, Vec<Track>) = std::mem::take(&mut self.active)
            .into_iter()
            .partition(|t| f - t.last().frame_index - 1 > max_gap);
        let mut closed = stale;

        live.sort_by(|a, b| {
            b.last()
                .detection
                .confidence
                .total_cmp(&a.last().detection.confidence)
                .then(a.id.cmp(&b.id))
        });
        let mut used = vec![false; frame.observations.len()];
        for track in live {
            let last_box = track.last().detection.bbox;
            let best = frame
                .observations
                .iter()
                .enumerate()
                .filter(|(i, _)| !used[*i])
                .map(|(i, o)| (i, iou(&last_box, &o.detection.bbox)))
                .fold(None, |best: Option<(usize, f64)>, (i, v)| match best {
                    Some((_, b)) if b >= v => best,
                    _ => Some((i, v)),
                });
            let mut track = track;
            match best {
                Some((i, v)) if v >= self.params.sigma_iou => {
                    used[i] = true;
                    let o = &frame.observations[i];
                    track.entries.push(TrackEntry {
                        frame_index: f,
                        detection: o.detection,
                        world: o.world,
                    });
                    track.max_confidence = track.max_confidence.max(o.detection.confidence);
                    self.active.push(track);
                }
                _ if f - track.last().frame_index > max_gap => closed.push(track),
                _ => self.active.push(track),
            }
        }
        for (o, _) in frame.observations.iter().zip(&used).filter(|(_, u)| !**u) {
            self.active.push(Track::start(self.next_id, f, o));
            self.next_id += 1;
        }
        self.active.sort_by_key(|t| t.id);
        Ok(self.finish(closed))
    }

    /// Closes every active track.
    pub fn flush(&mut self) -> Vec<Track> {
        let all = std::mem::take(&mut self.active);
        self.finish(all)
    }

    fn finish(&self, mut tracks: Vec<Track>) -> Vec<Track> {
        tracks.retain(|t| t.max_confidence >= self.params.sigma_h && t.len() >= self.params.t_min);
        tracks.sort_by_key(|t| t.id);
        for t in &mut tracks {
            t.state = TrackState::Finished;
        }
        tracks
    }
}

/// Functional form of [`Tracker::step`].
pub fn tracker_step(mut state: Tracker, frame: &ObservedFrame) -> Result<(Tracker, Vec<Track>)> {
    let finished = state.step(frame)?;
    Ok((state, finished))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cuboid::RectBox;

    fn obs(frame: u64, b: [f64; 4], conf: f64) -> Observation {
        Observation {
            detection: DetectionCc::new(frame, 0, conf, RectBox::try_from(b).unwrap(), 0.5)
                .unwrap(),
            world: RoadPoint::new(b[0], b[1]),
        }
    }

    fn frame(i: u64, boxes: &[[f64; 4]]) -> ObservedFrame {
        ObservedFrame {
            frame_index: i,
            timestamp: i as f64,
            observations: boxes.iter().map(|b| obs(i, *b, 0.9)).collect(),
        }
    }

    fn params(t_min: usize) -> TrackerParams {
        TrackerParams {
            t_min,
            ..TrackerParams::default()
        }
    }

    #[test]
    fn shifted_box_extends_track() {
        let mut t = Tracker::new(params(2)).unwrap();
        t.step(&frame(0, &[[0.0, 0.0, 10.0, 10.0]])).unwrap();
        // IoU of a 1/9 shift: 90/110 ≈ 0.82
        t.step(&frame(1, &[[1.0, 0.0, 11.0, 10.0]])).unwrap();
        let tracks = t.flush();
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].len(), 2);
        assert_eq!(tracks[0].state, TrackState::Finished);
    }

    #[test]
    fn low_iou_starts_new_track_and_closes_old_after_gap() {
        let mut t = Tracker::new(TrackerParams {
            t_min: 2,
            sigma_h: 0.0,
            ..TrackerParams::default()
        })
        .unwrap();
        t.step(&frame(0, &[[0.0, 0.0, 10.0, 10.0]])).unwrap();
        t.step(&frame(1, &[[0.0, 0.0, 10.0, 10.0]])).unwrap();
        // IoU 0.1 < 0.5
        let out = t.step(&frame(2, &[[0.0, 9.0, 10.0, 19.0]])).unwrap();
        assert!(out.is_empty());
        assert_eq!(t.active().len(), 2);
        // still inside max_gap = 1 at frame 2; closed at frame 3
        let out = t.step(&frame(3, &[[0.0, 9.0, 10.0, 19.0]])).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].id, 0);
        assert_eq!(out[0].len(), 2);
        assert_eq!(t.active().len(), 1);
    }

    #[test]
    fn gap_of_one_frame_is_bridged() {
        let mut t = Tracker::new(params(2)).unwrap();
        t.step(&frame(0, &[[0.0, 0.0, 10.0, 10.0]])).unwrap();
        t.step(&frame(1, &[])).unwrap();
        t.step(&frame(2, &[[0.0, 0.0, 10.0, 10.0]])).unwrap();
        let tracks = t.flush();
        assert_eq!(tracks.len(), 1);
        let frames: Vec<_> = tracks[0].entries.iter().map(|e| e.frame_index).collect();
        assert_eq!(frames, vec![0, 2]);
    }

    #[test]
    fn frame_jump_closes_stale_tracks() {
        let mut t = Tracker::new(params(2)).unwrap();
        t.step(&frame(0, &[[0.0, 0.0, 10.0, 10.0]])).unwrap();
        t.step(&frame(1, &[[0.0, 0.0, 10.0, 10.0]])).unwrap();
        let out = t.step(&frame(5, &[[0.0, 0.0, 10.0, 10.0]])).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(t.active().len(), 1);
        assert_eq!(t.active()[0].id, 1);
    }

    #[test]
    fn flush_filters() {
        let mut t = Tracker::new(params(5)).unwrap();
        assert!(t.flush().is_empty());
        for i in 0..10 {
            t.step(&frame(i, &[[0.0, 0.0, 10.0, 10.0]])).unwrap();
        }
        assert_eq!(t.flush().len(), 1);

        let mut t = Tracker::new(params(5)).unwrap();
        for i in 0..3 {
            t.step(&frame(i, &[[0.0, 0.0, 10.0, 10.0]])).unwrap();
        }
        assert!(t.flush().is_empty());

        // low-confidence track discarded by sigma_h
        let mut t = Tracker::new(params(2)).unwrap();
        for i in 0..3 {
            let f = ObservedFrame {
                frame_index: i,
                timestamp: i as f64,
                observations: vec![obs(i, [0.0, 0.0, 10.0, 10.0], 0.3)],
            };
            t.step(&f).unwrap();
        }
        assert!(t.flush().is_empty());
    }

    #[test]
    fn out_of_order_frames_rejected() {
        let mut t = Tracker::new(params(2)).unwrap();
        t.step(&frame(3, &[])).unwrap();
        assert!(matches!(
            t.step(&frame(3, &[])),
            Err(Error::OutOfOrderFrame { last: 3, got: 3 })
        ));
    }

    #[test]
    fn higher_confidence_track_claims_contested_detection() {
        let mut t = Tracker::new(TrackerParams {
            sigma_iou: 0.3,
            t_min: 2,
            sigma_h: 0.0,
            max_gap: 0,
        })
        .unwrap();
        let f0 = ObservedFrame {
            frame_index: 0,
            timestamp: 0.0,
            observations: vec![
                obs(0, [0.0, 0.0, 10.0, 10.0], 0.6),
                obs(0, [4.0, 0.0, 14.0, 10.0], 0.9),
            ],
        };
        t.step(&f0).unwrap();
        let f1 = ObservedFrame {
            frame_index: 1,
            timestamp: 1.0,
            observations: vec![obs(1, [2.0, 0.0, 12.0, 10.0], 0.8)],
        };
        t.step(&f1).unwrap();
        let tracks = t.flush();
        // track 1 (conf 0.9) picks first and takes the only detection
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].id, 1);
    }

    #[test]
    fn invalid_params() {
        assert!(Tracker::new(TrackerParams {
            t_min: 1,
            ..Default::default()
        })
        .is_err());
        assert!(Tracker::new(TrackerParams {
            sigma_iou: 1.5,
            ..Default::default()
        })
        .is_err());
    }
}
