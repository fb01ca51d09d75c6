//! Detection stream I/O and class-wise non-maximum suppression.
//!
//! Stream format: UTF-8, one JSON object per line,
//! `{"frame": i, "t": seconds, "dets": [{"cls": c, "conf": p, "box": [x0, y0, x1, y1], "cc": v}]}`
//! with boxes in rectified pixels.

use std::cmp::Ordering;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cuboid::{DetectionCc, RectBox};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FrameDetections {
    pub frame_index: u64,
    pub timestamp: f64,
    pub detections: Vec<DetectionCc>,
}

pub fn iou(a: &RectBox, b: &RectBox) -> f64 {
    let w = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let h = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = w * h;
    if inter <= 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NmsParams {
    pub iou_threshold: f64,
    pub conf_threshold: f64,
}

impl Default for NmsParams {
    fn default() -> Self {
        Self {
            iou_threshold: 0.65,
            conf_threshold: 0.4,
        }
    }
}

impl NmsParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("iou_threshold", self.iou_threshold),
            ("conf_threshold", self.conf_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Descending confidence, ties by (class, x_min, y_min).
pub fn detection_order(a: &DetectionCc, b: &DetectionCc) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(a.class_id.cmp(&b.class_id))
        .then(a.bbox.x_min.total_cmp(&b.bbox.x_min))
        .then(a.bbox.y_min.total_cmp(&b.bbox.y_min))
}

/// Greedy per-class suppression. Output is sorted by [`detection_order`].
pub fn nms(dets: &[DetectionCc], iou_threshold: f64, conf_threshold: f64) -> Vec<DetectionCc> {
    let mut candidates: Vec<DetectionCc> = dets
        .iter()
        .filter(|d| d.confidence >= conf_threshold)
        .copied()
        .collect();
    candidates.sort_by(detection_order);
    let mut kept: Vec<DetectionCc> = Vec::with_capacity(candidates.len());
    for det in candidates {
        let suppressed = kept
            .iter()
            .any(|k| k.class_id == det.class_id && iou(&k.bbox, &det.bbox) > iou_threshold);
        if !suppressed {
            kept.push(det);
        }
    }
    kept
}

#[derive(Serialize, Deserialize)]
struct DetRecord {
    cls: u32,
    conf: f64,
    #[serde(rename = "box")]
    bbox: RectBox,
    cc: f64,
}

#[derive(Serialize, Deserialize)]
struct FrameRecord {
    frame: u64,
    t: f64,
    dets: Vec<DetRecord>,
}

impl FrameRecord {
    fn into_frame(self) -> Result<FrameDetections> {
        if !self.t.is_finite() {
            return Err(Error::InvalidDetection(format!("timestamp {}", self.t)));
        }
        let detections = self
            .dets
            .into_iter()
            .map(|d| DetectionCc::new(self.frame, d.cls, d.conf, d.bbox, d.cc))
            .collect::<Result<Vec<_>>>()?;
        Ok(FrameDetections {
            frame_index: self.frame,
            timestamp: self.t,
            detections,
        })
    }

    fn from_frame(frame: &FrameDetections) -> Self {
        FrameRecord {
            frame: frame.frame_index,
            t: frame.timestamp,
            dets: frame
                .detections
                .iter()
                .map(|d| DetRecord {
                    cls: d.class_id,
                    conf: d.confidence,
                    bbox: d.bbox,
                    cc: d.cc,
                })
                .collect(),
        }
    }
}

pub fn encode_frame(frame: &FrameDetections) -> String {
    // only f64/u64/u32 fields: serialization cannot fail
    serde_json::to_string(&FrameRecord::from_frame(frame)).expect("frame serialization")
}

/// Streaming reader over a line-delimited detection file.
pub struct StreamReader<R> {
    lines: std::io::Lines<R>,
    line: usize,
    last_t: Option<f64>,
}

impl<R: BufRead> StreamReader<R> {
    pub fn new(reader: R) -> Self {
        Self {
            lines: reader.lines(),
            line: 0,
            last_t: None,
        }
    }
}

impl StreamReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::new(BufReader::new(file)))
    }
}

impl<R: BufRead> Iterator for StreamReader<R> {
    type Item = Result<FrameDetections>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let text = match self.lines.next()? {
                Ok(t) => t,
                Err(e) => {
                    return Some(Err(Error::Parse {
                        line: self.line + 1,
                        message: e.to_string(),
                    }))
                }
            };
            self.line += 1;
            if text.trim().is_empty() {
                continue;
            }
            let line = self.line;
            let frame = serde_json::from_str::<FrameRecord>(&text)
                .map_err(|e| Error::Parse {
                    line,
                    message: e.to_string(),
                })
                .and_then(|r| {
                    r.into_frame().map_err(|e| Error::Parse {
                        line,
                        message: e.to_string(),
                    })
                });
            let frame = match frame {
                Ok(f) => f,
                Err(e) => return Some(Err(e)),
            };
            if self.last_t.is_some_and(|t| frame.timestamp <= t) {
                return Some(Err(Error::NonMonotonicTimestamps { line }));
            }
            self.last_t = Some(frame.timestamp);
            return Some(Ok(frame));
        }
    }
}

pub fn read_stream(path: &Path) -> Result<Vec<FrameDetections>> {
    StreamReader::open(path)?.collect()
}

pub fn write_stream_to<W: Write>(frames: &[FrameDetections], mut out: W) -> std::io::Result<()> {
    for frame in frames {
        out.write_all(encode_frame(frame).as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn write_stream(frames: &[FrameDetections], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_stream_to(frames, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn det(cls: u32, conf: f64, b: [f64; 4], cc: f64) -> DetectionCc {
        DetectionCc::new(0, cls, conf, RectBox::try_from(b).unwrap(), cc).unwrap()
    }

    #[test]
    fn iou_examples() {
        let a = RectBox::try_from([0.0, 0.0, 2.0, 2.0]).unwrap();
        let b = RectBox::try_from([1.0, 1.0, 3.0, 3.0]).unwrap();
        let c = RectBox::try_from([5.0, 5.0, 6.0, 6.0]).unwrap();
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &c), 0.0);
        assert!((iou(&a, &b) - 1.0 / 7.0).abs() < 1e-15);
        // touching edges
        let d = RectBox::try_from([2.0, 0.0, 4.0, 2.0]).unwrap();
        assert_eq!(iou(&a, &d), 0.0);
    }

    #[test]
    fn nms_examples() {
        let out = nms(
            &[
                det(0, 0.8, [0.0, 0.0, 10.0, 10.0], 0.2),
                det(0, 0.9, [0.0, 0.0, 10.0, 10.0], 0.7),
            ],
            0.65,
            0.4,
        );
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].confidence, 0.9);
        assert_eq!(out[0].cc, 0.7);

        let out = nms(
            &[
                det(0, 0.8, [0.0, 0.0, 1.0, 1.0], 0.2),
                det(0, 0.9, [5.0, 5.0, 6.0, 6.0], 0.7),
            ],
            0.65,
            0.4,
        );
        assert_eq!(out.len(), 2);
        assert!(out[0].confidence > out[1].confidence);

        // per class, and below-threshold detections dropped
        let out = nms(
            &[
                det(0, 0.9, [0.0, 0.0, 10.0, 10.0], 0.1),
                det(1, 0.8, [0.0, 0.0, 10.0, 10.0], 0.1),
                det(1, 0.3, [50.0, 0.0, 60.0, 10.0], 0.1),
            ],
            0.65,
            0.4,
        );
        assert_eq!(out.len(), 2);
        assert!(nms(&[], 0.5, 0.5).is_empty());
    }

    #[test]
    fn nms_tie_break_is_deterministic() {
        let a = det(1, 0.5, [10.0, 0.0, 20.0, 10.0], 0.1);
        let b = det(0, 0.5, [30.0, 0.0, 40.0, 10.0], 0.1);
        let c = det(1, 0.5, [0.0, 0.0, 5.0, 10.0], 0.1);
        let out = nms(&[a, b, c], 0.5, 0.0);
        assert_eq!(out, vec![b, c, a]);
        assert_eq!(nms(&[c, b, a], 0.5, 0.0), out);
    }

    #[test]
    fn stream_errors() {
        let text = "\n";
        let frames: Result<Vec<_>> = StreamReader::new(text.as_bytes()).collect();
        assert!(frames.unwrap().is_empty());
        let ok = r#"{"frame":0,"t":0.0,"dets":[]}"#;
        let mut lines = vec![ok.to_string()];
        for i in 1..6 {
            lines.push(format!(
                r#"{{"frame":{i},"t":{},"dets":[]}}"#,
                i as f64 * 0.02
            ));
        }
        lines.push(r#"{"frame":6,"t":0.12,"dets":[{"cls":0}]}"#.into());
        let text = lines.join("\n");
        let err = StreamReader::new(text.as_bytes())
            .collect::<Result<Vec<_>>>()
            .unwrap_err();
        assert!(matches!(err, Error::Parse { line: 7, .. }), "{err}");

        let text = format!("{ok}\n{ok}\n");
        let err = StreamReader::new(text.as_bytes())
            .collect::<Result<Vec<_>>>()
            .unwrap_err();
        assert!(matches!(err, Error::NonMonotonicTimestamps { line: 2 }));

        let bad_cc =
            r#"{"frame":0,"t":0.0,"dets":[{"cls":0,"conf":0.5,"box":[0,0,1,1],"cc":1.5}]}"#;
        let err = StreamReader::new(bad_cc.as_bytes())
            .next()
            .unwrap()
            .unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn empty_file_reads_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(read_stream(&path).unwrap().is_empty());
    }

    fn arb_frames() -> impl Strategy<Value = Vec<FrameDetections>> {
        let det = (
            0u32..4,
            0.0f64..=1.0,
            -1e4f64..1e4,
            -1e4f64..1e4,
            1e-6f64..500.0,
            1e-6f64..500.0,
            0.0f64..=1.0,
        );
        prop::collection::vec((prop::collection::vec(det, 0..5), 1e-6f64..1.0), 0..40).prop_map(
            |frames| {
                let mut t = 0.0;
                frames
                    .into_iter()
                    .enumerate()
                    .map(|(i, (dets, dt))| {
                        t += dt;
                        FrameDetections {
                            frame_index: i as u64,
                            timestamp: t,
                            detections: dets
                                .into_iter()
                                .map(|(cls, conf, x, y, w, h, cc)| {
                                    let b = RectBox::new(x, y, x + w, y + h).unwrap();
                                    DetectionCc::new(i as u64, cls, conf, b, cc).unwrap()
                                })
                                .collect(),
                        }
                    })
                    .collect()
            },
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn stream_round_trip_is_bit_exact(frames in arb_frames()) {
            let mut buf = Vec::new();
            write_stream_to(&frames, &mut buf).unwrap();
            let back: Vec<_> = StreamReader::new(buf.as_slice()).collect::<Result<_>>().unwrap();
            prop_assert_eq!(back, frames);
        }
    }
}
