//! Accuracy evaluation: speed measurements against ground-truth gate
//! crossings, and COCO-style box metrics with the `c_c` squared error.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cuboid::DetectionCc;
use crate::detections::{detection_order, iou, FrameDetections};
use crate::error::{Error, Result};
use crate::speed::{GateGeometry, SpeedMeasurement};

pub const DEFAULT_TIME_WINDOW: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthVehicle {
    pub id: u64,
    pub lane: i32,
    pub gate_time: f64,
    pub speed_kmh: f64,
}

/// Ground-truth file: gate and lane layout plus the vehicles that crossed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    #[serde(flatten)]
    pub geometry: GateGeometry,
    pub vehicles: Vec<GroundTruthVehicle>,
}

impl GroundTruth {
    pub fn load(path: &Path) -> Result<Self> {
        let gt: GroundTruth = crate::json_file::read(path)?;
        gt.geometry.validate()?;
        if let Some(v) = gt.vehicles.iter().find(|v| !(v.speed_kmh > 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "vehicle {} has non-positive speed",
                v.id
            )));
        }
        Ok(gt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::json_file::write(path, self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchedPair {
    pub pred: SpeedMeasurement,
    pub gt: GroundTruthVehicle,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Matching {
    pub pairs: Vec<MatchedPair>,
    pub false_positives: Vec<SpeedMeasurement>,
    pub misses: Vec<GroundTruthVehicle>,
}

/// One-to-one matching on equal lane and gate-time proximity, greedy by
/// ascending |Δt| (ties by ground-truth id, then prediction order).
pub fn match_measurements(
    preds: &[SpeedMeasurement],
    gts: &[GroundTruthVehicle],
    time_window: f64,
) -> Matching {
    let mut candidates = Vec::new();
    for (pi, p) in preds.iter().enumerate() {
        for (gi, g) in gts.iter().enumerate() {
            let dt = (p.gate_time - g.gate_time).abs();
            if p.lane == g.lane && dt <= time_window {
                candidates.push((dt, g.id, pi, gi));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut pred_used = vec![false; preds.len()];
    let mut gt_used = vec![false; gts.len()];
    let mut pairs = Vec::new();
    for (_, _, pi, gi) in candidates {
        if pred_used[pi] || gt_used[gi] {
            continue;
        }
        pred_used[pi] = true;
        gt_used[gi] = true;
        pairs.push(MatchedPair {
            pred: preds[pi],
            gt: gts[gi],
        });
    }
    Matching {
        pairs,
        false_positives: preds
            .iter()
            .zip(&pred_used)
            .filter(|(_, u)| !**u)
            .map(|(p, _)| *p)
            .collect(),
        misses: gts
            .iter()
            .zip(&gt_used)
            .filter(|(_, u)| !**u)
            .map(|(g, _)| *g)
            .collect(),
    }
}

/// Percentile with linear interpolation between closest ranks.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (rank - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mean_error_kmh: f64,
    pub median_error_kmh: f64,
    pub p95_error_kmh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedEvalReport {
    /// Absent when nothing matched.
    pub errors: Option<ErrorStats>,
    pub mean_precision_pct: f64,
    pub mean_recall_pct: f64,
    pub matched: usize,
    pub false_positives: usize,
    pub misses: usize,
}

impl SpeedEvalReport {
    pub fn error_stats(&self) -> Result<ErrorStats> {
        self.errors.ok_or(Error::NoMatches)
    }

    /// Plain-text table with the usual speed-accuracy columns.
    pub fn table(&self) -> String {
        let headers = [
            "Mean error (km/h)",
            "Median error (km/h)",
            "95-th percentile (km/h)",
            "Precision (%)",
            "Recall (%)",
        ];
        let fmt_err = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.2}"));
        let cells = [
            fmt_err(self.errors.map(|e| e.mean_error_kmh)),
            fmt_err(self.errors.map(|e| e.median_error_kmh)),
            fmt_err(self.errors.map(|e| e.p95_error_kmh)),
            format!("{:.2}", self.mean_precision_pct),
            format!("{:.2}", self.mean_recall_pct),
        ];
        let widths: Vec<usize> = headers
            .iter()
            .zip(&cells)
            .map(|(h, c)| h.len().max(c.len()))
            .collect();
        let row = |items: Vec<&str>| {
            items
                .iter()
                .zip(&widths)
                .map(|(s, w)| format!("{s:>w$}"))
                .collect::<Vec<_>>()
                .join(" | ")
        };
        let header = row(headers.to_vec());
        let rule = widths
            .iter()
            .map(|w| "-".repeat(*w))
            .collect::<Vec<_>>()
            .join("-+-");
        let body = row(cells.iter().map(String::as_str).collect());
        format!("{header}\n{rule}\n{body}\n")
    }
}

impl fmt::Display for SpeedEvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.table())
    }
}

pub fn speed_report(matching: &Matching) -> SpeedEvalReport {
    let matched = matching.pairs.len();
    let fp = matching.false_positives.len();
    let misses = matching.misses.len();
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64 * 100.0
        }
    };
    let mut errors: Vec<f64> = matching
        .pairs
        .iter()
        .map(|p| (p.pred.speed_kmh - p.gt.speed_kmh).abs())
        .collect();
    errors.sort_by(f64::total_cmp);
    let stats = (!errors.is_empty()).then(|| ErrorStats {
        mean_error_kmh: errors.iter().sum::<f64>() / errors.len() as f64,
        median_error_kmh: percentile(&errors, 50.0),
        p95_error_kmh: percentile(&errors, 95.0),
    });
    SpeedEvalReport {
        errors: stats,
        mean_precision_pct: ratio(matched, matched + fp),
        mean_recall_pct: ratio(matched, matched + misses),
        matched,
        false_positives: fp,
        misses,
    }
}

pub const IOU_THRESHOLDS: [f64; 10] = [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95];
pub const MAX_DETECTIONS: usize = 100;
const RECALL_POINTS: usize = 101;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetEvalReport {
    pub map_50_95: f64,
    pub mar_50_95: f64,
    /// Mean squared `c_c` error over pairs matched at IoU >= 0.5.
    pub cc_error: f64,
    pub cc_pairs: usize,
}

impl fmt::Display for DetEvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>12} | {:>12} | {:>10}",
            "mAP 0.5:0.95", "mAR 0.5:0.95", "c_c error"
        )?;
        writeln!(
            f,
            "{}-+-{}-+-{}",
            "-".repeat(12),
            "-".repeat(12),
            "-".repeat(10)
        )?;
        writeln!(
            f,
            "{:>12.4} | {:>12.4} | {:>10.4}",
            self.map_50_95, self.mar_50_95, self.cc_error
        )
    }
}

/// Per frame: detections of one class (confidence order, capped) and the
/// ground-truth boxes of that class.
struct ClassFrame<'a> {
    frame: u64,
    dets: Vec<&'a DetectionCc>,
    gts: Vec<&'a DetectionCc>,
}

/// Greedy matching in confidence order: each detection takes the unmatched
/// ground truth with the highest IoU at or above `threshold`.
fn match_frame(dets: &[&DetectionCc], gts: &[&DetectionCc], threshold: f64) -> Vec<Option<usize>> {
    let mut taken = vec![false; gts.len()];
    dets.iter()
        .map(|d| {
            let mut best: Option<(usize, f64)> = None;
            for (gi, g) in gts.iter().enumerate() {
                if taken[gi] {
                    continue;
                }
                let v = iou(&d.bbox, &g.bbox);
                if v >= threshold && best.is_none_or(|(_, b)| v > b) {
                    best = Some((gi, v));
                }
            }
            best.map(|(gi, _)| {
                taken[gi] = true;
                gi
            })
        })
        .collect()
}

/// 101-point interpolated AP and final recall of a ranked TP/FP list.
fn ap_and_recall(ranked_tp: &[bool], n_gt: usize) -> (f64, f64) {
    let mut precision = Vec::with_capacity(ranked_tp.len());
    let mut recall = Vec::with_capacity(ranked_tp.len());
    let mut tp = 0usize;
    for (i, &hit) in ranked_tp.iter().enumerate() {
        tp += usize::from(hit);
        precision.push(tp as f64 / (i + 1) as f64);
        recall.push(tp as f64 / n_gt as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let ap = (0..RECALL_POINTS)
        .map(|r| {
            let threshold = r as f64 / (RECALL_POINTS - 1) as f64;
            let idx = recall.partition_point(|&v| v < threshold);
            precision.get(idx).copied().unwrap_or(0.0)
        })
        .sum::<f64>()
        / RECALL_POINTS as f64;
    (ap, recall.last().copied().unwrap_or(0.0))
}

pub fn det_report(
    pred_frames: &[FrameDetections],
    gt_frames: &[FrameDetections],
) -> Result<DetEvalReport> {
    let mut by_class: BTreeMap<u32, BTreeMap<u64, ClassFrame<'_>>> = BTreeMap::new();
    let mut gt_classes = BTreeSet::new();
    for frame in gt_frames {
        for g in &frame.detections {
            gt_classes.insert(g.class_id);
            by_class
                .entry(g.class_id)
                .or_default()
                .entry(frame.frame_index)
                .or_insert_with(|| ClassFrame {
                    frame: frame.frame_index,
                    dets: Vec::new(),
                    gts: Vec::new(),
                })
                .gts
                .push(g);
        }
    }
    if gt_classes.is_empty() {
        return Err(Error::EmptyGroundTruth);
    }
    for frame in pred_frames {
        for d in &frame.detections {
            if !gt_classes.contains(&d.class_id) {
                continue;
            }
            by_class
                .entry(d.class_id)
                .or_default()
                .entry(frame.frame_index)
                .or_insert_with(|| ClassFrame {
                    frame: frame.frame_index,
                    dets: Vec::new(),
                    gts: Vec::new(),
                })
                .dets
                .push(d);
        }
    }

    let mut ap_sum = 0.0;
    let mut ar_sum = 0.0;
    let mut cells = 0usize;
    let mut cc_sq = 0.0;
    let mut cc_pairs = 0usize;
    for frames in by_class.values_mut() {
        let n_gt: usize = frames.values().map(|f| f.gts.len()).sum();
        for f in frames.values_mut() {
            f.dets.sort_by(|a, b| detection_order(a, b));
            f.dets.truncate(MAX_DETECTIONS);
        }
        for &threshold in &IOU_THRESHOLDS {
            // (confidence, frame, rank within frame, tp)
            let mut ranked: Vec<(f64, u64, usize, bool)> = Vec::new();
            for f in frames.values() {
                let matches = match_frame(&f.dets, &f.gts, threshold);
                for (rank, (d, m)) in f.dets.iter().zip(&matches).enumerate() {
                    ranked.push((d.confidence, f.frame, rank, m.is_some()));
                    if threshold == IOU_THRESHOLDS[0] {
                        if let Some(gi) = m {
                            let diff = d.cc - f.gts[*gi].cc;
                            cc_sq += diff * diff;
                            cc_pairs += 1;
                        }
                    }
                }
            }
            ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let tp: Vec<bool> = ranked.iter().map(|r| r.3).collect();
            let (ap, ar) = ap_and_recall(&tp, n_gt);
            ap_sum += ap;
            ar_sum += ar;
            cells += 1;
        }
    }
    Ok(DetEvalReport {
        map_50_95: ap_sum / cells as f64,
        mar_50_95: ar_sum / cells as f64,
        cc_error: if cc_pairs == 0 {
            0.0
        } else {
            cc_sq / cc_pairs as f64
        },
        cc_pairs,
    })
}
