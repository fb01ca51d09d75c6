//! Scenario builders and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use std::cmp::Ordering;

use rand::Rng;
use vspeed_core::detections::detection_order;
use vspeed_core::pipeline::{Pipeline, PipelineConfig};
use vspeed_core::simulator::{
    CameraSpec, NoiseSpec, RoadSpec, SimOutput, SimScenario, VehicleSpec,
};
use vspeed_core::{iou, DetectionCc, FrameDetections, ImageSize, RectBox};

pub fn camera(height: f64, pitch: f64, yaw: f64, focal: f64) -> CameraSpec {
    CameraSpec {
        height,
        pitch,
        yaw,
        focal,
        image_size: ImageSize::new(1920, 1080),
    }
}

/// The 45 degree camera used for the accuracy checks.
pub fn overhead_camera() -> CameraSpec {
    camera(10.0, std::f64::consts::FRAC_PI_4, 0.3, 1000.0)
}

pub fn car(lane: u32, speed_kmh: f64, spawn_time: f64) -> VehicleSpec {
    VehicleSpec {
        dims: [4.5, 1.8, 1.5],
        lane,
        speed_kmh,
        spawn_time,
        class_id: 0,
    }
}

pub fn scenario(
    camera: CameraSpec,
    vehicles: Vec<VehicleSpec>,
    fps: f64,
    duration: f64,
) -> SimScenario {
    SimScenario {
        camera,
        // the 45 degree camera sees roughly 3-33 m of road; keep the gate
        // where long vehicles are still fully in view
        road: RoadSpec {
            gate: 12.0,
            ..RoadSpec::default()
        },
        vehicles,
        fps,
        duration,
        target_size: ImageSize::new(960, 540),
        noise: NoiseSpec::default(),
        seed: 7,
    }
}

pub fn pipeline_for(out: &SimOutput, workers: usize) -> Pipeline {
    let s = &out.scenario;
    let mut cfg = PipelineConfig::new(s.target_size, s.fps);
    cfg.direction = s.road.direction;
    cfg.workers = workers;
    cfg.queue_capacity = 16;
    Pipeline::new(&cfg, out.calibration, out.ground_truth.geometry.clone()).unwrap()
}

pub fn det(class_id: u32, confidence: f64, b: [f64; 4], cc: f64) -> DetectionCc {
    DetectionCc::new(
        0,
        class_id,
        confidence,
        RectBox::new(b[0], b[1], b[2], b[3]).unwrap(),
        cc,
    )
    .unwrap()
}

/// Strict priority: detection order, then input position.
fn higher(dets: &[DetectionCc], a: usize, b: usize) -> bool {
    match detection_order(&dets[a], &dets[b]) {
        Ordering::Less => true,
        Ordering::Greater => false,
        Ordering::Equal => a < b,
    }
}

/// Every keep set that is a fixed point of suppression: a candidate is kept
/// exactly when no kept, higher-priority box of its class overlaps it by
/// more than `iou_thr`. Exhaustive over all subsets of the candidates.
pub fn nms_fixed_points(dets: &[DetectionCc], iou_thr: f64, conf_thr: f64) -> Vec<Vec<usize>> {
    let cand: Vec<usize> = (0..dets.len())
        .filter(|&i| dets[i].confidence >= conf_thr)
        .collect();
    let m = cand.len();
    let mut found = Vec::new();
    for mask in 0u32..(1 << m) {
        let kept: Vec<usize> = (0..m)
            .filter(|j| mask >> j & 1 == 1)
            .map(|j| cand[j])
            .collect();
        let consistent = cand.iter().all(|&b| {
            let suppressed = kept.iter().any(|&s| {
                s != b
                    && higher(dets, s, b)
                    && dets[s].class_id == dets[b].class_id
                    && iou(&dets[s].bbox, &dets[b].bbox) > iou_thr
            });
            kept.contains(&b) != suppressed
        });
        if consistent {
            found.push(kept);
        }
    }
    found
}

pub fn random_nms_instance(rng: &mut impl Rng) -> Vec<DetectionCc> {
    let n = rng.random_range(1..=10);
    let centers: Vec<(f64, f64)> = (0..3)
        .map(|_| (rng.random_range(50.0..400.0), rng.random_range(50.0..300.0)))
        .collect();
    (0..n)
        .map(|_| {
            let (cx, cy) = centers[rng.random_range(0..centers.len())];
            let x = cx + rng.random_range(-8.0..8.0);
            let y = cy + rng.random_range(-8.0..8.0);
            let w = rng.random_range(20.0..40.0);
            let h = rng.random_range(20.0..40.0);
            // two-decimal confidences so ties happen
            let conf = (rng.random_range(0.2..1.0) * 100.0_f64).round() / 100.0;
            det(
                rng.random_range(0..2),
                conf,
                [x, y, x + w, y + h],
                rng.random::<f64>(),
            )
        })
        .collect()
}

/// COCO-style mAP/mAR over IoU 0.5:0.95, recomputing the matching from
/// scratch for every prefix of the confidence ranking.
pub fn ap_oracle(pred: &[FrameDetections], gt: &[FrameDetections]) -> (f64, f64) {
    let mut classes: Vec<u32> = gt
        .iter()
        .flat_map(|f| f.detections.iter().map(|d| d.class_id))
        .collect();
    classes.sort_unstable();
    classes.dedup();
    let mut ap_sum = 0.0;
    let mut ar_sum = 0.0;
    let mut cells = 0.0;
    for &c in &classes {
        // (frame, det) in global rank order
        let mut ranked: Vec<(u64, usize, DetectionCc)> = Vec::new();
        for f in pred {
            let mut ds: Vec<DetectionCc> = f
                .detections
                .iter()
                .filter(|d| d.class_id == c)
                .copied()
                .collect();
            ds.sort_by(detection_order);
            ranked.extend(
                ds.into_iter()
                    .enumerate()
                    .map(|(r, d)| (f.frame_index, r, d)),
            );
        }
        ranked.sort_by(|a, b| {
            b.2.confidence
                .total_cmp(&a.2.confidence)
                .then(a.0.cmp(&b.0))
                .then(a.1.cmp(&b.1))
        });
        let gts: Vec<(u64, DetectionCc)> = gt
            .iter()
            .flat_map(|f| {
                f.detections
                    .iter()
                    .filter(|d| d.class_id == c)
                    .map(|d| (f.frame_index, *d))
            })
            .collect();
        let n_gt = gts.len() as f64;
        for t in 0..10 {
            let thr = 0.5 + 0.05 * t as f64;
            let thr = (thr * 100.0).round() / 100.0;
            let mut points = Vec::new();
            for k in 1..=ranked.len() {
                let mut taken = vec![false; gts.len()];
                let mut tp = 0;
                // confidence order within each frame is preserved by the prefix
                for (frame, _, d) in &ranked[..k] {
                    let mut best: Option<(usize, f64)> = None;
                    for (gi, (gf, g)) in gts.iter().enumerate() {
                        if gf != frame || taken[gi] {
                            continue;
                        }
                        let v = iou(&d.bbox, &g.bbox);
                        if v >= thr && best.is_none_or(|(_, b)| v > b) {
                            best = Some((gi, v));
                        }
                    }
                    if let Some((gi, _)) = best {
                        taken[gi] = true;
                        tp += 1;
                    }
                }
                points.push((tp as f64 / k as f64, tp as f64 / n_gt));
            }
            let ap: f64 = (0..=100)
                .map(|r| {
                    let r = r as f64 / 100.0;
                    points
                        .iter()
                        .filter(|(_, rec)| *rec >= r)
                        .map(|(p, _)| *p)
                        .fold(0.0, f64::max)
                })
                .sum::<f64>()
                / 101.0;
            ap_sum += ap;
            ar_sum += points.last().map_or(0.0, |p| p.1);
            cells += 1.0;
        }
    }
    (ap_sum / cells, ar_sum / cells)
}

/// Up to five ground-truth and five predicted boxes over two frames and two
/// classes; predictions are jittered copies plus strays.
pub fn random_ap_instance(rng: &mut impl Rng) -> (Vec<FrameDetections>, Vec<FrameDetections>) {
    let n_gt = rng.random_range(1..=5);
    let n_pred = rng.random_range(0..=5);
    let mut gt = vec![frame(0), frame(1)];
    let mut pred = vec![frame(0), frame(1)];
    let mut gt_boxes = Vec::new();
    for _ in 0..n_gt {
        let f = rng.random_range(0..2);
        let x = rng.random_range(0.0..200.0);
        let y = rng.random_range(0.0..200.0);
        let d = det(rng.random_range(0..2), 1.0, [x, y, x + 40.0, y + 30.0], 0.5);
        gt[f].detections.push(d);
        gt_boxes.push((f, d));
    }
    for _ in 0..n_pred {
        let (f, base) = gt_boxes[rng.random_range(0..gt_boxes.len())];
        let j = rng.random_range(0.0..12.0);
        let b = base.bbox;
        let class_id = if rng.random_bool(0.85) {
            base.class_id
        } else {
            1 - base.class_id
        };
        let conf = (rng.random_range(0.1..1.0) * 10.0_f64).round() / 10.0;
        pred[f].detections.push(det(
            class_id,
            conf,
            [b.x_min + j, b.y_min - 0.5 * j, b.x_max + j, b.y_max],
            0.5,
        ));
    }
    (pred, gt)
}

fn frame(i: u64) -> FrameDetections {
    FrameDetections {
        frame_index: i,
        timestamp: i as f64 * 0.04,
        detections: Vec::new(),
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
