//! Synthetic ground truth: a pinhole camera above a straight multi-lane
//! road with box-shaped vehicles driving at constant speeds.
//!
//! World frame: X along the road (the camera looks towards +X), Y to the
//! left, Z up, road surface at Z = 0. The camera sits at (0, 0, height).
//! All randomness comes from a `ChaCha8Rng` seeded with the scenario seed.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::cuboid::{
    cc_from_projection, vertex_index, DetectionCc, Face, Level, Reconstructor, RectBox, Side,
    TravelDirection,
};
use crate::detections::{write_stream, FrameDetections};
use crate::error::{Error, Result};
use crate::evaluation::{GroundTruth, GroundTruthVehicle};
use crate::geometry::{CameraCalibration, ImagePoint, ImageSize, RoadPoint};
use crate::speed::{GateGeometry, GateLine, Lane};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    /// Meters above the road.
    pub height: f64,
    /// Downward tilt, radians.
    pub pitch: f64,
    /// Rotation about the vertical axis, radians; must be non-zero so the
    /// cross-road vanishing point is finite.
    pub yaw: f64,
    pub focal: f64,
    pub image_size: ImageSize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoadSpec {
    pub lane_count: u32,
    pub lane_width: f64,
    /// X position of the gate line, meters.
    pub gate: f64,
    /// Where approaching vehicles enter, meters along X.
    pub spawn_distance: f64,
    /// Y of the right edge of lane 0; lanes extend towards +Y.
    pub lateral_offset: f64,
    pub direction: TravelDirection,
}

impl Default for RoadSpec {
    fn default() -> Self {
        Self {
            lane_count: 2,
            lane_width: 3.5,
            gate: 20.0,
            spawn_distance: 80.0,
            lateral_offset: -3.5,
            direction: TravelDirection::Approaching,
        }
    }
}

impl RoadSpec {
    pub fn lane_center(&self, lane: u32) -> f64 {
        self.lateral_offset + (f64::from(lane) + 0.5) * self.lane_width
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleSpec {
    /// Length, width, height in meters.
    pub dims: [f64; 3],
    pub lane: u32,
    pub speed_kmh: f64,
    pub spawn_time: f64,
    #[serde(default)]
    pub class_id: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    /// Std. dev. of each rectified box coordinate, pixels.
    pub bbox_sigma: f64,
    pub cc_sigma: f64,
    pub dropout_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub camera: CameraSpec,
    #[serde(default)]
    pub road: RoadSpec,
    pub vehicles: Vec<VehicleSpec>,
    pub fps: f64,
    /// Seconds of video.
    pub duration: f64,
    /// Rectified image size the detections live in.
    pub target_size: ImageSize,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub seed: u64,
}

const DETECTION_CONFIDENCE: f64 = 0.9;

impl SimScenario {
    pub fn load(path: &Path) -> Result<Self> {
        crate::json_file::read(path)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScenario(m));
        let c = &self.camera;
        if !(c.height > 0.0 && c.focal > 0.0 && c.image_size.is_valid()) {
            return bad("camera height, focal and image size must be positive".into());
        }
        if !(c.pitch > 1e-3 && c.pitch < std::f64::consts::FRAC_PI_2 - 1e-3) {
            return bad(format!("pitch {} outside (0, pi/2)", c.pitch));
        }
        if !(c.yaw.abs() > 1e-3 && c.yaw.abs() < std::f64::consts::FRAC_PI_2 - 1e-3) {
            return bad(format!("yaw {} must be non-zero and below pi/2", c.yaw));
        }
        if !(self.fps > 0.0 && self.duration >= 0.0) {
            return bad("fps must be positive and duration non-negative".into());
        }
        if !self.target_size.is_valid() {
            return bad("empty target size".into());
        }
        let r = &self.road;
        if r.lane_count == 0 || !(r.lane_width > 0.0) || !(r.spawn_distance > 0.0) {
            return bad("road needs lanes of positive width and a spawn distance".into());
        }
        let n = &self.noise;
        if !(n.bbox_sigma >= 0.0 && n.cc_sigma >= 0.0 && (0.0..=1.0).contains(&n.dropout_prob)) {
            return bad("noise sigmas must be >= 0 and dropout in [0, 1]".into());
        }
        for (i, v) in self.vehicles.iter().enumerate() {
            if !(v.speed_kmh > 0.0) || v.dims.iter().any(|d| !(*d > 0.0)) {
                return bad(format!(
                    "vehicle {i}: speed and dimensions must be positive"
                ));
            }
            if v.lane >= r.lane_count {
                return bad(format!("vehicle {i}: lane {} >= lane count", v.lane));
            }
        }
        Ok(())
    }

    /// Poisson arrivals at `vehicles_per_minute`, spread over the lanes with
    /// enough headway that no vehicle catches up with the one ahead while in
    /// view. Speeds uniform in `speed_range` km/h.
    pub fn with_traffic(
        mut self,
        vehicles_per_minute: f64,
        speed_range: (f64, f64),
        traffic_seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(traffic_seed);
        let gaps = Exp::new(vehicles_per_minute / 60.0).expect("positive traffic rate");
        let lanes = self.road.lane_count as usize;
        let mut last: Vec<Option<(f64, f64, f64)>> = vec![None; lanes];
        let mut t = 0.0;
        let view = self.road.spawn_distance + 20.0;
        self.vehicles.clear();
        loop {
            t += gaps.sample(&mut rng);
            let lane = rng.random_range(0..lanes);
            let speed = rng.random_range(speed_range.0..=speed_range.1);
            let truck = rng.random_bool(0.15);
            let dims = if truck {
                [rng.random_range(8.0..12.0), 2.5, rng.random_range(3.0..3.8)]
            } else {
                [
                    rng.random_range(3.8..5.0),
                    rng.random_range(1.65..1.9),
                    rng.random_range(1.35..1.7),
                ]
            };
            let v = speed / 3.6;
            let mut spawn = t;
            if let Some((t0, v0, l0)) = last[lane] {
                // room for the leader's length plus 10 m, and no closing in on
                // it over the visible stretch
                let closing = ((v - v0).max(0.0) * view / v).max(0.0);
                spawn = spawn.max(t0 + (l0 + 10.0 + closing) / v0);
            }
            if spawn > self.duration {
                break;
            }
            last[lane] = Some((spawn, v, dims[0]));
            self.vehicles.push(VehicleSpec {
                dims,
                lane: lane as u32,
                speed_kmh: speed,
                spawn_time: spawn,
                class_id: u32::from(truck),
            });
        }
        self.vehicles
            .sort_by(|a, b| a.spawn_time.total_cmp(&b.spawn_time));
        self
    }
}

/// Pinhole camera built from a [`CameraSpec`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimCamera {
    pub spec: CameraSpec,
    /// Rows: camera right, down, forward axes in world coordinates.
    rotation: Matrix3<f64>,
    center: Vector3<f64>,
}

impl SimCamera {
    pub fn new(spec: CameraSpec) -> Self {
        let (p, y) = (spec.pitch, spec.yaw);
        let forward = Vector3::new(p.cos() * y.cos(), p.cos() * y.sin(), -p.sin());
        let right = Vector3::new(y.sin(), -y.cos(), 0.0);
        let down = forward.cross(&right);
        Self {
            spec,
            rotation: Matrix3::from_rows(&[
                right.transpose(),
                down.transpose(),
                forward.transpose(),
            ]),
            center: Vector3::new(0.0, 0.0, spec.height),
        }
    }

    pub fn principal_point(&self) -> ImagePoint {
        let s = self.spec.image_size;
        ImagePoint::new(0.5 * f64::from(s.width), 0.5 * f64::from(s.height))
    }

    pub fn to_camera(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * (world - self.center)
    }

    pub fn project(&self, world: &Vector3<f64>) -> Result<ImagePoint> {
        let c = self.to_camera(world);
        if c.z <= 1e-9 {
            return Err(Error::BehindCamera);
        }
        Ok(self.image_of_direction(&c))
    }

    fn image_of_direction(&self, c: &Vector3<f64>) -> ImagePoint {
        let pp = self.principal_point();
        ImagePoint::new(
            pp.x + self.spec.focal * c.x / c.z,
            pp.y + self.spec.focal * c.y / c.z,
        )
    }

    /// Image of the world direction `d`, as K·R·d.
    pub fn vanishing_point(&self, d: &Vector3<f64>) -> Result<ImagePoint> {
        let c = self.rotation * d;
        if c.z.abs() <= 1e-12 {
            return Err(Error::DegenerateConfiguration(
                "direction parallel to image plane".into(),
            ));
        }
        Ok(self.image_of_direction(&c))
    }

    pub fn calibration(&self) -> Result<CameraCalibration> {
        CameraCalibration::new(
            self.vanishing_point(&Vector3::x())?,
            self.vanishing_point(&Vector3::y())?,
            self.principal_point(),
            self.spec.height,
            self.spec.image_size,
        )
    }

    /// Signs relating world X/Y to the calibration's road axes, which point
    /// along the viewing direction.
    fn road_axis_signs(&self) -> (f64, f64) {
        let sx = (self.rotation * Vector3::x()).z.signum();
        let sy = (self.rotation * Vector3::y()).z.signum();
        (sx, sy)
    }

    /// World road position → the road-plane frame recovered from the
    /// calibration (origin at the camera foot).
    pub fn world_to_road(&self, x: f64, y: f64) -> RoadPoint {
        let (sx, sy) = self.road_axis_signs();
        RoadPoint::new(sx * (x - self.center.x), sy * (y - self.center.y))
    }

    pub fn road_to_world(&self, p: &RoadPoint) -> (f64, f64) {
        let (sx, sy) = self.road_axis_signs();
        (sx * p.x + self.center.x, sy * p.y + self.center.y)
    }
}

/// Vehicle box on the road: `front` is the center of the front-bottom edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldCuboid {
    pub front: (f64, f64),
    pub dims: [f64; 3],
    pub direction: TravelDirection,
}

impl WorldCuboid {
    /// Vertices indexed by [`vertex_index`]; "left" is the +Y side.
    pub fn vertices(&self) -> [Vector3<f64>; 8] {
        let [l, w, h] = self.dims;
        // approaching vehicles head towards -X, so the rear is at larger X
        let back = match self.direction {
            TravelDirection::Approaching => l,
            TravelDirection::Receding => -l,
        };
        let mut out = [Vector3::zeros(); 8];
        for (face, dx) in [(Face::Front, 0.0), (Face::Rear, back)] {
            for (level, z) in [(Level::Top, h), (Level::Bottom, 0.0)] {
                for (side, dy) in [(Side::Left, 0.5 * w), (Side::Right, -0.5 * w)] {
                    out[vertex_index(face, level, side)] =
                        Vector3::new(self.front.0 + dx, self.front.1 + dy, z);
                }
            }
        }
        out
    }
}

pub fn project_cuboid(cuboid: &WorldCuboid, camera: &SimCamera) -> Result<[ImagePoint; 8]> {
    let mut out = [ImagePoint::default(); 8];
    for (dst, v) in out.iter_mut().zip(cuboid.vertices()) {
        *dst = camera.project(&v)?;
    }
    Ok(out)
}

/// Exact observation of one vehicle in one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrueObject {
    pub vehicle: usize,
    pub frame_index: u64,
    pub image_vertices: [ImagePoint; 8],
    pub bbox: RectBox,
    pub cc: f64,
    /// Front-bottom-center in the calibration's road-plane frame.
    pub tracking_point: RoadPoint,
}

/// Camera plus the rectification the detector works in.
#[derive(Debug, Clone, Copy)]
pub struct SimView {
    pub camera: SimCamera,
    pub calibration: CameraCalibration,
    pub reconstructor: Reconstructor,
}

impl SimView {
    pub fn new(
        camera: CameraSpec,
        target_size: ImageSize,
        direction: TravelDirection,
    ) -> Result<Self> {
        let camera = SimCamera::new(camera);
        let calibration = camera.calibration()?;
        let reconstructor = Reconstructor::new(calibration, target_size, direction)?;
        Ok(Self {
            camera,
            calibration,
            reconstructor,
        })
    }

    /// Projects a vehicle box. `None` when any part is behind the camera,
    /// outside the image, or outside the rectified frame.
    pub fn observe(&self, cuboid: &WorldCuboid) -> Option<(RectBox, f64, [ImagePoint; 8])> {
        let image = project_cuboid(cuboid, &self.camera).ok()?;
        let size = self.camera.spec.image_size;
        if !image.iter().all(|p| size.contains(p)) {
            return None;
        }
        let rect = &self.reconstructor.rect;
        let mut rv = [ImagePoint::default(); 8];
        for (dst, p) in rv.iter_mut().zip(&image) {
            *dst = rect.to_rect(p).ok()?;
        }
        let bbox = RectBox::bounding(&rv).ok()?;
        if !rect
            .target_size
            .contains(&ImagePoint::new(bbox.x_min, bbox.y_min))
            || !rect
                .target_size
                .contains(&ImagePoint::new(bbox.x_max, bbox.y_max))
        {
            return None;
        }
        // top edge of the camera-facing face
        let near = match cuboid.direction {
            TravelDirection::Approaching => Face::Front,
            TravelDirection::Receding => Face::Rear,
        };
        let y_top = 0.5
            * (rv[vertex_index(near, Level::Top, Side::Left)].y
                + rv[vertex_index(near, Level::Top, Side::Right)].y);
        let cc = cc_from_projection(&bbox, y_top.clamp(bbox.y_min, bbox.y_max)).ok()?;
        Some((bbox, cc, image))
    }
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub scenario: SimScenario,
    pub calibration: CameraCalibration,
    pub camera: SimCamera,
    pub ground_truth: GroundTruth,
    pub frames: Vec<FrameDetections>,
    /// Noise-free observations per frame, aligned with `frames`.
    pub truth: Vec<Vec<TrueObject>>,
}

impl SimOutput {
    /// Writes `calib.json`, `gt.json`, `dets.jsonl` and a matching pipeline
    /// `config.json` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.calibration.save(&dir.join("calib.json"))?;
        self.ground_truth.save(&dir.join("gt.json"))?;
        crate::pipeline::simulation_config(&self.scenario).save(&dir.join("config.json"))?;
        write_stream(&self.frames, &dir.join("dets.jsonl"))
    }

    /// Noise-free detections in the stream format, for detection metrics.
    pub fn truth_frames(&self) -> Vec<FrameDetections> {
        self.frames
            .iter()
            .zip(&self.truth)
            .map(|(f, objs)| FrameDetections {
                frame_index: f.frame_index,
                timestamp: f.timestamp,
                detections: objs
                    .iter()
                    .map(|o| DetectionCc {
                        frame_index: o.frame_index,
                        class_id: 0,
                        confidence: 1.0,
                        bbox: o.bbox,
                        cc: o.cc,
                    })
                    .collect(),
            })
            .collect()
    }
}

/// Front-bottom-center X of a vehicle at time `t` (None before spawn).
fn front_x(scenario: &SimScenario, v: &VehicleSpec, t: f64) -> Option<f64> {
    if t < v.spawn_time {
        return None;
    }
    let travelled = v.speed_kmh / 3.6 * (t - v.spawn_time);
    Some(match scenario.road.direction {
        TravelDirection::Approaching => scenario.road.spawn_distance - travelled,
        TravelDirection::Receding => v.dims[0] + travelled,
    })
}

fn gate_time(scenario: &SimScenario, v: &VehicleSpec) -> f64 {
    let speed = v.speed_kmh / 3.6;
    let distance = match scenario.road.direction {
        TravelDirection::Approaching => scenario.road.spawn_distance - scenario.road.gate,
        TravelDirection::Receding => scenario.road.gate - v.dims[0],
    };
    v.spawn_time + distance / speed
}

fn gate_geometry(scenario: &SimScenario, camera: &SimCamera) -> GateGeometry {
    let r = &scenario.road;
    let y0 = r.lateral_offset;
    let y1 = r.lateral_offset + f64::from(r.lane_count) * r.lane_width;
    let far = r.spawn_distance + 50.0;
    let lanes = (0..r.lane_count)
        .map(|i| {
            let a = r.lateral_offset + f64::from(i) * r.lane_width;
            let b = a + r.lane_width;
            Lane {
                id: i as i32,
                polygon: [(0.0, a), (far, a), (far, b), (0.0, b)]
                    .iter()
                    .map(|&(x, y)| camera.world_to_road(x, y))
                    .collect(),
            }
        })
        .collect();
    GateGeometry {
        gate: GateLine {
            a: camera.world_to_road(r.gate, y0 - 1.0),
            b: camera.world_to_road(r.gate, y1 + 1.0),
        },
        lanes,
    }
}

pub fn generate(scenario: &SimScenario) -> Result<SimOutput> {
    scenario.validate()?;
    let view = SimView::new(
        scenario.camera,
        scenario.target_size,
        scenario.road.direction,
    )
    .map_err(|e| Error::InvalidScenario(format!("camera geometry: {e}")))?;
    let camera = view.camera;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let box_noise = Normal::new(0.0, scenario.noise.bbox_sigma)
        .map_err(|e| Error::InvalidScenario(e.to_string()))?;
    let cc_noise = Normal::new(0.0, scenario.noise.cc_sigma)
        .map_err(|e| Error::InvalidScenario(e.to_string()))?;

    let n_frames = (scenario.duration * scenario.fps).floor() as u64;
    let mut frames = Vec::with_capacity(n_frames as usize);
    let mut truth = Vec::with_capacity(n_frames as usize);
    for k in 0..n_frames {
        let t = k as f64 / scenario.fps;
        let mut dets = Vec::new();
        let mut objs = Vec::new();
        for (vi, v) in scenario.vehicles.iter().enumerate() {
            let Some(x) = front_x(scenario, v, t) else {
                continue;
            };
            let cuboid = WorldCuboid {
                front: (x, scenario.road.lane_center(v.lane)),
                dims: v.dims,
                direction: scenario.road.direction,
            };
            let Some((bbox, cc, image)) = view.observe(&cuboid) else {
                continue;
            };
            objs.push(TrueObject {
                vehicle: vi,
                frame_index: k,
                image_vertices: image,
                bbox,
                cc,
                tracking_point: camera.world_to_road(cuboid.front.0, cuboid.front.1),
            });
            let mut b = bbox.as_array();
            for c in &mut b {
                *c += box_noise.sample(&mut rng);
            }
            let noisy_cc = (cc + cc_noise.sample(&mut rng)).clamp(0.0, 1.0);
            let dropped = rng.random::<f64>() < scenario.noise.dropout_prob;
            if dropped {
                continue;
            }
            let Ok(noisy_box) = RectBox::new(
                b[0].min(b[2]),
                b[1].min(b[3]),
                b[0].max(b[2]),
                b[1].max(b[3]),
            ) else {
                continue;
            };
            dets.push(DetectionCc::new(
                k,
                v.class_id,
                DETECTION_CONFIDENCE,
                noisy_box,
                noisy_cc,
            )?);
        }
        frames.push(FrameDetections {
            frame_index: k,
            timestamp: t,
            detections: dets,
        });
        truth.push(objs);
    }

    let geometry = gate_geometry(scenario, &camera);
    let gate_mid = camera.project(&Vector3::new(
        scenario.road.gate,
        scenario.road.lane_center(0),
        0.0,
    ));
    if !gate_mid.is_ok_and(|p| camera.spec.image_size.contains(&p)) {
        log::warn!(
            "gate at {} m is outside the camera view",
            scenario.road.gate
        );
    }
    let vehicles = scenario
        .vehicles
        .iter()
        .enumerate()
        .map(|(i, v)| GroundTruthVehicle {
            id: i as u64,
            lane: v.lane as i32,
            gate_time: gate_time(scenario, v),
            speed_kmh: v.speed_kmh,
        })
        .filter(|g| g.gate_time <= scenario.duration)
        .collect();
    Ok(SimOutput {
        scenario: scenario.clone(),
        calibration: view.calibration,
        camera,
        ground_truth: GroundTruth { geometry, vehicles },
        frames,
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn camera_spec() -> CameraSpec {
        CameraSpec {
            height: 9.0,
            pitch: 0.6,
            yaw: 0.25,
            focal: 1100.0,
            image_size: ImageSize::new(1920, 1080),
        }
    }

    fn scenario(vehicles: Vec<VehicleSpec>) -> SimScenario {
        SimScenario {
            camera: camera_spec(),
            road: RoadSpec::default(),
            vehicles,
            fps: 25.0,
            duration: 6.0,
            target_size: ImageSize::new(960, 540),
            noise: NoiseSpec::default(),
            seed: 3,
        }
    }

    fn car(lane: u32, speed_kmh: f64, spawn_time: f64) -> VehicleSpec {
        VehicleSpec {
            dims: [4.5, 1.8, 1.5],
            lane,
            speed_kmh,
            spawn_time,
            class_id: 0,
        }
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let cam = SimCamera::new(camera_spec());
        let fwd = cam.rotation.row(2).transpose();
        let p = cam.project(&(cam.center + 25.0 * fwd)).unwrap();
        assert!(p.distance(&cam.principal_point()) < 1e-9);
    }

    #[test]
    fn focal_scales_offsets() {
        let mut spec = camera_spec();
        let world = Vector3::new(30.0, 2.0, 0.5);
        let a = SimCamera::new(spec).project(&world).unwrap();
        spec.focal *= 2.0;
        let b = SimCamera::new(spec).project(&world).unwrap();
        let pp = SimCamera::new(spec).principal_point();
        assert!(((b.x - pp.x) - 2.0 * (a.x - pp.x)).abs() < 1e-9);
        assert!(((b.y - pp.y) - 2.0 * (a.y - pp.y)).abs() < 1e-9);
    }

    #[test]
    fn vanishing_point_is_limit_of_projection() {
        let cam = SimCamera::new(camera_spec());
        let vp = cam.vanishing_point(&Vector3::x()).unwrap();
        let far = cam.project(&Vector3::new(1e9, 3.0, 0.0)).unwrap();
        assert!(vp.distance(&far) < 1e-3);
        // analytic K·R·d
        let d = cam.rotation * Vector3::x();
        let k = Matrix3::new(1100.0, 0.0, 960.0, 0.0, 1100.0, 540.0, 0.0, 0.0, 1.0);
        let h = k * d;
        assert!(vp.distance(&ImagePoint::new(h.x / h.z, h.y / h.z)) < 1e-9);
    }

    #[test]
    fn behind_camera() {
        let cam = SimCamera::new(camera_spec());
        assert!(matches!(
            cam.project(&Vector3::new(-50.0, 0.0, 0.0)),
            Err(Error::BehindCamera)
        ));
    }

    #[test]
    fn calibration_is_self_consistent() {
        let c = SimCamera::new(camera_spec()).calibration().unwrap();
        let f = 1100.0;
        let dot = c.vp1.sub(&c.pp).dot(&c.vp2.sub(&c.pp));
        assert!((dot + f * f).abs() <= 1e-6 * f * f);
        assert!((c.focal() - f).abs() < 1e-6);
    }

    #[test]
    fn same_seed_same_output() {
        let mut s = scenario(vec![car(0, 60.0, 0.0), car(1, 90.0, 0.5)]);
        s.noise = NoiseSpec {
            bbox_sigma: 1.0,
            cc_sigma: 0.02,
            dropout_prob: 0.1,
        };
        let a = generate(&s).unwrap();
        let b = generate(&s).unwrap();
        assert_eq!(a.frames, b.frames);
        let mut s2 = s.clone();
        s2.seed += 1;
        assert_ne!(generate(&s2).unwrap().frames, a.frames);
    }

    #[test]
    fn full_dropout_is_empty() {
        let mut s = scenario(vec![car(0, 60.0, 0.0)]);
        s.noise.dropout_prob = 1.0;
        let out = generate(&s).unwrap();
        assert!(!out.frames.is_empty());
        assert!(out.frames.iter().all(|f| f.detections.is_empty()));
        assert!(out.truth.iter().any(|t| !t.is_empty()));
    }

    #[test]
    fn noiseless_detections_are_exact() {
        let out = generate(&scenario(vec![car(0, 72.0, 0.0), car(1, 50.0, 0.2)])).unwrap();
        let mut seen = 0;
        for (f, objs) in out.frames.iter().zip(&out.truth) {
            assert_eq!(f.detections.len(), objs.len());
            for (d, o) in f.detections.iter().zip(objs) {
                assert_eq!(d.bbox, o.bbox);
                assert_eq!(d.cc, o.cc);
                assert!((0.0..=1.0).contains(&d.cc));
                seen += 1;
            }
        }
        assert!(seen > 50, "only {seen} detections");
    }

    #[test]
    fn gate_time_is_analytic() {
        let s = scenario(vec![car(0, 72.0, 0.5)]);
        let out = generate(&s).unwrap();
        // 60 m at 20 m/s after spawning at 0.5 s
        assert_eq!(out.ground_truth.vehicles[0].gate_time, 0.5 + 60.0 / 20.0);
    }

    #[test]
    fn invalid_scenarios() {
        let mut s = scenario(vec![car(5, 72.0, 0.0)]);
        assert!(matches!(generate(&s), Err(Error::InvalidScenario(_))));
        s.vehicles[0].lane = 0;
        s.camera.yaw = 0.0;
        assert!(matches!(generate(&s), Err(Error::InvalidScenario(_))));
        s.camera.yaw = 0.2;
        s.fps = 0.0;
        assert!(generate(&s).is_err());
    }

    #[test]
    fn traffic_respects_rate_and_headway() {
        let s = scenario(vec![]);
        let mut s = s;
        s.duration = 600.0;
        let s = s.with_traffic(24.38, (50.0, 130.0), 9);
        let n = s.vehicles.len() as f64;
        assert!((n / 10.0 - 24.38).abs() < 5.0, "{n} vehicles");
        for lane in 0..s.road.lane_count {
            let in_lane: Vec<_> = s.vehicles.iter().filter(|v| v.lane == lane).collect();
            for w in in_lane.windows(2) {
                assert!(w[1].spawn_time > w[0].spawn_time);
            }
        }
    }

    #[test]
    fn scenario_json_round_trip() {
        let s = scenario(vec![car(1, 80.0, 1.0)]);
        let text = serde_json::to_string(&s).unwrap();
        let back: SimScenario = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
    }
}
