//! Vehicle speed estimation from rectified traffic-camera detections.
//!
//! Detections arrive as a 2D box plus a scalar `c_c` in a rectified image
//! where the travel and cross-road directions are axis aligned. From there
//! the crate rebuilds the 3D box, tracks vehicles with an IoU tracker and
//! turns the road-plane trajectory into a speed. A pinhole simulator
//! provides ground truth, and the `evaluation` and `pipeline` modules hold
//! the accuracy and throughput harnesses.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cuboid;
pub mod detections;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod pipeline;
pub mod simulator;
pub mod speed;
pub mod tracking;

pub use cuboid::{
    cc_from_projection, reconstruct_cuboid, tracking_point, Cuboid3D, DetectionCc, Reconstructor,
    RectBox, TravelDirection,
};
pub use detections::{iou, nms, read_stream, write_stream, FrameDetections, NmsParams};
pub use error::{Error, Result};
pub use evaluation::{
    det_report, match_measurements, speed_report, DetEvalReport, GroundTruth, GroundTruthVehicle,
    SpeedEvalReport,
};
pub use geometry::{
    apply_homography, focal_from_vps, rectification_homography, road_plane_mapping,
    third_vanishing_point, CameraCalibration, Homography, ImagePoint, ImageSize, RectifiedSpace,
    RoadPlane, RoadPoint,
};
pub use pipeline::{BenchReport, PipelineConfig};
pub use simulator::{SimOutput, SimScenario};
pub use speed::{estimate_speed, gate_crossing, GateGeometry, SpeedMeasurement};
pub use tracking::{Track, Tracker, TrackerParams};

mod json_file {
    use std::fs;
    use std::path::Path;

    use serde::de::DeserializeOwned;
    use serde::Serialize;

    use crate::error::{Error, Result};

    pub fn read<T: DeserializeOwned>(path: &Path) -> Result<T> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn write<T: Serialize>(path: &Path, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
