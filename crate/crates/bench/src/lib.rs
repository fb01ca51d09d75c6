//! Fixtures for the criterion benchmarks in `benches/`.

use vspeed_core::simulator::{generate, CameraSpec, NoiseSpec, RoadSpec, SimOutput, SimScenario};
use vspeed_core::ImageSize;

/// Noisy synthetic traffic seen by a 45 degree camera.
pub fn traffic_clip(vehicles_per_minute: f64, seconds: f64) -> SimOutput {
    let scenario = SimScenario {
        camera: CameraSpec {
            height: 10.0,
            pitch: std::f64::consts::FRAC_PI_4,
            yaw: 0.3,
            focal: 1000.0,
            image_size: ImageSize::new(1920, 1080),
        },
        road: RoadSpec {
            gate: 12.0,
            ..RoadSpec::default()
        },
        vehicles: Vec::new(),
        fps: 50.0,
        duration: seconds,
        target_size: ImageSize::new(960, 540),
        noise: NoiseSpec {
            bbox_sigma: 1.0,
            cc_sigma: 0.02,
            dropout_prob: 0.0,
        },
        seed: 1,
    }
    .with_traffic(vehicles_per_minute, (50.0, 130.0), 1);
    generate(&scenario).expect("valid benchmark scenario")
}
