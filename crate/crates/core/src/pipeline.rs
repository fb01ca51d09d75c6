//! Staged runner: ingest → NMS → cuboid reconstruction → tracking → speed.
//!
//! NMS and reconstruction are stateless and fan out over `workers` threads.
//! Results carry a sequence number and are put back in order before the
//! tracker, so the output never depends on the worker count. A token
//! channel caps the number of frames in flight at `queue_capacity`, which
//! bounds memory for arbitrarily long streams.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::bounded;
use serde::{Deserialize, Serialize};

use crate::cuboid::{Reconstructor, TravelDirection};
use crate::detections::{nms, FrameDetections, NmsParams, StreamReader};
use crate::error::{Error, Result};
use crate::geometry::{CameraCalibration, ImageSize};
use crate::simulator::{generate, SimScenario};
use crate::speed::{measure, GateGeometry, SpeedMeasurement};
use crate::tracking::{Observation, ObservedFrame, Track, Tracker, TrackerParams};

fn default_workers() -> usize {
    1
}

fn default_queue_capacity() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Relative paths are resolved against the config file's directory.
    #[serde(default)]
    pub calibration: Option<PathBuf>,
    /// One entry per video; each runs as an independent pipeline.
    #[serde(default)]
    pub detections: Vec<PathBuf>,
    /// File holding the gate line and lane polygons (a ground-truth file works).
    #[serde(default)]
    pub geometry: Option<PathBuf>,
    pub target_size: ImageSize,
    #[serde(default)]
    pub nms: NmsParams,
    #[serde(default)]
    pub tracker: TrackerParams,
    pub fps: f64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_queue_capacity")]
    pub queue_capacity: usize,
    /// Synthetic per-frame detector latency, milliseconds.
    #[serde(default)]
    pub inference_delay_ms: f64,
    #[serde(default)]
    pub direction: TravelDirection,
}

impl PipelineConfig {
    pub fn new(target_size: ImageSize, fps: f64) -> Self {
        Self {
            calibration: None,
            detections: Vec::new(),
            geometry: None,
            target_size,
            nms: NmsParams::default(),
            tracker: TrackerParams::default(),
            fps,
            workers: default_workers(),
            queue_capacity: default_queue_capacity(),
            inference_delay_ms: 0.0,
            direction: TravelDirection::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: Self = crate::json_file::read(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.calibration.as_mut().map(resolve);
        cfg.geometry.as_mut().map(resolve);
        cfg.detections.iter_mut().for_each(resolve);
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::json_file::write(path, self)
    }

    /// Parameter checks only; see [`PipelineConfig::validate_files`].
    pub fn validate_params(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.workers == 0 {
            return bad("workers must be >= 1".into());
        }
        if self.queue_capacity == 0 {
            return bad("queue_capacity must be >= 1".into());
        }
        if !(self.fps > 0.0) {
            return bad(format!("fps = {} must be positive", self.fps));
        }
        if !self.target_size.is_valid() {
            return bad("empty target_size".into());
        }
        if !(self.inference_delay_ms >= 0.0 && self.inference_delay_ms.is_finite()) {
            return bad("inference_delay_ms must be >= 0".into());
        }
        self.nms.validate()?;
        self.tracker.validate()
    }

    pub fn validate_files(&self) -> Result<()> {
        let must_exist = |what: &str, p: Option<&PathBuf>| match p {
            None => Err(Error::InvalidConfig(format!("no {what} path"))),
            Some(p) if !p.is_file() => Err(Error::InvalidConfig(format!(
                "{what} file {} does not exist",
                p.display()
            ))),
            Some(_) => Ok(()),
        };
        must_exist("calibration", self.calibration.as_ref())?;
        must_exist("geometry", self.geometry.as_ref())?;
        if self.detections.is_empty() {
            return Err(Error::InvalidConfig("no detection sources".into()));
        }
        for d in &self.detections {
            must_exist("detections", Some(d))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_params()?;
        self.validate_files()
    }
}

/// Mean per-frame latency of each stage, milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageLatency {
    pub ingest_ms: f64,
    pub inference_ms: f64,
    pub nms_ms: f64,
    pub reconstruction_ms: f64,
    pub tracking_ms: f64,
    pub speed_ms: f64,
}

impl StageLatency {
    pub fn total_ms(&self) -> f64 {
        self.ingest_ms
            + self.inference_ms
            + self.nms_ms
            + self.reconstruction_ms
            + self.tracking_ms
            + self.speed_ms
    }

    fn add(&mut self, other: &StageLatency) {
        self.ingest_ms += other.ingest_ms;
        self.inference_ms += other.inference_ms;
        self.nms_ms += other.nms_ms;
        self.reconstruction_ms += other.reconstruction_ms;
        self.tracking_ms += other.tracking_ms;
        self.speed_ms += other.speed_ms;
    }

    fn scaled(&self, k: f64) -> StageLatency {
        StageLatency {
            ingest_ms: self.ingest_ms * k,
            inference_ms: self.inference_ms * k,
            nms_ms: self.nms_ms * k,
            reconstruction_ms: self.reconstruction_ms * k,
            tracking_ms: self.tracking_ms * k,
            speed_ms: self.speed_ms * k,
        }
    }
}

/// Timing of one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoBench {
    pub source: String,
    pub frames: u64,
    pub wall_seconds: f64,
    /// `frames / wall_seconds`; 0 for an empty video.
    pub mean_fps: f64,
    /// Summed (not averaged) stage time, milliseconds.
    pub stage_totals_ms: StageLatency,
    pub measurements: usize,
    pub dropped_tracks: usize,
    pub skipped_detections: usize,
    pub peak_in_flight: usize,
}

impl VideoBench {
    pub fn from_timing(source: impl Into<String>, frames: u64, wall_seconds: f64) -> Self {
        let mean_fps = if frames == 0 || !(wall_seconds > 0.0) {
            0.0
        } else {
            frames as f64 / wall_seconds
        };
        Self {
            source: source.into(),
            frames,
            wall_seconds,
            mean_fps,
            stage_totals_ms: StageLatency::default(),
            measurements: 0,
            dropped_tracks: 0,
            skipped_detections: 0,
            peak_in_flight: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub label: String,
    pub videos: Vec<VideoBench>,
    /// Arithmetic mean of the per-video mean FPS values.
    pub overall_fps: f64,
    /// Per-frame stage latency averaged over all frames of all videos.
    pub stage_latency_ms: StageLatency,
    pub frames: u64,
    /// Set when no frame was processed at all.
    pub empty: bool,
}

/// Arithmetic mean; 0 for no values.
pub fn mean_of_means(per_video_fps: &[f64]) -> f64 {
    if per_video_fps.is_empty() {
        0.0
    } else {
        per_video_fps.iter().sum::<f64>() / per_video_fps.len() as f64
    }
}

impl BenchReport {
    pub fn from_videos(label: impl Into<String>, videos: Vec<VideoBench>) -> Self {
        let fps: Vec<f64> = videos.iter().map(|v| v.mean_fps).collect();
        let frames: u64 = videos.iter().map(|v| v.frames).sum();
        let mut totals = StageLatency::default();
        for v in &videos {
            totals.add(&v.stage_totals_ms);
        }
        let stage_latency_ms = if frames == 0 {
            StageLatency::default()
        } else {
            totals.scaled(1.0 / frames as f64)
        };
        Self {
            label: label.into(),
            overall_fps: mean_of_means(&fps),
            videos,
            stage_latency_ms,
            frames,
            empty: frames == 0,
        }
    }

    pub fn table(&self) -> String {
        let mut out = format!("benchmark: {}\n", self.label);
        out.push_str(&format!(
            "{:<40} {:>10} {:>10} {:>12}\n",
            "video", "frames", "seconds", "mean FPS"
        ));
        for v in &self.videos {
            out.push_str(&format!(
                "{:<40} {:>10} {:>10.3} {:>12.1}\n",
                v.source, v.frames, v.wall_seconds, v.mean_fps
            ));
        }
        out.push_str(&format!(
            "overall FPS (mean of means): {:.1}\n",
            self.overall_fps
        ));
        if self.empty {
            out.push_str("no frames processed\n");
        }
        let s = &self.stage_latency_ms;
        out.push_str("stage latency per frame (ms):\n");
        for (name, v) in [
            ("ingest", s.ingest_ms),
            ("inference", s.inference_ms),
            ("nms", s.nms_ms),
            ("reconstruction", s.reconstruction_ms),
            ("tracking", s.tracking_ms),
            ("speed", s.speed_ms),
        ] {
            out.push_str(&format!("  {name:<16} {v:>10.4}\n"));
        }
        out
    }
}

/// Low vs. high traffic density comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    pub low: BenchReport,
    pub high: BenchReport,
    /// `high.overall_fps / low.overall_fps`; 0 when the low run is empty.
    pub fps_ratio: f64,
}

impl DensityReport {
    pub fn table(&self) -> String {
        format!(
            "{}\n{}\nFPS ratio high/low: {:.3}\n",
            self.low.table(),
            self.high.table(),
            self.fps_ratio
        )
    }
}

/// Result of one stream.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamOutput {
    pub measurements: Vec<SpeedMeasurement>,
    pub bench: VideoBench,
}

/// Calibrated, parameterised pipeline for one camera.
#[derive(Debug, Clone)]
pub struct Pipeline {
    reconstructor: Reconstructor,
    geometry: GateGeometry,
    nms: NmsParams,
    tracker: TrackerParams,
    fps: f64,
    workers: usize,
    queue_capacity: usize,
    inference_delay: Duration,
}

/// Frame after the parallel stages, with its timings.
struct Processed {
    frame: ObservedFrame,
    skipped: usize,
    latency: StageLatency,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn finish_tracks(
    tracks: Vec<Track>,
    geometry: &GateGeometry,
    fps: f64,
    out: &mut Vec<SpeedMeasurement>,
    dropped: &mut usize,
) -> Result<()> {
    for track in tracks {
        match measure(&track, geometry, fps) {
            Ok(m) => out.push(m),
            Err(Error::NoCrossing | Error::TooShort(_)) => *dropped += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

impl Pipeline {
    pub fn new(
        config: &PipelineConfig,
        calibration: CameraCalibration,
        geometry: GateGeometry,
    ) -> Result<Self> {
        config.validate_params()?;
        geometry.validate()?;
        Ok(Self {
            reconstructor: Reconstructor::new(calibration, config.target_size, config.direction)?,
            geometry,
            nms: config.nms,
            tracker: config.tracker,
            fps: config.fps,
            workers: config.workers,
            queue_capacity: config.queue_capacity,
            inference_delay: Duration::from_secs_f64(config.inference_delay_ms / 1e3),
        })
    }

    pub fn from_config(config: &PipelineConfig) -> Result<Self> {
        config.validate()?;
        let calibration = CameraCalibration::load(config.calibration.as_ref().expect("validated"))?;
        let geometry: GateGeometry =
            crate::json_file::read(config.geometry.as_ref().expect("validated"))?;
        Self::new(config, calibration, geometry)
    }

    pub fn reconstructor(&self) -> &Reconstructor {
        &self.reconstructor
    }

    /// NMS and reconstruction of one frame. Detections whose box cannot be
    /// reconstructed are skipped and counted.
    fn process(&self, frame: FrameDetections, ingest: Duration) -> Processed {
        let mut latency = StageLatency {
            ingest_ms: ms(ingest),
            ..StageLatency::default()
        };
        if !self.inference_delay.is_zero() {
            let t = Instant::now();
            thread::sleep(self.inference_delay);
            latency.inference_ms = ms(t.elapsed());
        }
        let t = Instant::now();
        let kept = nms(
            &frame.detections,
            self.nms.iou_threshold,
            self.nms.conf_threshold,
        );
        latency.nms_ms = ms(t.elapsed());

        let t = Instant::now();
        let mut skipped = 0;
        let observations = kept
            .iter()
            .filter_map(|d| match self.reconstructor.reconstruct(d) {
                Ok(c) => Some(Observation {
                    detection: *d,
                    world: c.tracking_point_world,
                }),
                Err(e) => {
                    log::debug!("frame {}: skipping detection: {e}", frame.frame_index);
                    skipped += 1;
                    None
                }
            })
            .collect();
        latency.reconstruction_ms = ms(t.elapsed());
        Processed {
            frame: ObservedFrame {
                frame_index: frame.frame_index,
                timestamp: frame.timestamp,
                observations,
            },
            skipped,
            latency,
        }
    }

    /// Plain single-threaded composition of the stages; the reference the
    /// threaded runner must reproduce.
    pub fn run_sequential(&self, frames: &[FrameDetections]) -> Result<Vec<SpeedMeasurement>> {
        let mut tracker = Tracker::new(self.tracker)?;
        let mut out = Vec::new();
        let mut dropped = 0;
        for f in frames {
            let p = self.process(f.clone(), Duration::ZERO);
            let done = tracker
                .step(&p.frame)
                .map_err(|e| stage_err(f.frame_index, e))?;
            finish_tracks(done, &self.geometry, self.fps, &mut out, &mut dropped)
                .map_err(|e| stage_err(f.frame_index, e))?;
        }
        finish_tracks(
            tracker.flush(),
            &self.geometry,
            self.fps,
            &mut out,
            &mut dropped,
        )?;
        Ok(out)
    }

    /// Runs one stream through the threaded pipeline.
    pub fn run_stream<I>(&self, source: &str, frames: I) -> Result<StreamOutput>
    where
        I: Iterator<Item = Result<FrameDetections>> + Send,
    {
        let started = Instant::now();
        let cap = self.queue_capacity;
        let (work_tx, work_rx) = bounded::<(u64, Result<FrameDetections>, Duration)>(cap);
        let (done_tx, done_rx) = bounded::<(u64, Result<Processed>)>(cap);
        let (token_tx, token_rx) = bounded::<()>(cap);
        for _ in 0..cap {
            token_tx.send(()).expect("receiver alive");
        }
        let in_flight = AtomicUsize::new(0);
        let peak = AtomicUsize::new(0);

        let result = thread::scope(|s| {
            let in_flight = &in_flight;
            let peak = &peak;
            s.spawn(move || {
                let mut frames = frames;
                let mut seq = 0u64;
                loop {
                    if token_rx.recv().is_err() {
                        return;
                    }
                    let t = Instant::now();
                    let Some(item) = frames.next() else {
                        return;
                    };
                    let ingest = t.elapsed();
                    let now = in_flight.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    let stop = item.is_err();
                    if work_tx.send((seq, item, ingest)).is_err() || stop {
                        return;
                    }
                    seq += 1;
                }
            });
            for _ in 0..self.workers {
                let work_rx = work_rx.clone();
                let done_tx = done_tx.clone();
                s.spawn(move || {
                    for (seq, item, ingest) in work_rx {
                        let out = item.map(|f| self.process(f, ingest));
                        if done_tx.send((seq, out)).is_err() {
                            return;
                        }
                    }
                });
            }
            drop(work_rx);
            drop(done_tx);
            self.consume(done_rx, token_tx, in_flight)
        });

        let (measurements, mut bench) = result?;
        bench.source = source.to_string();
        bench.wall_seconds = started.elapsed().as_secs_f64();
        bench.mean_fps = VideoBench::from_timing("", bench.frames, bench.wall_seconds).mean_fps;
        bench.peak_in_flight = peak.load(Ordering::SeqCst);
        log::info!(
            "{source}: {} frames, {} measurements, {:.1} FPS",
            bench.frames,
            measurements.len(),
            bench.mean_fps
        );
        Ok(StreamOutput {
            measurements,
            bench,
        })
    }

    /// Sequential tail: reorder, track, measure. Returns a token per frame.
    fn consume(
        &self,
        done_rx: crossbeam_channel::Receiver<(u64, Result<Processed>)>,
        token_tx: crossbeam_channel::Sender<()>,
        in_flight: &AtomicUsize,
    ) -> Result<(Vec<SpeedMeasurement>, VideoBench)> {
        let mut tracker = Tracker::new(self.tracker)?;
        let mut pending: BTreeMap<u64, Result<Processed>> = BTreeMap::new();
        let mut next = 0u64;
        let mut out = Vec::new();
        let mut bench = VideoBench::from_timing("", 0, 0.0);
        let mut totals = StageLatency::default();
        for (seq, item) in done_rx {
            pending.insert(seq, item);
            while let Some(item) = pending.remove(&next) {
                next += 1;
                let mut p = item?;
                let frame_index = p.frame.frame_index;
                let t = Instant::now();
                let done = tracker
                    .step(&p.frame)
                    .map_err(|e| stage_err(frame_index, e))?;
                p.latency.tracking_ms = ms(t.elapsed());
                let t = Instant::now();
                finish_tracks(
                    done,
                    &self.geometry,
                    self.fps,
                    &mut out,
                    &mut bench.dropped_tracks,
                )
                .map_err(|e| stage_err(frame_index, e))?;
                p.latency.speed_ms = ms(t.elapsed());
                totals.add(&p.latency);
                bench.frames += 1;
                bench.skipped_detections += p.skipped;
                in_flight.fetch_sub(1, Ordering::SeqCst);
                // the ingest thread may already be gone at end of stream
                let _ = token_tx.send(());
            }
        }
        let t = Instant::now();
        finish_tracks(
            tracker.flush(),
            &self.geometry,
            self.fps,
            &mut out,
            &mut bench.dropped_tracks,
        )?;
        totals.speed_ms += ms(t.elapsed());
        bench.stage_totals_ms = totals;
        bench.measurements = out.len();
        Ok((out, bench))
    }
}

fn stage_err(frame: u64, e: Error) -> Error {
    Error::Stage {
        frame,
        source: Box::new(e),
    }
}

/// Runs every configured video and aggregates the benchmark.
pub fn run(config: &PipelineConfig) -> Result<(Vec<SpeedMeasurement>, BenchReport)> {
    let pipeline = Pipeline::from_config(config)?;
    let mut measurements = Vec::new();
    let mut videos = Vec::new();
    for path in &config.detections {
        let reader = StreamReader::open(path)?;
        let out = pipeline.run_stream(&path.display().to_string(), reader)?;
        measurements.extend(out.measurements);
        videos.push(out.bench);
    }
    Ok((measurements, BenchReport::from_videos("run", videos)))
}

fn bench_scenario(
    config: &PipelineConfig,
    scenario: &SimScenario,
    label: &str,
) -> Result<BenchReport> {
    let sim = generate(scenario)?;
    let mut cfg = config.clone();
    cfg.target_size = scenario.target_size;
    cfg.fps = scenario.fps;
    cfg.direction = scenario.road.direction;
    let pipeline = Pipeline::new(&cfg, sim.calibration, sim.ground_truth.geometry.clone())?;
    let out = pipeline.run_stream(label, sim.frames.into_iter().map(Ok))?;
    Ok(BenchReport::from_videos(label, vec![out.bench]))
}

/// Benchmarks the same pipeline settings on a low- and a high-density
/// scenario. Calibration, geometry, fps and target size come from the
/// scenarios; the remaining parameters from `config`.
pub fn bench_density(
    config: &PipelineConfig,
    low: &SimScenario,
    high: &SimScenario,
) -> Result<DensityReport> {
    let low = bench_scenario(config, low, "low")?;
    let high = bench_scenario(config, high, "high")?;
    let fps_ratio = if low.overall_fps > 0.0 {
        high.overall_fps / low.overall_fps
    } else {
        0.0
    };
    Ok(DensityReport {
        low,
        high,
        fps_ratio,
    })
}

/// Measurements file: a pretty-printed JSON array.
pub fn write_measurements(path: &Path, measurements: &[SpeedMeasurement]) -> Result<()> {
    crate::json_file::write(path, &measurements)
}

pub fn read_measurements(path: &Path) -> Result<Vec<SpeedMeasurement>> {
    crate::json_file::read(path)
}

/// Config pointing at the files written by [`crate::SimOutput::write_dir`].
pub fn simulation_config(scenario: &SimScenario) -> PipelineConfig {
    let mut cfg = PipelineConfig::new(scenario.target_size, scenario.fps);
    cfg.calibration = Some("calib.json".into());
    cfg.detections = vec!["dets.jsonl".into()];
    cfg.geometry = Some("gt.json".into());
    cfg.direction = scenario.road.direction;
    cfg
}
