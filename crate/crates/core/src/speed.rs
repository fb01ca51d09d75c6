//! Speeds from finished tracks, and gate-line crossing times.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::RoadPoint;
use crate::tracking::Track;

const MS_TO_KMH: f64 = 3.6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedMeasurement {
    pub track_id: u64,
    pub speed_kmh: f64,
    pub gate_time: f64,
    pub lane: i32,
    pub n_samples: usize,
}

/// Speed of a track before gate assignment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedEstimate {
    pub track_id: u64,
    pub speed_kmh: f64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateLine {
    pub a: RoadPoint,
    pub b: RoadPoint,
}

impl GateLine {
    /// Positive on the left of a→b.
    pub fn signed_distance(&self, p: &RoadPoint) -> f64 {
        let (dx, dy) = (self.b.x - self.a.x, self.b.y - self.a.y);
        (dx * (p.y - self.a.y) - dy * (p.x - self.a.x)) / dx.hypot(dy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub id: i32,
    pub polygon: Vec<RoadPoint>,
}

impl Lane {
    pub fn area(&self) -> f64 {
        let n = self.polygon.len();
        0.5 * (0..n)
            .map(|i| {
                let (p, q) = (self.polygon[i], self.polygon[(i + 1) % n]);
                p.x * q.y - q.x * p.y
            })
            .sum::<f64>()
            .abs()
    }

    pub fn contains(&self, p: &RoadPoint) -> bool {
        let poly = &self.polygon;
        let mut inside = false;
        let mut j = poly.len() - 1;
        for i in 0..poly.len() {
            let (a, b) = (poly[i], poly[j]);
            if (a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x {
                inside = !inside;
            }
            j = i;
        }
        inside
    }
}

/// Measurement line and lane layout, in road-plane meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateGeometry {
    pub gate: GateLine,
    pub lanes: Vec<Lane>,
}

impl GateGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.gate.a.distance(&self.gate.b) <= 0.0 {
            return Err(Error::InvalidConfig("gate endpoints coincide".into()));
        }
        for lane in &self.lanes {
            if lane.polygon.len() < 3 || !(lane.area() > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "lane {} is degenerate",
                    lane.id
                )));
            }
        }
        Ok(())
    }

    /// Lane containing `p`, or -1.
    pub fn lane_of(&self, p: &RoadPoint) -> i32 {
        self.lanes
            .iter()
            .find(|l| l.contains(p))
            .map_or(-1, |l| l.id)
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median per-frame road-plane displacement, converted to km/h.
pub fn estimate_speed(track: &Track, fps: f64) -> Result<SpeedEstimate> {
    if track.entries.len() < 2 {
        return Err(Error::TooShort(track.entries.len()));
    }
    if !(fps > 0.0) {
        return Err(Error::InvalidConfig(format!("fps = {fps}")));
    }
    let mut per_frame: Vec<f64> = track
        .entries
        .windows(2)
        .map(|w| {
            let gap = w[1].frame_index.abs_diff(w[0].frame_index).max(1) as f64;
            w[1].world.distance(&w[0].world) / gap
        })
        .collect();
    let n_samples = per_frame.len();
    Ok(SpeedEstimate {
        track_id: track.id,
        speed_kmh: median(&mut per_frame) * fps * MS_TO_KMH,
        n_samples,
    })
}

/// Time (seconds, `frame / fps`) and lane at which the trajectory crosses
/// the gate line. The first crossing wins.
pub fn gate_crossing(track: &Track, gate: &GateGeometry, fps: f64) -> Result<(f64, i32)> {
    let side: Vec<f64> = track
        .entries
        .iter()
        .map(|e| gate.gate.signed_distance(&e.world))
        .collect();
    for (i, w) in track.entries.windows(2).enumerate() {
        let (s0, s1) = (side[i], side[i + 1]);
        let straddles = (s0 <= 0.0 && s1 > 0.0) || (s0 >= 0.0 && s1 < 0.0);
        if !straddles {
            continue;
        }
        let alpha = s0 / (s0 - s1);
        let (t0, t1) = (w[0].frame_index as f64 / fps, w[1].frame_index as f64 / fps);
        let (p, q) = (w[0].world, w[1].world);
        let at = RoadPoint::new(p.x + alpha * (q.x - p.x), p.y + alpha * (q.y - p.y));
        return Ok((t0 + alpha * (t1 - t0), gate.lane_of(&at)));
    }
    Err(Error::NoCrossing)
}

/// Speed, gate time and lane of one finished track.
pub fn measure(track: &Track, gate: &GateGeometry, fps: f64) -> Result<SpeedMeasurement> {
    let estimate = estimate_speed(track, fps)?;
    let (gate_time, lane) = gate_crossing(track, gate, fps)?;
    Ok(SpeedMeasurement {
        track_id: track.id,
        speed_kmh: estimate.speed_kmh,
        gate_time,
        lane,
        n_samples: estimate.n_samples,
    })
}
