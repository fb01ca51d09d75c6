use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vanishing points are not orthogonal: (vp1 - pp).(vp2 - pp) = {dot} >= 0")]
    NonOrthogonalVanishingPoints { dot: f64 },
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("invalid calibration: {0}")]
    InvalidCalibration(String),
    #[error("image point ({x}, {y}) does not hit the road plane in front of the camera")]
    PointAboveHorizon { x: f64, y: f64 },
    #[error("point maps to infinity")]
    MapsToInfinity,
    #[error("y = {y} lies outside the box rows [{y_min}, {y_max}]")]
    OutOfBox { y: f64, y_min: f64, y_max: f64 },
    #[error("degenerate box: {0}")]
    DegenerateBox(String),
    #[error("invalid detection: {0}")]
    InvalidDetection(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("timestamps not strictly increasing at line {line}")]
    NonMonotonicTimestamps { line: usize },
    #[error("frame {got} presented after frame {last}")]
    OutOfOrderFrame { last: u64, got: u64 },
    #[error("track has {0} entries, need at least 2")]
    TooShort(usize),
    #[error("trajectory never crosses the gate line")]
    NoCrossing,
    #[error("no matched measurement pairs")]
    NoMatches,
    #[error("ground truth contains no boxes")]
    EmptyGroundTruth,
    #[error("point is behind the camera")]
    BehindCamera,
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("frame {frame}: {source}")]
    Stage {
        frame: u64,
        #[source]
        source: Box<Error>,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// True for errors caused by bad input data rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Stage { source, .. } => source.is_validation(),
            Error::Io { .. } => false,
            Error::NoMatches | Error::TooShort(_) | Error::NoCrossing => false,
            _ => true,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
