//! `vspeed` command line: simulate, run, evaluate, benchmark.
//!
//! Machine-readable JSON goes to stdout, human-readable tables to stderr.
//! Exit code 2 means invalid input, 1 a runtime failure.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;
use vspeed_core::evaluation::{match_measurements, DEFAULT_TIME_WINDOW};
use vspeed_core::pipeline::{self, read_measurements, write_measurements, PipelineConfig};
use vspeed_core::simulator::{generate, SimScenario};
use vspeed_core::{det_report, read_stream, speed_report, Error, GroundTruth};

#[derive(Parser)]
#[command(
    name = "vspeed",
    version,
    about = "Vehicle speed estimation from rectified detections"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate calibration, ground truth, detections and a pipeline config.
    Simulate {
        scenario: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Run the pipeline and write speed measurements.
    Run {
        #[arg(short, long)]
        config: PathBuf,
        /// Detection stream(s); overrides the config.
        #[arg(short, long)]
        detections: Vec<PathBuf>,
        /// Calibration file; overrides the config.
        #[arg(long)]
        calib: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
        /// Also print the throughput report.
        #[arg(long)]
        bench: bool,
    },
    /// Compare measurements with ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Matching window on gate time, seconds.
        #[arg(long, default_value_t = DEFAULT_TIME_WINDOW)]
        window: f64,
    },
    /// Detection metrics: mAP/mAR 0.5:0.95 and the c_c error.
    DetEval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
    /// Throughput on a low- and a high-density scenario.
    Bench {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long)]
        low: PathBuf,
        #[arg(long)]
        high: PathBuf,
    },
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn simulate(scenario: &Path, output: &Path) -> Result<()> {
    let scenario = SimScenario::load(scenario)?;
    let sim = generate(&scenario)?;
    sim.write_dir(output)?;
    let detections: usize = sim.frames.iter().map(|f| f.detections.len()).sum();
    eprintln!(
        "wrote {} frames, {} detections, {} vehicles to {}",
        sim.frames.len(),
        detections,
        sim.ground_truth.vehicles.len(),
        output.display()
    );
    print_json(&json!({
        "frames": sim.frames.len(),
        "detections": detections,
        "vehicles": sim.ground_truth.vehicles.len(),
        "output": output,
    }))
}

fn run(
    config: &Path,
    detections: Vec<PathBuf>,
    calib: Option<PathBuf>,
    output: &Path,
    bench: bool,
) -> Result<()> {
    let mut cfg = PipelineConfig::load(config)?;
    if !detections.is_empty() {
        cfg.detections = detections;
    }
    if calib.is_some() {
        cfg.calibration = calib;
    }
    let (measurements, report) = pipeline::run(&cfg)?;
    write_measurements(output, &measurements)?;
    eprintln!(
        "{} measurements from {} frames written to {}",
        measurements.len(),
        report.frames,
        output.display()
    );
    if bench {
        eprint!("{}", report.table());
        print_json(&report)?;
    }
    Ok(())
}

fn eval(pred: &Path, gt: &Path, window: f64) -> Result<()> {
    if !(window >= 0.0) {
        return Err(Error::InvalidConfig(format!("window = {window} must be >= 0")).into());
    }
    let pred = read_measurements(pred)?;
    let gt = GroundTruth::load(gt)?;
    let report = speed_report(&match_measurements(&pred, &gt.vehicles, window));
    eprint!("{}", report.table());
    print_json(&report)
}

fn det_eval(pred: &Path, gt: &Path) -> Result<()> {
    let pred = read_stream(pred)?;
    let gt = read_stream(gt)?;
    let report = det_report(&pred, &gt)?;
    eprint!("{report}");
    print_json(&report)
}

fn bench(config: &Path, low: &Path, high: &Path) -> Result<()> {
    let cfg = PipelineConfig::load(config)?;
    let low = SimScenario::load(low).context("low-density scenario")?;
    let high = SimScenario::load(high).context("high-density scenario")?;
    let report = pipeline::bench_density(&cfg, &low, &high)?;
    eprint!("{}", report.table());
    print_json(&report)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let validation = err
        .chain()
        .find_map(|e| e.downcast_ref::<Error>())
        .is_some_and(Error::is_validation);
    if validation {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { scenario, output } => simulate(&scenario, &output),
        Command::Run {
            config,
            detections,
            calib,
            output,
            bench,
        } => run(&config, detections, calib, &output, bench),
        Command::Eval { pred, gt, window } => eval(&pred, &gt, window),
        Command::DetEval { pred, gt } => det_eval(&pred, &gt),
        Command::Bench { config, low, high } => bench(&config, &low, &high),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
