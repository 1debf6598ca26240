//! Command-line front end: `check`, `simulate` and `sweep`.
//!
//! Exit codes: 0 success, 1 conformance failure, 2 usage error.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::check::run_check;
use crate::harness::{run_sweep, write_csv, DetectorKind, Execution, FrameConfig, HarnessError, StopRule};
use crate::modem::ConstellationKind;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Usage(#[from] clap::Error),
    #[error("invalid --{flag} value `{value}`: {reason}")]
    Grid {
        flag: &'static str,
        value: String,
        reason: String,
    },
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("cannot write output: {0}")]
    Io(#[from] io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(e) if !e.use_stderr() => EXIT_OK,
            CliError::Usage(_) | CliError::Grid { .. } => EXIT_USAGE,
            CliError::Harness(HarnessError::Config(_) | HarnessError::FrameBits { .. }) => EXIT_USAGE,
            CliError::Harness(_) | CliError::Io(_) => EXIT_FAILURE,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "siso-stsd", version, about = "SISO single tree search sphere decoder: conformance checks and link simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compare the tree search against exhaustive max-log references.
    Check(CheckArgs),
    /// Simulate one SNR point for every clip level and iteration count.
    Simulate(SimArgs),
    /// Sweep SNR, clip level and iteration count; writes CSV.
    Sweep(SimArgs),
}

#[derive(Debug, Args)]
struct CheckArgs {
    #[arg(long)]
    seed: u64,
    /// Random instances per system configuration.
    #[arg(long, default_value_t = 500)]
    instances: usize,
}

#[derive(Debug, Args)]
struct SimArgs {
    #[arg(long, default_value_t = 4)]
    mt: usize,
    #[arg(long, default_value_t = 4)]
    mr: usize,
    #[arg(long = "mod", default_value = "qam16")]
    modulation: String,
    #[arg(long, default_value_t = 64)]
    tones: usize,
    /// Comma-separated iteration counts.
    #[arg(long, default_value = "1")]
    iters: String,
    /// Comma-separated normalized clip levels L_max*N_o; `inf` disables clipping.
    #[arg(long, default_value = "inf")]
    clip: String,
    /// SNR grid in dB: `start:step:stop` or a single value.
    #[arg(long, default_value = "15")]
    snr: String,
    /// Minimum frames per point.
    #[arg(long, default_value_t = 1000)]
    frames: u64,
    /// Frame errors to collect per point before stopping.
    #[arg(long, default_value_t = 50)]
    errors: u64,
    /// Hard cap on frames per point.
    #[arg(long, default_value_t = 100_000)]
    max_frames: u64,
    #[arg(long)]
    seed: u64,
    /// `sts` or `lsd`.
    #[arg(long, default_value = "sts")]
    detector: String,
    /// Candidate list size for `--detector lsd`.
    #[arg(long, default_value_t = 16)]
    list_size: usize,
    /// Run frames on a single thread.
    #[arg(long)]
    sequential: bool,
    /// CSV destination; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Check,
    Simulate,
    Sweep,
}

/// Parsed command line.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub mode: Mode,
    /// System parameters shared by every grid point.
    pub base: FrameConfig,
    pub snr_grid: Vec<f64>,
    pub clip_grid: Vec<f64>,
    pub iteration_grid: Vec<usize>,
    pub stop: StopRule,
    pub seed: u64,
    pub instances: usize,
    pub execution: Execution,
    pub out: Option<PathBuf>,
}

impl RunSpec {
    /// Grid points ordered by clip level, then iterations, then SNR.
    pub fn grid(&self) -> Vec<FrameConfig> {
        let mut out = Vec::new();
        for &clip_norm in &self.clip_grid {
            for &iterations in &self.iteration_grid {
                for &snr_db in &self.snr_grid {
                    out.push(FrameConfig {
                        clip_norm,
                        iterations,
                        snr_db,
                        ..self.base.clone()
                    });
                }
            }
        }
        out
    }
}

fn grid_error(flag: &'static str, value: &str, reason: impl Into<String>) -> CliError {
    CliError::Grid {
        flag,
        value: value.to_string(),
        reason: reason.into(),
    }
}

/// Parses `start:step:stop` (inclusive) or a single number.
pub fn parse_snr_grid(value: &str) -> Result<Vec<f64>, CliError> {
    let nums: Result<Vec<f64>, _> = value.split(':').map(|p| p.trim().parse::<f64>()).collect();
    let nums = nums.map_err(|e| grid_error("snr", value, e.to_string()))?;
    if nums.iter().any(|v| !v.is_finite()) {
        return Err(grid_error("snr", value, "values must be finite"));
    }
    match nums.as_slice() {
        [single] => Ok(vec![*single]),
        [start, step, stop] => {
            if *step <= 0.0 {
                return Err(grid_error("snr", value, "step must be positive"));
            }
            if stop < start {
                return Err(grid_error("snr", value, "stop is below start"));
            }
            let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
            // round away accumulated binary noise so CSV values stay readable
            Ok((0..count)
                .map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9)
                .collect())
        }
        _ => Err(grid_error("snr", value, "expected start:step:stop or a single value")),
    }
}

/// Comma-separated non-negative clip levels; `inf` allowed.
pub fn parse_clip_grid(value: &str) -> Result<Vec<f64>, CliError> {
    value
        .split(',')
        .map(|item| {
            let item = item.trim();
            let v = if item.eq_ignore_ascii_case("inf") {
                f64::INFINITY
            } else {
                item.parse::<f64>().map_err(|e| grid_error("clip", value, e.to_string()))?
            };
            if v.is_nan() || v < 0.0 {
                return Err(grid_error("clip", value, "clip levels must be >= 0"));
            }
            Ok(v)
        })
        .collect()
}

pub fn parse_iteration_grid(value: &str) -> Result<Vec<usize>, CliError> {
    value
        .split(',')
        .map(|item| match item.trim().parse::<usize>() {
            Ok(0) => Err(grid_error("iters", value, "iteration counts must be >= 1")),
            Ok(v) => Ok(v),
            Err(e) => Err(grid_error("iters", value, e.to_string())),
        })
        .collect()
}

pub fn parse_args<I, T>(argv: I) -> Result<RunSpec, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv)?;
    match cli.command {
        Command::Check(args) => Ok(RunSpec {
            mode: Mode::Check,
            base: FrameConfig::default(),
            snr_grid: Vec::new(),
            clip_grid: crate::check::CLIP_GRID.to_vec(),
            iteration_grid: Vec::new(),
            stop: StopRule::default(),
            seed: args.seed,
            instances: args.instances,
            execution: Execution::Sequential,
            out: None,
        }),
        Command::Simulate(args) => sim_spec(Mode::Simulate, args),
        Command::Sweep(args) => sim_spec(Mode::Sweep, args),
    }
}

fn sim_spec(mode: Mode, args: SimArgs) -> Result<RunSpec, CliError> {
    let constellation: ConstellationKind = args
        .modulation
        .parse()
        .map_err(|e: crate::modem::ModemError| grid_error("mod", &args.modulation, e.to_string()))?;
    let detector = match args.detector.as_str() {
        "sts" => DetectorKind::Sts,
        "lsd" => DetectorKind::Lsd {
            list_size: args.list_size,
        },
        other => return Err(grid_error("detector", other, "expected sts or lsd")),
    };
    let snr_grid = parse_snr_grid(&args.snr)?;
    if mode == Mode::Simulate && snr_grid.len() != 1 {
        return Err(grid_error("snr", &args.snr, "simulate takes a single SNR; use sweep for grids"));
    }
    let base = FrameConfig {
        transmit: args.mt,
        receive: args.mr,
        constellation,
        tones: args.tones,
        seed: args.seed,
        detector,
        ..FrameConfig::default()
    }
    .with_consistent_frame_bits();
    let spec = RunSpec {
        mode,
        base,
        snr_grid,
        clip_grid: parse_clip_grid(&args.clip)?,
        iteration_grid: parse_iteration_grid(&args.iters)?,
        stop: StopRule {
            min_frames: args.frames.max(1),
            min_errors: args.errors,
            max_frames: args.max_frames,
        },
        seed: args.seed,
        instances: 0,
        execution: if args.sequential {
            Execution::Sequential
        } else {
            Execution::default()
        },
        out: args.out,
    };
    for cfg in spec.grid() {
        cfg.validate()?;
    }
    Ok(spec)
}

/// Executes a parsed spec; returns the process exit code.
pub fn execute(spec: &RunSpec) -> Result<i32, CliError> {
    match spec.mode {
        Mode::Check => {
            let report = run_check(spec.seed, spec.instances);
            print!("{report}");
            if report.passed() {
                println!("conformance: PASS");
                Ok(EXIT_OK)
            } else {
                if let Some(cx) = &report.first_failure {
                    println!("conformance: FAIL (reproduce with instance seed {})", cx.seed);
                }
                Ok(EXIT_FAILURE)
            }
        }
        Mode::Simulate | Mode::Sweep => {
            let points = run_sweep(&spec.grid(), &spec.stop, spec.execution)?;
            match &spec.out {
                Some(path) => {
                    let mut w = BufWriter::new(File::create(path)?);
                    write_csv(&mut w, &points)?;
                    w.flush()?;
                }
                None => write_csv(io::stdout().lock(), &points)?,
            }
            Ok(EXIT_OK)
        }
    }
}

/// Parses `argv`, runs it and reports errors on stderr.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let spec = match parse_args(argv) {
        Ok(spec) => spec,
        Err(CliError::Usage(e)) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    match execute(&spec) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
