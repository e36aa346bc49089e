//! Command-line front end: run odometry on a KITTI-layout sequence, evaluate
//! trajectories, generate synthetic sequences and export plot data.

pub mod commands;
pub mod config;
pub mod plot;

use std::ffi::OsString;
use std::path::PathBuf;

use c2flo::odometry::Preset;
use c2flo::synth::MotionProfile;
use clap::{Args, Parser, Subcommand, ValueEnum};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "c2flo", version, about = "Coarse-to-fine LiDAR odometry")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate a trajectory for one sequence.
    Run(RunArgs),
    /// Compare an estimated trajectory against ground truth.
    Eval(EvalArgs),
    /// Write a synthetic sequence in KITTI layout.
    Synth(SynthArgs),
    /// Export 2D trajectory overlays as CSV and SVG.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Dataset root holding `sequences/<id>/velodyne` and `poses/<id>.txt`.
    #[arg(long, required_unless_present = "manifest")]
    pub dataset: Option<PathBuf>,
    #[arg(long, required_unless_present = "manifest")]
    pub sequence: Option<String>,
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, conflicts_with = "manifest")]
    pub config: Option<PathBuf>,
    /// Ablation preset, overriding any preset in the config file.
    #[arg(long, value_parser = parse_preset, conflicts_with = "manifest")]
    pub preset: Option<Preset>,
    /// Process at most this many scans.
    #[arg(long)]
    pub max_frames: Option<usize>,
    /// Repeat the run recorded in a manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Output trajectory; the manifest goes next to it as `<stem>.manifest.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub est: PathBuf,
    /// CSV report with per-length errors.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub frames: usize,
    #[arg(long, value_parser = parse_profile, default_value = "straight")]
    pub profile: MotionProfile,
    /// Meters traveled per frame.
    #[arg(long, default_value_t = 1.0)]
    pub speed: f64,
    #[arg(long, default_value_t = 20_000)]
    pub points: usize,
    /// Sequence id to write under `<out>/sequences/`.
    #[arg(long, default_value = "00")]
    pub sequence: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlotPlane {
    /// Camera-style ground plane (KITTI ground truth).
    Xz,
    /// LiDAR-style ground plane.
    Xy,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(required = true)]
    pub trajectories: Vec<PathBuf>,
    /// CSV output; an SVG rendering is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = PlotPlane::Xz)]
    pub plane: PlotPlane,
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    Preset::from_name(s).ok_or_else(|| {
        let names: Vec<&str> = Preset::ALL.iter().map(|p| p.name()).collect();
        format!("unknown preset `{s}` (expected one of {})", names.join(", "))
    })
}

fn parse_profile(s: &str) -> Result<MotionProfile, String> {
    MotionProfile::from_name(s).ok_or_else(|| format!("unknown profile `{s}` (expected straight or turns)"))
}

/// Exit code for a library error.
pub fn exit_code(err: &c2flo::Error) -> i32 {
    match err {
        c2flo::Error::InvalidConfig(_) => EXIT_USAGE,
        e if e.is_numerical() => EXIT_NUMERICAL,
        _ => EXIT_DATA,
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Run(a) => commands::run(a),
        Command::Eval(a) => commands::eval(a),
        Command::Synth(a) => commands::synth(a),
        Command::Plot(a) => plot::plot(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
