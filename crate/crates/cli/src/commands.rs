use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use c2flo::flow::FlowKind;
use c2flo::kitti::{self, SequenceLayout};
use c2flo::odometry::{run_sequence, PairSummary};
use c2flo::synth::{generate_sequence, SynthConfig};
use c2flo::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::{EvalArgs, RunArgs, SynthArgs};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestInputs {
    pub dataset: PathBuf,
    pub sequence: String,
    pub velodyne_dir: PathBuf,
    /// Ground-truth poses, when the oracle flow read them.
    pub poses: Option<PathBuf>,
    pub max_frames: Option<usize>,
    pub scans: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestOutputs {
    pub trajectory: PathBuf,
    pub manifest: PathBuf,
}

/// Everything needed to reproduce a run, written next to its trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    /// Resolved configuration (any preset already applied).
    pub config: RunConfig,
    pub inputs: ManifestInputs,
    pub outputs: ManifestOutputs,
    pub pairs: Vec<PairSummary>,
    pub total_seconds: f64,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::MalformedFile {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

/// `<dir>/<stem>.manifest.json` for a trajectory at `<dir>/<stem>.<ext>`.
pub fn manifest_path(trajectory: &Path) -> PathBuf {
    let stem = trajectory.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    trajectory.with_file_name(format!("{stem}.manifest.json"))
}

struct RunPlan {
    config: RunConfig,
    dataset: PathBuf,
    sequence: String,
    max_frames: Option<usize>,
}

fn plan(args: &RunArgs) -> Result<RunPlan> {
    if let Some(path) = &args.manifest {
        let m = RunManifest::load(path)?;
        return Ok(RunPlan {
            config: m.config.resolve()?,
            dataset: m.inputs.dataset,
            sequence: m.inputs.sequence,
            max_frames: args.max_frames.or(m.inputs.max_frames),
        });
    }
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if args.preset.is_some() {
        config.preset = args.preset;
    }
    Ok(RunPlan {
        config: config.resolve()?,
        dataset: args.dataset.clone().expect("clap requires --dataset without --manifest"),
        sequence: args.sequence.clone().expect("clap requires --sequence without --manifest"),
        max_frames: args.max_frames,
    })
}

pub fn run(args: &RunArgs) -> Result<()> {
    let started = Instant::now();
    let RunPlan {
        config,
        dataset,
        sequence,
        max_frames,
    } = plan(args)?;
    let layout = SequenceLayout::new(&dataset, &sequence);
    let mut scans = layout.scan_paths()?;
    if let Some(n) = max_frames {
        scans.truncate(n);
    }
    if scans.len() < 2 {
        return Err(Error::DegenerateInput(format!(
            "{} holds {} scan(s); at least 2 are needed",
            layout.velodyne_dir.display(),
            scans.len()
        )));
    }

    let ground_truth = if config.odometry.flow == FlowKind::Oracle {
        let gt = kitti::read_trajectory(&layout.poses_path)?;
        if gt.len() < scans.len() {
            return Err(Error::LengthMismatch {
                gt: gt.len(),
                est: scans.len(),
            });
        }
        Some(gt)
    } else {
        None
    };

    println!("sequence {sequence}: {} scans from {}", scans.len(), layout.velodyne_dir.display());
    let result = run_sequence(
        scans.iter().map(|p| kitti::read_scan(p)),
        &config.preprocess,
        &config.pyramid,
        &config.odometry,
        &config.sequence,
        ground_truth.as_deref(),
        |pair| {
            let mut line = format!(
                "frame {:>5} -> {:<5} residual {:.4} m",
                pair.frame,
                pair.frame + 1,
                pair.residual
            );
            if let Some(loss) = pair.loss_residual {
                let _ = write!(line, "  loss {loss:.4} m");
            }
            if !pair.diverged_levels.is_empty() {
                let _ = write!(line, "  diverged at levels {:?}", pair.diverged_levels);
            }
            let _ = write!(line, "  {:.2} s", pair.seconds);
            println!("{line}");
        },
    )?;

    kitti::write_trajectory(&result.trajectory, &args.out)?;
    let manifest_out = manifest_path(&args.out);
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config,
        inputs: ManifestInputs {
            dataset,
            sequence,
            velodyne_dir: layout.velodyne_dir.clone(),
            poses: ground_truth.is_some().then(|| layout.poses_path.clone()),
            max_frames,
            scans,
        },
        outputs: ManifestOutputs {
            trajectory: args.out.clone(),
            manifest: manifest_out.clone(),
        },
        pairs: result.pairs,
        total_seconds: started.elapsed().as_secs_f64(),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    kitti::write_atomically(&manifest_out, json.as_bytes())?;
    println!(
        "wrote {} poses to {} and manifest {}",
        result.trajectory.len(),
        args.out.display(),
        manifest_out.display()
    );
    Ok(())
}

/// Plain-text table of an evaluation.
pub fn format_report(report: &kitti::EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:>8} {:>12} {:>16} {:>9}", "length", "t_err [%]", "r_err [deg/100m]", "segments");
    for s in &report.per_length {
        let _ = writeln!(
            out,
            "{:>8.0} {:>12.3} {:>16.3} {:>9}",
            s.length,
            s.t_err * 100.0,
            s.r_err.to_degrees() * 100.0,
            s.segment_count
        );
    }
    let _ = writeln!(
        out,
        "t_rel {:.3} %   r_rel {:.3} deg/100m   ({} segments)",
        report.t_rel, report.r_rel, report.segments_evaluated
    );
    if report.too_short {
        let _ = writeln!(out, "warning: trajectory has no segment of 100 m or more; metrics are zero");
    }
    out
}

/// CSV with one row per segment length and a final `all` row.
pub fn report_csv(report: &kitti::EvalReport) -> String {
    let mut out = String::from("length_m,t_err_percent,r_err_deg_per_100m,segments\n");
    for s in &report.per_length {
        let _ = writeln!(
            out,
            "{},{:.9},{:.9},{}",
            s.length,
            s.t_err * 100.0,
            s.r_err.to_degrees() * 100.0,
            s.segment_count
        );
    }
    let _ = writeln!(out, "all,{:.9},{:.9},{}", report.t_rel, report.r_rel, report.segments_evaluated);
    out
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let gt = kitti::read_trajectory(&args.gt)?;
    let est = kitti::read_trajectory(&args.est)?;
    let report = kitti::evaluate(&gt, &est)?;
    print!("{}", format_report(&report));
    if let Some(path) = &args.report {
        kitti::write_atomically(path, report_csv(&report).as_bytes())?;
    }
    Ok(())
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        seed: args.seed,
        points_per_scan: args.points,
        ..Default::default()
    };
    let seq = generate_sequence(&cfg, args.profile, args.frames, args.speed)?;
    let layout = SequenceLayout::new(&args.out, &args.sequence);
    fs::create_dir_all(&layout.velodyne_dir).map_err(|e| Error::io(&layout.velodyne_dir, e))?;
    let poses_dir = layout.poses_path.parent().expect("poses path has a parent");
    fs::create_dir_all(poses_dir).map_err(|e| Error::io(poses_dir, e))?;
    for (k, scan) in seq.scans.iter().enumerate() {
        kitti::write_scan(scan, &layout.scan_path(k))?;
    }
    kitti::write_trajectory(&seq.ground_truth, &layout.poses_path)?;
    println!(
        "wrote {} scans to {} and ground truth to {}",
        seq.scans.len(),
        layout.velodyne_dir.display(),
        layout.poses_path.display()
    );
    Ok(())
}
