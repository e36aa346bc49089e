//! KITTI odometry files and segment-based drift metrics.
//!
//! Scans are little-endian `f32` quadruples `(x, y, z, reflectance)`.
//! Trajectories hold one row-major 3×4 `[R|t]` pose per line.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::Matrix3;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud, RigidPose, Vec3};

const RECORD_BYTES: usize = 16;

/// Orthonormality tolerance for poses read from text (ground truth carries rounding).
pub const TRAJECTORY_ROTATION_TOLERANCE: f64 = 1e-3;

/// Segment lengths, meters.
pub const SEGMENT_LENGTHS: [f64; 8] = [100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0];

/// Frames between segment start points.
pub const START_STRIDE: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct ScanFile {
    pub path: PathBuf,
    pub points: PointCloud,
    /// Records skipped because a coordinate was NaN or infinite.
    pub dropped_non_finite: usize,
}

pub fn read_scan_file(path: &Path) -> Result<ScanFile> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % RECORD_BYTES != 0 {
        return Err(Error::MalformedFile {
            path: path.to_path_buf(),
            reason: format!("size {} is not a multiple of {RECORD_BYTES} bytes", bytes.len()),
        });
    }
    let mut points = Vec::with_capacity(bytes.len() / RECORD_BYTES);
    let mut dropped = 0;
    for rec in bytes.chunks_exact(RECORD_BYTES) {
        let f = |i: usize| f32::from_le_bytes(rec[4 * i..4 * i + 4].try_into().expect("4-byte slice")) as f64;
        let (x, y, z) = (f(0), f(1), f(2));
        if x.is_finite() && y.is_finite() && z.is_finite() {
            points.push(Point3::new(x, y, z));
        } else {
            dropped += 1;
        }
    }
    Ok(ScanFile {
        path: path.to_path_buf(),
        points: PointCloud::from_finite(points),
        dropped_non_finite: dropped,
    })
}

pub fn read_scan(path: &Path) -> Result<PointCloud> {
    read_scan_file(path).map(|s| s.points)
}

/// Writes xyz as `f32` with zero reflectance.
pub fn write_scan(cloud: &PointCloud, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(cloud.len() * RECORD_BYTES);
    for p in cloud {
        for c in [p.x as f32, p.y as f32, p.z as f32, 0.0] {
            bytes.extend_from_slice(&c.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn parse_pose_line(path: &Path, line_no: usize, line: &str) -> Result<RigidPose> {
    let parse_err = |reason: String| Error::Parse {
        path: path.to_path_buf(),
        line: line_no,
        reason,
    };
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 12 {
        return Err(parse_err(format!("expected 12 fields, found {}", fields.len())));
    }
    let mut v = [0.0f64; 12];
    for (slot, field) in v.iter_mut().zip(&fields) {
        *slot = field
            .parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| parse_err(format!("`{field}` is not a finite number")))?;
    }
    let rotation = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
    let translation = Vec3::new(v[3], v[7], v[11]);
    RigidPose::from_approximate(rotation, translation, TRAJECTORY_ROTATION_TOLERANCE)
        .map_err(|e| parse_err(e.to_string()))
}

pub fn parse_trajectory(path: &Path, text: &str) -> Result<Vec<RigidPose>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_pose_line(path, i + 1, l))
        .collect()
}

pub fn read_trajectory(path: &Path) -> Result<Vec<RigidPose>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trajectory(path, &text)
}

pub fn format_trajectory(poses: &[RigidPose]) -> String {
    let mut out = String::with_capacity(poses.len() * 12 * 20);
    for pose in poses {
        let row = pose.to_row_major_3x4();
        let fields: Vec<String> = row.iter().map(|v| format!("{v:.12e}")).collect();
        out.push_str(&fields.join(" "));
        out.push('\n');
    }
    out
}

/// Writes to a sibling temporary file and renames it into place, so a failed
/// write never leaves a partial trajectory behind.
pub fn write_trajectory(poses: &[RigidPose], path: &Path) -> Result<()> {
    write_atomically(path, format_trajectory(poses).as_bytes())
}

pub fn write_atomically(path: &Path, contents: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let result = fs::File::create(&tmp)
        .and_then(|mut f| {
            f.write_all(contents)?;
            f.sync_all()
        })
        .and_then(|_| fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

/// `<root>/sequences/<id>/velodyne` and `<root>/poses/<id>.txt`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceLayout {
    pub velodyne_dir: PathBuf,
    pub poses_path: PathBuf,
}

impl SequenceLayout {
    pub fn new(root: &Path, sequence: &str) -> Self {
        Self {
            velodyne_dir: root.join("sequences").join(sequence).join("velodyne"),
            poses_path: root.join("poses").join(format!("{sequence}.txt")),
        }
    }

    /// `.bin` files in the velodyne directory, sorted by file name.
    pub fn scan_paths(&self) -> Result<Vec<PathBuf>> {
        let dir = &self.velodyne_dir;
        let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut paths = Vec::new();
        for entry in entries {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.extension().is_some_and(|x| x == "bin") {
                paths.push(path);
            }
        }
        paths.sort();
        Ok(paths)
    }

    pub fn scan_path(&self, frame: usize) -> PathBuf {
        self.velodyne_dir.join(format!("{frame:06}.bin"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LengthStats {
    pub length: f64,
    /// Mean translational error over segments of this length, as a fraction.
    pub t_err: f64,
    /// Mean rotational error, radians per meter.
    pub r_err: f64,
    pub segment_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    /// Mean translational drift, percent.
    pub t_rel: f64,
    /// Mean rotational drift, degrees per 100 m.
    pub r_rel: f64,
    pub per_length: [LengthStats; 8],
    pub segments_evaluated: usize,
    /// No segment of at least 100 m exists.
    pub too_short: bool,
}

fn path_distances(poses: &[RigidPose]) -> Vec<f64> {
    let mut dist = Vec::with_capacity(poses.len());
    let mut acc = 0.0;
    dist.push(0.0);
    for w in poses.windows(2) {
        acc += (w[1].translation() - w[0].translation()).norm();
        dist.push(acc);
    }
    dist
}

/// Average relative drift over 100–800 m segments.
pub fn evaluate(gt: &[RigidPose], est: &[RigidPose]) -> Result<EvalReport> {
    if gt.len() != est.len() {
        return Err(Error::LengthMismatch {
            gt: gt.len(),
            est: est.len(),
        });
    }
    if gt.len() < 2 {
        return Err(Error::TooFewPoints {
            needed: 2,
            got: gt.len(),
        });
    }
    let dist = path_distances(gt);
    let mut sums = [(0.0f64, 0.0f64, 0usize); 8];
    for first in (0..gt.len()).step_by(START_STRIDE) {
        for (slot, &len) in SEGMENT_LENGTHS.iter().enumerate() {
            let Some(last) = (first..gt.len()).find(|&g| dist[g] - dist[first] >= len) else {
                continue;
            };
            let gt_delta = gt[first].inverse().compose(&gt[last]);
            let est_delta = est[first].inverse().compose(&est[last]);
            // Equal relative motions are an exact zero error, which rounding in
            // the composed product would otherwise blur into ~1e-8 rad.
            let err = if gt_delta == est_delta {
                RigidPose::identity()
            } else {
                gt_delta.inverse().compose(&est_delta)
            };
            let s = &mut sums[slot];
            s.0 += err.translation().norm() / len;
            s.1 += err.rotation_angle() / len;
            s.2 += 1;
        }
    }
    let per_length: [LengthStats; 8] = std::array::from_fn(|i| {
        let (t, r, n) = sums[i];
        let d = n.max(1) as f64;
        LengthStats {
            length: SEGMENT_LENGTHS[i],
            t_err: t / d,
            r_err: r / d,
            segment_count: n,
        }
    });
    let segments: usize = sums.iter().map(|s| s.2).sum();
    let (t_sum, r_sum) = sums.iter().fold((0.0, 0.0), |a, s| (a.0 + s.0, a.1 + s.1));
    let d = segments.max(1) as f64;
    Ok(EvalReport {
        t_rel: t_sum / d * 100.0,
        r_rel: r_sum / d * (180.0 / std::f64::consts::PI) * 100.0,
        per_length,
        segments_evaluated: segments,
        too_short: segments == 0,
    })
}
