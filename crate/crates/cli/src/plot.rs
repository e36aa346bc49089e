//! Static 2D trajectory overlays: a CSV of plotted coordinates and an SVG.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use c2flo::kitti;
use c2flo::{Result, RigidPose};

use crate::{PlotArgs, PlotPlane};

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];
const SVG_SIZE: f64 = 800.0;
const MARGIN: f64 = 40.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    /// `(horizontal, vertical)` plot coordinates per frame.
    pub points: Vec<(f64, f64)>,
}

pub fn project(poses: &[RigidPose], plane: PlotPlane) -> Vec<(f64, f64)> {
    poses
        .iter()
        .map(|p| {
            let t = p.translation();
            match plane {
                PlotPlane::Xz => (t.x, t.z),
                PlotPlane::Xy => (t.x, t.y),
            }
        })
        .collect()
}

/// File stems, made unique with a numeric suffix when they repeat.
fn labels(paths: &[PathBuf]) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(paths.len());
    for p in paths {
        let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "trajectory".into());
        let mut label = stem.clone();
        let mut n = 2;
        while out.contains(&label) {
            label = format!("{stem}-{n}");
            n += 1;
        }
        out.push(label);
    }
    out
}

pub fn to_csv(series: &[Series], plane: PlotPlane) -> String {
    let vertical = match plane {
        PlotPlane::Xz => "z",
        PlotPlane::Xy => "y",
    };
    let mut out = format!("series,frame,x,{vertical}\n");
    for s in series {
        for (k, (x, v)) in s.points.iter().enumerate() {
            let _ = writeln!(out, "{},{k},{x:.6},{v:.6}", s.label);
        }
    }
    out
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Equal-aspect overlay of every series with a legend.
pub fn to_svg(series: &[Series]) -> String {
    let all = series.iter().flat_map(|s| s.points.iter());
    let (mut lo_x, mut lo_y, mut hi_x, mut hi_y) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        lo_x = lo_x.min(x);
        hi_x = hi_x.max(x);
        lo_y = lo_y.min(y);
        hi_y = hi_y.max(y);
    }
    if !lo_x.is_finite() {
        (lo_x, lo_y, hi_x, hi_y) = (0.0, 0.0, 0.0, 0.0);
    }
    let span = (hi_x - lo_x).max(hi_y - lo_y).max(1e-9);
    let scale = (SVG_SIZE - 2.0 * MARGIN) / span;
    // SVG y grows downward.
    let map = |x: f64, y: f64| (MARGIN + (x - lo_x) * scale, SVG_SIZE - MARGIN - (y - lo_y) * scale);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_SIZE}" height="{SVG_SIZE}" viewBox="0 0 {SVG_SIZE} {SVG_SIZE}">"#
    );
    let _ = writeln!(svg, r#"  <rect width="100%" height="100%" fill="white"/>"#);
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| {
                let (u, v) = map(x, y);
                format!("{u:.2},{v:.2}")
            })
            .collect();
        let label = escape(&s.label);
        let _ = writeln!(
            svg,
            r#"  <polyline data-series="{label}" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
        let _ = writeln!(
            svg,
            r#"  <text x="{MARGIN}" y="{:.0}" font-family="sans-serif" font-size="14" fill="{color}">{label}</text>"#,
            MARGIN / 2.0 + 16.0 * i as f64 + 4.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// `<out>` with its extension replaced by `svg`.
pub fn svg_path(out: &Path) -> PathBuf {
    out.with_extension("svg")
}

pub fn plot(args: &PlotArgs) -> Result<()> {
    let names = labels(&args.trajectories);
    let mut series = Vec::with_capacity(names.len());
    for (path, label) in args.trajectories.iter().zip(names) {
        let poses = kitti::read_trajectory(path)?;
        series.push(Series {
            label,
            points: project(&poses, args.plane),
        });
    }
    kitti::write_atomically(&args.out, to_csv(&series, args.plane).as_bytes())?;
    let svg = svg_path(&args.out);
    kitti::write_atomically(&svg, to_svg(&series).as_bytes())?;
    println!("wrote {} and {}", args.out.display(), svg.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use c2flo::Vec3;

    #[test]
    fn identity_trajectory_rows() {
        let poses = vec![RigidPose::identity(); 3];
        let series = vec![Series {
            label: "id".into(),
            points: project(&poses, PlotPlane::Xz),
        }];
        let csv = to_csv(&series, PlotPlane::Xz);
        let rows: Vec<&str> = csv.lines().collect();
        assert_eq!(rows[0], "series,frame,x,z");
        assert_eq!(&rows[1..], &["id,0,0.000000,0.000000", "id,1,0.000000,0.000000", "id,2,0.000000,0.000000"]);
    }

    #[test]
    fn straight_line_is_collinear() {
        let poses: Vec<RigidPose> = (0..5).map(|k| RigidPose::from_translation(Vec3::new(0.0, 0.0, k as f64))).collect();
        let pts = project(&poses, PlotPlane::Xz);
        assert!(pts.iter().enumerate().all(|(k, &(x, z))| x == 0.0 && z == k as f64));
    }

    #[test]
    fn repeated_stems_get_suffixes() {
        let paths = vec![PathBuf::from("a/traj.txt"), PathBuf::from("b/traj.txt"), PathBuf::from("gt.txt")];
        assert_eq!(labels(&paths), vec!["traj", "traj-2", "gt"]);
    }

    #[test]
    fn svg_labels_every_series() {
        let series = vec![
            Series { label: "gt".into(), points: vec![(0.0, 0.0), (1.0, 1.0)] },
            Series { label: "a<b".into(), points: vec![(0.0, 0.0), (2.0, 0.5)] },
        ];
        let svg = to_svg(&series);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains(">gt</text>"));
        assert!(svg.contains(">a&lt;b</text>"));
    }
}
