//! Coarse-to-fine registration of a frame pair and trajectory accumulation.
//!
//! For each level from the coarsest (3) to the finest (0):
//!
//! 1. refine the level's source points with the pose fused so far,
//!    `S̃ = R_{i+1}·S + T_{i+1}` (skipped at level 3, or when refinement is off);
//! 2. estimate flow `F` from `S̃` toward the same-level target points and form
//!    the generated target `Ŝ = S̃ + F`;
//! 3. solve the residual pose `(ΔR_i, ΔT_i)` between `S̃` and `Ŝ`;
//! 4. fuse: `R_i = ΔR_i·R_{i+1}`, `T_i = ΔR_i·T_{i+1} + ΔT_i` (at level 3 the
//!    fused pose is the delta itself).
//!
//! Steps 1–3 repeat `iterations_per_level` times per level, each iteration
//! warping the source by everything estimated so far and folding its solve into
//! the level's delta.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{ClosestPointFlow, FlowEstimator, FlowKind, OracleFlow};
use crate::geometry::{PointCloud, RigidPose};
use crate::preprocess::{preprocess_loss_cloud, preprocess_scan, NormalField, PreprocessConfig};
use crate::pyramid::{build_pyramid, Pyramid, PyramidConfig, PyramidLevel, LEVELS};
use crate::solver::{match_normals, solve_pair, SolverVariant, DEFAULT_SV_CUTOFF};
use crate::spatial::KdTree;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OdometryConfig {
    pub iterations_per_level: usize,
    pub solver: SolverVariant,
    /// Warp each level's source by the coarser level's fused pose.
    pub use_refinement: bool,
    /// Run levels 3→0; when off only level 0 is solved.
    pub use_multilevel: bool,
    pub sv_cutoff: f64,
    pub flow: FlowKind,
    /// Closest-point correspondences farther than this are discarded.
    pub max_correspondence_distance: Option<f64>,
    /// An iteration whose update `|x|` falls below this ends the level early.
    pub convergence_threshold: f64,
}

impl Default for OdometryConfig {
    fn default() -> Self {
        Self {
            iterations_per_level: 3,
            solver: SolverVariant::PointToPlane,
            use_refinement: true,
            use_multilevel: true,
            sv_cutoff: DEFAULT_SV_CUTOFF,
            flow: FlowKind::ClosestPoint,
            max_correspondence_distance: None,
            convergence_threshold: 1e-6,
        }
    }
}

impl OdometryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations_per_level == 0 {
            return Err(Error::InvalidConfig("iterations_per_level must be at least 1".into()));
        }
        if !(self.sv_cutoff >= 0.0 && self.sv_cutoff < 1.0) {
            return Err(Error::InvalidConfig("sv_cutoff must lie in [0, 1)".into()));
        }
        if let Some(d) = self.max_correspondence_distance {
            if !(d > 0.0) {
                return Err(Error::InvalidConfig("max_correspondence_distance must be positive".into()));
            }
        }
        Ok(())
    }

    /// Level visiting order.
    pub fn levels(&self) -> Vec<usize> {
        if self.use_multilevel {
            (0..LEVELS).rev().collect()
        } else {
            vec![0]
        }
    }

    /// Instantiates the configured flow estimator. `true_pose` is the
    /// `target ← source` ground truth and is required for [`FlowKind::Oracle`].
    pub fn estimator(&self, true_pose: Option<&RigidPose>) -> Result<Box<dyn FlowEstimator>> {
        match self.flow {
            FlowKind::ClosestPoint => Ok(Box::new(ClosestPointFlow {
                max_correspondence_distance: self.max_correspondence_distance,
            })),
            FlowKind::Oracle => {
                let true_pose = *true_pose.ok_or_else(|| {
                    Error::InvalidConfig("oracle flow needs ground-truth poses".into())
                })?;
                Ok(Box::new(OracleFlow { true_pose }))
            }
        }
    }
}

/// Named configuration bundles matching the ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// One point-to-point solve at level 0.
    SvdPo2po,
    /// One point-to-plane solve at level 0.
    SvdPo2pl,
    /// All levels, fused, without warping the finer levels.
    MultiNoRefine,
    /// All levels with refinement (the default pipeline).
    MultiRefine,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::SvdPo2po, Preset::SvdPo2pl, Preset::MultiNoRefine, Preset::MultiRefine];

    pub fn name(self) -> &'static str {
        match self {
            Preset::SvdPo2po => "svd-po2po",
            Preset::SvdPo2pl => "svd-po2pl",
            Preset::MultiNoRefine => "multi-no-refine",
            Preset::MultiRefine => "multi-refine",
        }
    }

    pub fn from_name(name: &str) -> Option<Preset> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }

    pub fn apply(self, base: &OdometryConfig) -> OdometryConfig {
        let mut cfg = base.clone();
        match self {
            Preset::SvdPo2po | Preset::SvdPo2pl => {
                cfg.use_multilevel = false;
                cfg.iterations_per_level = 1;
                cfg.solver = if self == Preset::SvdPo2po {
                    SolverVariant::PointToPoint
                } else {
                    SolverVariant::PointToPlane
                };
            }
            Preset::MultiNoRefine => {
                cfg.use_multilevel = true;
                cfg.use_refinement = false;
                cfg.solver = SolverVariant::PointToPlane;
            }
            Preset::MultiRefine => {
                cfg.use_multilevel = true;
                cfg.use_refinement = true;
                cfg.solver = SolverVariant::PointToPlane;
            }
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelTrace {
    pub level: usize,
    /// `(ΔR_i, ΔT_i)`: everything this level added on top of the coarser pose.
    pub delta_pose: RigidPose,
    /// `(R_i, T_i)`.
    pub fused_pose: RigidPose,
    /// Level point-to-plane residual of `fused_pose`, in meters.
    pub residual: f64,
    pub iterations_used: usize,
    /// Flow objective after each iteration: mean point-to-plane gap between
    /// the warped source and the target generated from fresh flow.
    pub residual_history: Vec<f64>,
    /// Set when the objective rose between iterations; the best iterate was kept.
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    /// `target ← source`, i.e. `(R_0, T_0)`.
    pub final_pose: RigidPose,
    pub traces: Vec<LevelTrace>,
    /// Level-0 point-to-plane residual of `final_pose`.
    pub total_residual: f64,
}

/// Mean `|n̄·(R·s + T − q)|` over source points, where `q` is the target point
/// nearest to the transformed source point and `n̄` its normal.
pub fn point_to_plane_residual(
    source: &PointCloud,
    target: &PointCloud,
    target_normals: &NormalField,
    pose: &RigidPose,
) -> Result<f64> {
    let tree = KdTree::build(target.points());
    residual_with_tree(&tree, source, target, target_normals, pose)
}

fn residual_with_tree(
    tree: &KdTree<'_>,
    source: &PointCloud,
    target: &PointCloud,
    target_normals: &NormalField,
    pose: &RigidPose,
) -> Result<f64> {
    if target.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if target_normals.len() != target.len() {
        return Err(Error::SizeMismatch {
            what: "target normals",
            expected: target.len(),
            got: target_normals.len(),
        });
    }
    if source.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = source
        .iter()
        .map(|s| {
            let moved = pose.transform_point(s);
            let nb = tree.nearest(&moved).expect("target is non-empty");
            target_normals[nb.index].dot(&(moved - target[nb.index])).abs()
        })
        .sum();
    Ok(sum / source.len() as f64)
}

/// Registers `source` (frame k) against `target` (frame k+1).
pub fn register_pair(
    source: &Pyramid,
    target: &Pyramid,
    cfg: &OdometryConfig,
    flow: &dyn FlowEstimator,
) -> Result<PairResult> {
    cfg.validate()?;
    if source.counts() != target.counts() {
        return Err(Error::SizeMismatch {
            what: "pyramid level sizes",
            expected: source.counts()[0],
            got: target.counts()[0],
        });
    }

    let mut fused_prev: Option<RigidPose> = None;
    let mut traces = Vec::new();
    for level in cfg.levels() {
        let trace = register_level(source, target, level, fused_prev.as_ref(), cfg, flow)?;
        fused_prev = Some(trace.fused_pose);
        traces.push(trace);
    }

    let final_pose = fused_prev.expect("at least one level runs");
    let (src0, tgt0) = (source.level(0), target.level(0));
    let total_residual = point_to_plane_residual(&src0.points, &tgt0.points, &tgt0.normals, &final_pose)?;
    Ok(PairResult {
        final_pose,
        traces,
        total_residual,
    })
}

/// Mean `|n̂·(ŝ − s̃)|` between a warped source and its generated target, with
/// `n̂` the normal of the target point nearest each generated point.
fn flow_objective(refined: &PointCloud, generated: &PointCloud, target: &PyramidLevel) -> Result<f64> {
    if refined.is_empty() {
        return Ok(0.0);
    }
    let normals = match_normals(generated, &target.points, &target.normals)?;
    let sum: f64 = refined
        .iter()
        .zip(generated.iter())
        .zip(normals.normals())
        .map(|((s, g), n)| n.dot(&(g - s)).abs())
        .sum();
    Ok(sum / refined.len() as f64)
}

fn register_level(
    source: &Pyramid,
    target: &Pyramid,
    level: usize,
    coarser: Option<&RigidPose>,
    cfg: &OdometryConfig,
    flow: &dyn FlowEstimator,
) -> Result<LevelTrace> {
    let src = &source.level(level).points;
    let tgt = target.level(level);
    let tree = KdTree::build(tgt.points.points());

    // The first level solved has nothing to fuse with.
    let fuse = |delta: &RigidPose| match coarser {
        Some(prior) => delta.compose(prior),
        None => *delta,
    };
    let warp_base = match coarser {
        Some(prior) if cfg.use_refinement => *prior,
        _ => RigidPose::identity(),
    };

    // Warp the level source by `warp`, estimate flow, and drop gated points.
    let correspond = |warp: &RigidPose| -> Result<(PointCloud, PointCloud)> {
        let refined = warp.transform_cloud(src);
        let field = flow.estimate(&refined, &tgt.points, warp)?;
        let generated = field.apply(&refined)?;
        if field.valid_count() == field.len() {
            Ok((refined, generated))
        } else {
            let keep: Vec<usize> = (0..field.len()).filter(|&j| field.valid()[j]).collect();
            Ok((refined.select(&keep), generated.select(&keep)))
        }
    };

    let mut delta = RigidPose::identity();
    let mut iterates = Vec::with_capacity(cfg.iterations_per_level);
    let mut history = Vec::with_capacity(cfg.iterations_per_level);
    let mut pending = correspond(&warp_base)?;
    for _ in 0..cfg.iterations_per_level {
        let (refined, generated) = &pending;
        let report = solve_pair(refined, generated, &tgt.points, &tgt.normals, cfg.solver, cfg.sv_cutoff)?;
        delta = report.pose.compose(&delta);
        iterates.push(delta);
        pending = correspond(&delta.compose(&warp_base))?;
        history.push(flow_objective(&pending.0, &pending.1, tgt)?);
        if report.x.norm() < cfg.convergence_threshold {
            break;
        }
    }

    let diverged = history.windows(2).any(|w| w[1] > w[0]);
    // Lowest objective wins; ties go to the later iterate.
    let best = (0..history.len())
        .rev()
        .min_by(|&i, &j| history[i].total_cmp(&history[j]))
        .expect("iterations_per_level >= 1");
    let delta = iterates[best];
    let residual = residual_with_tree(&tree, src, &tgt.points, &tgt.normals, &fuse(&delta))?;
    Ok(LevelTrace {
        level,
        delta_pose: delta,
        fused_pose: fuse(&delta),
        residual,
        iterations_used: history.len(),
        residual_history: history,
        diverged,
    })
}

/// A scan reduced to everything registration needs.
#[derive(Debug, Clone)]
pub struct PreparedFrame {
    pub pyramid: Pyramid,
    /// Ground-removed, voxelized cloud for the residual metric.
    pub loss_cloud: Option<(PointCloud, NormalField)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SequenceOptions {
    /// Also compute the residual on RANSAC-ground-removed full-resolution clouds.
    pub loss_residual: bool,
}

impl Default for SequenceOptions {
    fn default() -> Self {
        Self { loss_residual: true }
    }
}

pub fn prepare_frame(
    scan: &PointCloud,
    pre: &PreprocessConfig,
    pyr: &PyramidConfig,
    options: &SequenceOptions,
) -> Result<PreparedFrame> {
    let (cloud, normals) = preprocess_scan(scan, pre)?;
    let pyramid = build_pyramid(&cloud, &normals, pyr)?;
    let loss_cloud = if options.loss_residual {
        Some(preprocess_loss_cloud(scan, pre)?)
    } else {
        None
    };
    Ok(PreparedFrame { pyramid, loss_cloud })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSummary {
    /// Index of the source frame.
    pub frame: usize,
    pub relative_pose: RigidPose,
    pub residual: f64,
    pub loss_residual: Option<f64>,
    pub diverged_levels: Vec<usize>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceResult {
    /// `world ← sensor_k` per frame, `world = sensor_0`.
    pub trajectory: Vec<RigidPose>,
    pub pairs: Vec<PairSummary>,
}

/// Runs odometry over consecutive scans and accumulates the trajectory.
///
/// `ground_truth` (`world ← sensor_k` per frame) is only consulted by the
/// oracle flow estimator. Each frame is preprocessed once and reused as the
/// source of the next pair. `on_pair` sees every pair as soon as it is solved.
pub fn run_sequence<I>(
    scans: I,
    pre: &PreprocessConfig,
    pyr: &PyramidConfig,
    odo: &OdometryConfig,
    options: &SequenceOptions,
    ground_truth: Option<&[RigidPose]>,
    mut on_pair: impl FnMut(&PairSummary),
) -> Result<SequenceResult>
where
    I: IntoIterator<Item = Result<PointCloud>>,
{
    pre.validate()?;
    pyr.validate()?;
    odo.validate()?;
    let frame_err = |frame: usize| move |e: Error| Error::Frame { frame, source: Box::new(e) };

    let mut scans = scans.into_iter();
    let first = scans.next().ok_or(Error::TooFewPoints { needed: 2, got: 0 })?;
    let mut previous = first.and_then(|s| prepare_frame(&s, pre, pyr, options)).map_err(frame_err(0))?;
    let mut trajectory = vec![RigidPose::identity()];
    let mut pairs = Vec::new();

    for (k, scan) in scans.enumerate() {
        let started = Instant::now();
        let next_index = k + 1;
        let current = scan
            .and_then(|s| prepare_frame(&s, pre, pyr, options))
            .map_err(frame_err(next_index))?;

        let true_relative = match ground_truth {
            Some(gt) if odo.flow == FlowKind::Oracle => {
                let (from, to) = gt.get(k).zip(gt.get(next_index)).ok_or(Error::LengthMismatch {
                    gt: gt.len(),
                    est: next_index + 1,
                })?;
                Some(to.inverse().compose(from))
            }
            _ => None,
        };
        let estimator = odo.estimator(true_relative.as_ref()).map_err(frame_err(k))?;
        let result = register_pair(&previous.pyramid, &current.pyramid, odo, estimator.as_ref()).map_err(frame_err(k))?;

        let loss_residual = match (&previous.loss_cloud, &current.loss_cloud) {
            (Some((src, _)), Some((tgt, tgt_n))) => {
                Some(point_to_plane_residual(src, tgt, tgt_n, &result.final_pose).map_err(frame_err(k))?)
            }
            _ => None,
        };
        let world = trajectory[k].accumulate(&result.final_pose);
        trajectory.push(world);

        let summary = PairSummary {
            frame: k,
            relative_pose: result.final_pose,
            residual: result.total_residual,
            loss_residual,
            diverged_levels: result.traces.iter().filter(|t| t.diverged).map(|t| t.level).collect(),
            seconds: started.elapsed().as_secs_f64(),
        };
        on_pair(&summary);
        pairs.push(summary);
        previous = current;
    }

    if trajectory.len() < 2 {
        return Err(Error::TooFewPoints {
            needed: 2,
            got: trajectory.len(),
        });
    }
    Ok(SequenceResult { trajectory, pairs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{oracle_flow, FlowField};
    use crate::geometry::{euler_to_pose, EulerPose6, Point3, Vec3};
    use crate::synth::{generate_pair, generate_sequence, MotionProfile, SynthConfig};

    fn small_configs() -> (PreprocessConfig, PyramidConfig) {
        let pre = PreprocessConfig {
            target_count: 2048,
            ..Default::default()
        };
        let pyr = PyramidConfig {
            level_counts: [2048, 512, 128, 64],
        };
        (pre, pyr)
    }

    fn small_pair(seed: u64) -> (Pyramid, Pyramid, RigidPose) {
        let (pre, pyr) = small_configs();
        let synth = SynthConfig {
            points_per_scan: 6000,
            ..Default::default()
        };
        let pair = generate_pair(seed, 2f64.to_radians(), 0.3, &synth);
        let opts = SequenceOptions { loss_residual: false };
        let a = prepare_frame(&pair.source, &pre, &pyr, &opts).unwrap();
        let b = prepare_frame(&pair.target, &pre, &pyr, &opts).unwrap();
        (a.pyramid, b.pyramid, pair.true_pose)
    }

    #[test]
    fn identical_pyramids_give_identity() {
        let (a, _, _) = small_pair(1);
        let result = register_pair(&a, &a, &OdometryConfig::default(), &ClosestPointFlow::default()).unwrap();
        let (rot, trans) = result.final_pose.error_to(&RigidPose::identity());
        assert!(rot < 1e-9 && trans < 1e-9);
        assert!(result.total_residual < 1e-9);
        assert!(result.traces.iter().all(|t| t.residual < 1e-9));
    }

    #[test]
    fn oracle_flow_is_exact_after_the_coarsest_level() {
        for seed in 0..3 {
            let (a, b, truth) = small_pair(seed);
            let result = register_pair(&a, &b, &OdometryConfig::default(), &OracleFlow { true_pose: truth }).unwrap();
            assert_eq!(result.traces[0].level, 3);
            let (rot, trans) = result.traces[0].fused_pose.error_to(&truth);
            assert!(rot < 1e-6 && trans < 1e-6, "level 3: {rot} {trans}");
            let (rot, trans) = result.final_pose.error_to(&truth);
            assert!(rot < 1e-6 && trans < 1e-6, "level 0: {rot} {trans}");
        }
    }

    #[test]
    fn oracle_residuals_do_not_grow_toward_fine_levels() {
        for seed in 0..3 {
            let (a, b, truth) = small_pair(seed);
            let result = register_pair(&a, &b, &OdometryConfig::default(), &OracleFlow { true_pose: truth }).unwrap();
            for w in result.traces.windows(2) {
                assert!(w[1].residual <= w[0].residual, "{} > {}", w[1].residual, w[0].residual);
            }
        }
    }

    #[test]
    fn closest_point_flow_recovers_small_motion() {
        let (a, b, truth) = small_pair(4);
        let result = register_pair(&a, &b, &OdometryConfig::default(), &ClosestPointFlow::default()).unwrap();
        let (rot, trans) = result.final_pose.error_to(&truth);
        assert!(rot.to_degrees() < 0.5 && trans < 0.05, "{} deg, {trans} m", rot.to_degrees());
    }

    #[test]
    fn coarsest_fused_pose_is_its_delta() {
        let (a, b, _) = small_pair(5);
        let result = register_pair(&a, &b, &OdometryConfig::default(), &ClosestPointFlow::default()).unwrap();
        assert_eq!(result.traces.len(), LEVELS);
        assert_eq!(result.traces[0].fused_pose, result.traces[0].delta_pose);
        for w in result.traces.windows(2) {
            assert_eq!(w[1].fused_pose, w[1].delta_pose.compose(&w[0].fused_pose));
        }
        assert_eq!(result.final_pose, result.traces[3].fused_pose);
    }

    #[test]
    fn single_shot_level_zero_is_one_solve() {
        let (a, b, _) = small_pair(6);
        let cfg = Preset::SvdPo2pl.apply(&OdometryConfig::default());
        let result = register_pair(&a, &b, &cfg, &ClosestPointFlow::default()).unwrap();
        assert_eq!(result.traces.len(), 1);
        assert_eq!(result.traces[0].level, 0);
        assert_eq!(result.traces[0].iterations_used, 1);

        let (src, tgt) = (a.level(0), b.level(0));
        let flow = ClosestPointFlow::default()
            .estimate(&src.points, &tgt.points, &RigidPose::identity())
            .unwrap();
        let generated = flow.apply(&src.points).unwrap();
        let direct = solve_pair(&src.points, &generated, &tgt.points, &tgt.normals, SolverVariant::PointToPlane, DEFAULT_SV_CUTOFF).unwrap();
        assert_eq!(result.final_pose, direct.pose);
    }

    #[test]
    fn registration_is_deterministic() {
        let (a, b, _) = small_pair(7);
        let cfg = OdometryConfig::default();
        let first = register_pair(&a, &b, &cfg, &ClosestPointFlow::default()).unwrap();
        let second = register_pair(&a, &b, &cfg, &ClosestPointFlow::default()).unwrap();
        assert_eq!(first, second);
    }

    /// Flow toward three times the remaining motion, so every iteration
    /// overshoots further than the last.
    struct Overshoot {
        truth: RigidPose,
    }

    impl FlowEstimator for Overshoot {
        fn estimate(&self, refined: &PointCloud, _: &PointCloud, refinement: &RigidPose) -> Result<FlowField> {
            let remaining = self.truth.compose(&refinement.inverse());
            Ok(oracle_flow(refined, &remaining.compose(&remaining).compose(&remaining)))
        }
    }

    #[test]
    fn divergence_keeps_the_best_iterate() {
        let (a, b, truth) = small_pair(8);
        let single = OdometryConfig {
            use_multilevel: false,
            iterations_per_level: 1,
            ..Default::default()
        };
        let flow = Overshoot { truth };
        let first = register_pair(&a, &b, &single, &flow).unwrap();
        assert!(!first.traces[0].diverged);

        let triple = OdometryConfig {
            iterations_per_level: 3,
            ..single
        };
        let result = register_pair(&a, &b, &triple, &flow).unwrap();
        let trace = &result.traces[0];
        assert!(trace.diverged);
        assert_eq!(trace.iterations_used, 3);
        assert!(trace.residual_history.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(result.final_pose, first.final_pose);
    }

    #[test]
    fn residual_examples() {
        let (a, _, _) = small_pair(9);
        let lvl = a.level(0);
        let pose = euler_to_pose(&EulerPose6::new(0.01, -0.02, 0.03, 0.2, -0.1, 0.05));
        let moved = pose.transform_cloud(&lvl.points);
        let rotated_normals =
            NormalField::new(lvl.normals.normals().iter().map(|n| pose.rotation() * n).collect()).unwrap();
        let r = point_to_plane_residual(&lvl.points, &moved, &rotated_normals, &pose).unwrap();
        assert!(r < 1e-9, "{r}");

        let grid: Vec<Point3> = (0..10)
            .flat_map(|i| (0..10).map(move |j| Point3::new(i as f64, j as f64, 0.0)))
            .collect();
        let source = PointCloud::new(grid).unwrap();
        let target = source.translated(&Vec3::new(0.0, 0.0, 0.1));
        let up = NormalField::new(vec![Vec3::z(); target.len()]).unwrap();
        let r = point_to_plane_residual(&source, &target, &up, &RigidPose::identity()).unwrap();
        assert!((r - 0.1).abs() < 1e-9);

        let empty_normals = NormalField::new(vec![]).unwrap();
        assert!(matches!(
            point_to_plane_residual(&source, &PointCloud::default(), &empty_normals, &RigidPose::identity()),
            Err(Error::EmptyCloud)
        ));
    }

    #[test]
    fn config_validation_and_presets() {
        OdometryConfig::default().validate().unwrap();
        let bad = OdometryConfig {
            iterations_per_level: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(OdometryConfig::default().levels(), vec![3, 2, 1, 0]);
        for p in Preset::ALL {
            assert_eq!(Preset::from_name(p.name()), Some(p));
        }
        let base = OdometryConfig::default();
        let po2po = Preset::SvdPo2po.apply(&base);
        assert_eq!((po2po.solver, po2po.use_multilevel, po2po.iterations_per_level), (SolverVariant::PointToPoint, false, 1));
        assert!(!Preset::MultiNoRefine.apply(&base).use_refinement);
        assert_eq!(Preset::MultiRefine.apply(&base), base);
        assert!(matches!(base.estimator(None), Ok(_)));
        let oracle = OdometryConfig {
            flow: FlowKind::Oracle,
            ..Default::default()
        };
        assert!(oracle.estimator(None).is_err());
    }

    #[test]
    fn sequence_of_identical_scans_stays_put() {
        let (pre, pyr) = small_configs();
        let synth = SynthConfig {
            points_per_scan: 6000,
            ..Default::default()
        };
        let scan = generate_sequence(&synth, MotionProfile::Straight, 2, 1.0).unwrap().scans.remove(0);
        let result = run_sequence(
            [Ok(scan.clone()), Ok(scan)],
            &pre,
            &pyr,
            &OdometryConfig::default(),
            &SequenceOptions::default(),
            None,
            |_| {},
        )
        .unwrap();
        assert_eq!(result.trajectory.len(), 2);
        for pose in &result.trajectory {
            let (rot, trans) = pose.error_to(&RigidPose::identity());
            assert!(rot < 1e-9 && trans < 1e-9);
        }
        assert_eq!(result.pairs.len(), 1);
        assert!(result.pairs[0].loss_residual.unwrap() < 1e-9);
    }

    #[test]
    fn oracle_sequence_tracks_ground_truth() {
        let (pre, pyr) = small_configs();
        let synth = SynthConfig {
            points_per_scan: 6000,
            ..Default::default()
        };
        let seq = generate_sequence(&synth, MotionProfile::Turns, 10, 1.0).unwrap();
        let odo = OdometryConfig {
            flow: FlowKind::Oracle,
            ..Default::default()
        };
        let mut seen = 0;
        let result = run_sequence(
            seq.scans.into_iter().map(Ok),
            &pre,
            &pyr,
            &odo,
            &SequenceOptions { loss_residual: false },
            Some(&seq.ground_truth),
            |_| seen += 1,
        )
        .unwrap();
        assert_eq!(seen, 9);
        assert_eq!(result.trajectory.len(), 10);
        for (est, gt) in result.trajectory.iter().zip(&seq.ground_truth) {
            assert!((est.translation() - gt.translation()).norm() < 1e-4);
        }
    }

    #[test]
    fn sequence_errors_name_the_frame() {
        let (pre, pyr) = small_configs();
        let synth = SynthConfig {
            points_per_scan: 6000,
            ..Default::default()
        };
        let scan = generate_sequence(&synth, MotionProfile::Straight, 2, 1.0).unwrap().scans.remove(0);
        let scans = vec![Ok(scan.clone()), Ok(scan), Err(Error::EmptyCloud)];
        let err = run_sequence(scans, &pre, &pyr, &OdometryConfig::default(), &SequenceOptions::default(), None, |_| {})
            .unwrap_err();
        assert!(matches!(err, Error::Frame { frame: 2, .. }), "{err:?}");
        let one = run_sequence(
            std::iter::once(Ok(PointCloud::default())),
            &pre,
            &pyr,
            &OdometryConfig::default(),
            &SequenceOptions::default(),
            None,
            |_| {},
        );
        assert!(one.is_err());
    }
}
