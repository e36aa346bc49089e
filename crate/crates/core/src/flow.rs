//! Per-point scene flow between a refined source level and its target level.
//!
//! Flow is produced by a [`FlowEstimator`]. Two are provided: classical
//! closest-point correspondence, and an oracle that derives exact flow from a
//! known ground-truth pose (for tests and synthetic validation).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, RigidPose, Vec3};
use crate::spatial::KdTree;

/// Displacement vectors aligned with the refined source points.
///
/// `valid[j]` is false when a correspondence was rejected by distance gating;
/// such points carry zero flow and are excluded from the pose solve.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    vectors: Vec<Vec3>,
    valid: Vec<bool>,
}

impl FlowField {
    pub fn new(vectors: Vec<Vec3>) -> Result<Self> {
        if let Some(index) = vectors.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite { index });
        }
        let valid = vec![true; vectors.len()];
        Ok(Self { vectors, valid })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[Vec3] {
        &self.vectors
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// `p_j + f_j` for every point: the generated target cloud.
    pub fn apply(&self, refined_source: &PointCloud) -> Result<PointCloud> {
        if refined_source.len() != self.len() {
            return Err(Error::SizeMismatch {
                what: "flow field",
                expected: refined_source.len(),
                got: self.len(),
            });
        }
        Ok(PointCloud::from_finite(
            refined_source
                .iter()
                .zip(&self.vectors)
                .map(|(p, f)| p + f)
                .collect(),
        ))
    }
}

/// Produces flow for `refined_source` toward `target`.
///
/// `refinement` is the pose that was applied to the level's original source
/// points to obtain `refined_source` (identity when no refinement happened).
/// Geometric estimators ignore it; the oracle needs it to know where each
/// refined point truly belongs.
pub trait FlowEstimator: Send + Sync {
    fn estimate(
        &self,
        refined_source: &PointCloud,
        target: &PointCloud,
        refinement: &RigidPose,
    ) -> Result<FlowField>;
}

/// Nearest target point minus source point, optionally gated by distance.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClosestPointFlow {
    pub max_correspondence_distance: Option<f64>,
}

impl FlowEstimator for ClosestPointFlow {
    fn estimate(&self, refined_source: &PointCloud, target: &PointCloud, _: &RigidPose) -> Result<FlowField> {
        closest_point_flow_gated(refined_source, target, self.max_correspondence_distance)
    }
}

/// Exact flow from a known `target ← source` pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleFlow {
    pub true_pose: RigidPose,
}

impl FlowEstimator for OracleFlow {
    fn estimate(&self, refined_source: &PointCloud, _: &PointCloud, refinement: &RigidPose) -> Result<FlowField> {
        let remaining = self.true_pose.compose(&refinement.inverse());
        Ok(oracle_flow(refined_source, &remaining))
    }
}

/// Config-level choice of estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowKind {
    #[default]
    ClosestPoint,
    /// Requires ground-truth poses at run time.
    Oracle,
}

/// `nearest_target(p_j) − p_j` for every source point (ties: lower target index).
pub fn closest_point_flow(refined_source: &PointCloud, target: &PointCloud) -> Result<FlowField> {
    closest_point_flow_gated(refined_source, target, None)
}

/// As [`closest_point_flow`], but correspondences farther than
/// `max_distance` are marked invalid and given zero flow.
pub fn closest_point_flow_gated(
    refined_source: &PointCloud,
    target: &PointCloud,
    max_distance: Option<f64>,
) -> Result<FlowField> {
    if refined_source.is_empty() || target.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let tree = KdTree::build(target.points());
    let max_d2 = max_distance.map_or(f64::INFINITY, |d| d * d);
    let (vectors, valid) = refined_source
        .points()
        .par_iter()
        .map(|p| {
            let nb = tree.nearest(p).expect("target is non-empty");
            if nb.dist2 <= max_d2 {
                (target[nb.index] - p, true)
            } else {
                (Vec3::zeros(), false)
            }
        })
        .unzip();
    Ok(FlowField { vectors, valid })
}

/// `(R·p_j + t) − p_j` for every point.
pub fn oracle_flow(refined_source: &PointCloud, true_pose: &RigidPose) -> FlowField {
    let vectors: Vec<Vec3> = refined_source
        .iter()
        .map(|p| true_pose.transform_point(p) - p)
        .collect();
    let valid = vec![true; vectors.len()];
    FlowField { vectors, valid }
}
