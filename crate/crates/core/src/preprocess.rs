//! Raw scan → fixed-size cloud with per-point normals.
//!
//! The network-input path is [`preprocess_scan`]: drop the lowest points by z,
//! voxelize, force the count to `target_count`, then fit normals.
//! [`preprocess_loss_cloud`] is the alternative used for the registration
//! residual: RANSAC ground removal followed by the same voxelization.

use std::collections::HashMap;

use nalgebra::{Matrix3, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud, Vec3};
use crate::spatial::KdTree;

const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Fraction of lowest-z points removed before voxelization.
    pub ground_drop_fraction: f64,
    /// Voxel edge length in meters.
    pub voxel_side: f64,
    /// Number of points after count normalization.
    pub target_count: usize,
    /// Neighbourhood size for plane fitting.
    pub normal_neighbors: usize,
    pub ransac_iters: usize,
    pub ransac_inlier_dist: f64,
    pub ransac_seed: u64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            ground_drop_fraction: 0.5,
            voxel_side: 0.3,
            target_count: 8192,
            normal_neighbors: 16,
            ransac_iters: 100,
            ransac_inlier_dist: 0.15,
            ransac_seed: 0,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_owned()));
        if !(0.0..1.0).contains(&self.ground_drop_fraction) {
            return bad("ground_drop_fraction must lie in [0, 1)");
        }
        if !(self.voxel_side > 0.0 && self.voxel_side.is_finite()) {
            return bad("voxel_side must be positive");
        }
        if self.target_count == 0 {
            return bad("target_count must be positive");
        }
        if self.normal_neighbors < 3 {
            return bad("normal_neighbors must be at least 3");
        }
        if self.ransac_iters == 0 {
            return bad("ransac_iters must be positive");
        }
        if !(self.ransac_inlier_dist >= 0.0) {
            return bad("ransac_inlier_dist must be non-negative");
        }
        Ok(())
    }
}

/// Unit normals aligned 1:1 with a point cloud.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NormalField {
    normals: Vec<Vec3>,
}

impl NormalField {
    /// Fails if any normal is non-finite or deviates from unit length by more than 1e-6.
    pub fn new(normals: Vec<Vec3>) -> Result<Self> {
        for (i, n) in normals.iter().enumerate() {
            if !n.iter().all(|v| v.is_finite()) || (n.norm() - 1.0).abs() > UNIT_TOLERANCE {
                return Err(Error::DegenerateInput(format!(
                    "normal {i} is not a unit vector"
                )));
            }
        }
        Ok(Self { normals })
    }

    pub fn len(&self) -> usize {
        self.normals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normals.is_empty()
    }

    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    pub fn select(&self, indices: &[usize]) -> NormalField {
        NormalField {
            normals: indices.iter().map(|&i| self.normals[i]).collect(),
        }
    }
}

impl std::ops::Index<usize> for NormalField {
    type Output = Vec3;

    fn index(&self, index: usize) -> &Vec3 {
        &self.normals[index]
    }
}

/// Removes the `fraction` of points with the smallest z.
///
/// Keeps `ceil(n·(1−fraction))` points in their original order. Points are
/// ranked by (z, index), so among equal heights the earlier ones are dropped.
pub fn drop_ground_by_z(scan: &PointCloud, fraction: f64) -> Result<PointCloud> {
    if scan.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidConfig(format!(
            "ground drop fraction {fraction} outside [0, 1)"
        )));
    }
    let n = scan.len();
    // The epsilon keeps e.g. 10·(1−0.7) = 3.0000000000000004 from rounding up.
    let keep = ((n as f64) * (1.0 - fraction) - 1e-9).ceil().max(0.0) as usize;
    let keep = keep.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scan[a].z.total_cmp(&scan[b].z).then(a.cmp(&b)));
    let mut retained = vec![false; n];
    for &i in &order[n - keep..] {
        retained[i] = true;
    }
    Ok(PointCloud::from_finite(
        scan.iter()
            .zip(&retained)
            .filter_map(|(p, &r)| r.then_some(*p))
            .collect(),
    ))
}

/// Removes the inliers of the dominant plane found by RANSAC.
///
/// Each of `ransac_iters` rounds samples three distinct points; collinear
/// triples are skipped. The plane with the most points within
/// `ransac_inlier_dist` wins (first found on ties) and its inliers are removed.
pub fn remove_ground_ransac(scan: &PointCloud, cfg: &PreprocessConfig) -> Result<PointCloud> {
    if scan.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if scan.len() < 3 {
        return Err(Error::TooFewPoints {
            needed: 3,
            got: scan.len(),
        });
    }
    let pts = scan.points();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.ransac_seed);
    let mut best: Option<(usize, Vec3, Point3)> = None;

    for _ in 0..cfg.ransac_iters {
        let idx = rand::seq::index::sample(&mut rng, pts.len(), 3);
        let (a, b, c) = (pts[idx.index(0)], pts[idx.index(1)], pts[idx.index(2)]);
        let (ab, ac) = (b - a, c - a);
        let normal = ab.cross(&ac);
        let scale = ab.norm() * ac.norm();
        if !(normal.norm() > 1e-12 * scale) || scale == 0.0 {
            continue;
        }
        let normal = normal.normalize();
        let inliers = pts
            .iter()
            .filter(|p| normal.dot(&(*p - a)).abs() <= cfg.ransac_inlier_dist)
            .count();
        if best.as_ref().is_none_or(|(count, _, _)| inliers > *count) {
            best = Some((inliers, normal, a));
        }
    }

    let (_, normal, anchor) = best.ok_or_else(|| {
        Error::DegenerateInput("every sampled triple was collinear".to_owned())
    })?;
    Ok(PointCloud::from_finite(
        pts.iter()
            .filter(|p| normal.dot(&(*p - anchor)).abs() > cfg.ransac_inlier_dist)
            .copied()
            .collect(),
    ))
}

/// Voxel centroids plus how many raw points fell into each voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct Downsampled {
    pub cloud: PointCloud,
    pub counts: Vec<usize>,
}

/// Integer cell of `p` for voxels of edge `side`: `floor(p/side)` per axis.
pub fn voxel_index(p: &Point3, side: f64) -> [i64; 3] {
    [
        (p.x / side).floor() as i64,
        (p.y / side).floor() as i64,
        (p.z / side).floor() as i64,
    ]
}

/// Replaces the points of every occupied voxel with their arithmetic mean.
///
/// Output is ordered by cell index (lexicographic x, y, z), so it does not
/// depend on the input order beyond summation rounding.
pub fn voxel_downsample(scan: &PointCloud, side: f64) -> Result<Downsampled> {
    if scan.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if !(side > 0.0 && side.is_finite()) {
        return Err(Error::InvalidConfig(format!("voxel side {side} must be positive")));
    }
    let mut cells: HashMap<[i64; 3], (Vec3, usize)> = HashMap::new();
    for p in scan {
        let entry = cells.entry(voxel_index(p, side)).or_insert((Vec3::zeros(), 0));
        entry.0 += p.coords;
        entry.1 += 1;
    }
    let mut cells: Vec<_> = cells.into_iter().collect();
    cells.sort_unstable_by_key(|(key, _)| *key);

    let (points, counts) = cells
        .into_iter()
        .map(|(_, (sum, count))| (Point3::from(sum / count as f64), count))
        .unzip();
    Ok(Downsampled {
        cloud: PointCloud::from_finite(points),
        counts,
    })
}

/// Forces `cloud` to exactly `target` points.
///
/// Short clouds are padded by copying points cyclically from index 0. Long
/// clouds lose their least-occupied voxels first (ties: lower index first);
/// survivors keep their relative order.
pub fn normalize_count(cloud: &PointCloud, counts: &[usize], target: usize) -> Result<PointCloud> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if counts.len() != cloud.len() {
        return Err(Error::SizeMismatch {
            what: "occupancy counts",
            expected: cloud.len(),
            got: counts.len(),
        });
    }
    if target == 0 {
        return Err(Error::InvalidConfig("target count must be positive".to_owned()));
    }
    let n = cloud.len();
    if n <= target {
        return Ok(cloud.select(&(0..target).map(|i| i % n).collect::<Vec<_>>()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (counts[i], i));
    let mut kept = vec![true; n];
    for &i in &order[..n - target] {
        kept[i] = false;
    }
    let indices: Vec<usize> = (0..n).filter(|&i| kept[i]).collect();
    Ok(cloud.select(&indices))
}

/// Plane-fit normals over the `k` nearest neighbours (the point itself included).
///
/// Each normal is the eigenvector of the neighbourhood covariance with the
/// smallest eigenvalue, flipped so that `n·(origin − p) ≥ 0`.
pub fn estimate_normals(cloud: &PointCloud, k: usize) -> Result<NormalField> {
    if k < 3 || cloud.len() < k {
        return Err(Error::TooFewPoints {
            needed: k.max(3),
            got: cloud.len(),
        });
    }
    let tree = KdTree::build(cloud.points());
    let normals = cloud
        .points()
        .par_iter()
        .map(|p| {
            let neighbors = tree.knn(p, k);
            let mean = neighbors
                .iter()
                .fold(Vec3::zeros(), |acc, nb| acc + cloud[nb.index].coords)
                / k as f64;
            let cov = neighbors.iter().fold(Matrix3::zeros(), |acc, nb| {
                let d = cloud[nb.index].coords - mean;
                acc + d * d.transpose()
            }) / k as f64;
            orient_toward_origin(smallest_eigenvector(cov), p)
        })
        .collect();
    Ok(NormalField { normals })
}

fn smallest_eigenvector(cov: Matrix3<f64>) -> Vec3 {
    let eig = SymmetricEigen::new(cov);
    let i = eig.eigenvalues.imin();
    let v: Vec3 = eig.eigenvectors.column(i).into_owned();
    let norm = v.norm();
    if norm > 0.0 && norm.is_finite() {
        v / norm
    } else {
        Vec3::z()
    }
}

fn orient_toward_origin(n: Vec3, p: &Point3) -> Vec3 {
    if n.dot(&p.coords) > 0.0 {
        -n
    } else {
        n
    }
}

/// The full input pipeline: z-drop, voxelize, count-normalize, fit normals.
pub fn preprocess_scan(scan: &PointCloud, cfg: &PreprocessConfig) -> Result<(PointCloud, NormalField)> {
    cfg.validate()?;
    let above_ground = drop_ground_by_z(scan, cfg.ground_drop_fraction)?;
    let voxels = voxel_downsample(&above_ground, cfg.voxel_side)?;
    let cloud = normalize_count(&voxels.cloud, &voxels.counts, cfg.target_count)?;
    let normals = estimate_normals(&cloud, cfg.normal_neighbors)?;
    Ok((cloud, normals))
}

/// Cloud for the registration residual: RANSAC ground removal, then voxelization.
/// No count normalization is applied.
pub fn preprocess_loss_cloud(scan: &PointCloud, cfg: &PreprocessConfig) -> Result<(PointCloud, NormalField)> {
    cfg.validate()?;
    let no_ground = remove_ground_ransac(scan, cfg)?;
    if no_ground.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let voxels = voxel_downsample(&no_ground, cfg.voxel_side)?;
    let normals = estimate_normals(&voxels.cloud, cfg.normal_neighbors)?;
    Ok((voxels.cloud, normals))
}
