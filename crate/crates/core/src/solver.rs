//! Relative pose from a (refined source, generated target) correspondence set.
//!
//! The point-to-plane objective `Σ ((ΔR·s̃ + Δt − ŝ)·n̂)²` is linearized for
//! small angles (`ΔR ≈ I + [r]×`) into `min |A·x − b|²` with
//!
//! * `x = [r_x, r_y, r_z, t_x, t_y, t_z]`
//! * row `A_j = [s̃_j × n̂_j, n̂_j]`
//! * `b_j = n̂_j·(ŝ_j − s̃_j)`
//!
//! and solved with the SVD pseudo-inverse `x = V·Σ⁺·Uᵀ·b`, where singular
//! values below `sv_cutoff·σ_max` are treated as zero. The rotation is then
//! rebuilt exactly as `R_z·R_y·R_x` (no small-angle shortcut on this side).

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Vector6, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{euler_to_pose, pose_to_euler, EulerPose6, PointCloud, RigidPose, Vec3};
use crate::preprocess::NormalField;
use crate::spatial::KdTree;

/// Relative singular-value cutoff for the pseudo-inverse.
pub const DEFAULT_SV_CUTOFF: f64 = 1e-6;

const SVD_MAX_ITERATIONS: usize = 1000;
const JACOBI_MAX_SWEEPS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SolverVariant {
    /// Linearized point-to-plane least squares solved by SVD.
    #[default]
    #[serde(rename = "po2pl")]
    PointToPlane,
    /// Closed-form point-to-point alignment (Kabsch).
    #[serde(rename = "po2po")]
    PointToPoint,
}

/// The stacked linear system, with the per-row geometry it was built from.
#[derive(Debug, Clone)]
pub struct P2PlSystem {
    a: DMatrix<f64>,
    b: DVector<f64>,
    source: Vec<Vec3>,
    generated: Vec<Vec3>,
    normals: Vec<Vec3>,
}

impl P2PlSystem {
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn rows(&self) -> usize {
        self.b.len()
    }

    /// Mean `|n̂·(R·s̃ + t − ŝ)|` over all rows.
    pub fn residual(&self, pose: &RigidPose) -> f64 {
        mean_plane_distance(&self.source, &self.generated, &self.normals, pose)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub pose: RigidPose,
    pub x: EulerPose6,
    /// Mean absolute point-to-plane distance at the identity pose.
    pub residual_before: f64,
    /// Same, at the solved pose.
    pub residual_after: f64,
    pub rank: usize,
    pub smallest_kept_singular_value: f64,
}

fn mean_plane_distance(source: &[Vec3], generated: &[Vec3], normals: &[Vec3], pose: &RigidPose) -> f64 {
    if source.is_empty() {
        return 0.0;
    }
    let (r, t) = (pose.rotation(), pose.translation());
    let sum: f64 = source
        .iter()
        .zip(generated)
        .zip(normals)
        .map(|((s, g), n)| n.dot(&(r * s + t - g)).abs())
        .sum();
    sum / source.len() as f64
}

/// For each generated point, the normal of its nearest target point
/// (ties: lower target index).
pub fn match_normals(
    generated_target: &PointCloud,
    target: &PointCloud,
    target_normals: &NormalField,
) -> Result<NormalField> {
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
    let tree = KdTree::build(target.points());
    let indices: Vec<usize> = generated_target
        .iter()
        .map(|g| tree.nearest(g).expect("target is non-empty").index)
        .collect();
    Ok(target_normals.select(&indices))
}

/// Stacks one row per correspondence: `A_j = [s̃_j × n̂_j, n̂_j]`,
/// `b_j = Σ_c (n̂_j^c·ŝ_j^c − n̂_j^c·s̃_j^c)`.
pub fn build_system(
    refined_source: &PointCloud,
    generated_target: &PointCloud,
    matched_normals: &NormalField,
) -> Result<P2PlSystem> {
    let n = refined_source.len();
    if generated_target.len() != n {
        return Err(Error::SizeMismatch {
            what: "generated target",
            expected: n,
            got: generated_target.len(),
        });
    }
    if matched_normals.len() != n {
        return Err(Error::SizeMismatch {
            what: "matched normals",
            expected: n,
            got: matched_normals.len(),
        });
    }
    if n < 6 {
        return Err(Error::TooFewPoints { needed: 6, got: n });
    }

    let mut a = DMatrix::zeros(n, 6);
    let mut b = DVector::zeros(n);
    for j in 0..n {
        let s = refined_source[j].coords;
        let g = generated_target[j].coords;
        let nm = matched_normals[j];
        a[(j, 0)] = nm.z * s.y - nm.y * s.z;
        a[(j, 1)] = nm.x * s.z - nm.z * s.x;
        a[(j, 2)] = nm.y * s.x - nm.x * s.y;
        a[(j, 3)] = nm.x;
        a[(j, 4)] = nm.y;
        a[(j, 5)] = nm.z;
        b[j] = (nm.x * g.x - nm.x * s.x) + (nm.y * g.y - nm.y * s.y) + (nm.z * g.z - nm.z * s.z);
    }
    Ok(P2PlSystem {
        a,
        b,
        source: refined_source.iter().map(|p| p.coords).collect(),
        generated: generated_target.iter().map(|p| p.coords).collect(),
        normals: matched_normals.normals().to_vec(),
    })
}

/// Minimum-norm least-squares solution of the system via truncated SVD.
pub fn solve_svd(system: &P2PlSystem, sv_cutoff: f64) -> Result<SolveReport> {
    // A = Q·R with Q orthonormal (n×6), so A and the 6×6 factor R share
    // singular values and V, and Uᵀ·b = U_Rᵀ·(Qᵀ·b).
    let (q, r) = system.a.clone().qr().unpack();
    let qt_b = q.tr_mul(&system.b);
    let r = Matrix6::from_iterator(r.iter().copied());
    let svd = jacobi_svd(r)?;
    let sigma_max = svd.sigma.iter().copied().fold(0.0, f64::max);
    let threshold = sv_cutoff * sigma_max;

    let mut x = Vector6::zeros();
    let mut rank = 0;
    let mut smallest_kept = 0.0f64;
    if sigma_max > 0.0 {
        for i in 0..6 {
            let s = svd.sigma[i];
            if s < threshold || s <= 0.0 {
                continue;
            }
            rank += 1;
            smallest_kept = if rank == 1 { s } else { smallest_kept.min(s) };
            // u_i = w_i / σ_i
            let coeff = svd.w.column(i).dot(&qt_b) / (s * s);
            x += svd.v.column(i) * coeff;
        }
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::NumericalFailure("non-finite pose update".into()));
    }

    let x = EulerPose6::from_vector(&x);
    let pose = euler_to_pose(&x);
    Ok(SolveReport {
        pose,
        x,
        residual_before: system.residual(&RigidPose::identity()),
        residual_after: system.residual(&pose),
        rank,
        smallest_kept_singular_value: smallest_kept,
    })
}

/// `M·V = W` with `V` orthogonal and the columns of `W` mutually orthogonal,
/// so `σ_i = |w_i|` and `u_i = w_i/σ_i`.
struct JacobiSvd {
    w: Matrix6<f64>,
    v: Matrix6<f64>,
    sigma: [f64; 6],
}

/// One-sided (Hestenes) Jacobi SVD. Slower than bidiagonalization but it
/// keeps every singular value and vector to high relative accuracy, which
/// nalgebra's `SVD` does not on some well-conditioned inputs.
fn jacobi_svd(m: Matrix6<f64>) -> Result<JacobiSvd> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::NumericalFailure("non-finite point-to-plane system".into()));
    }
    let mut w = m;
    let mut v = Matrix6::identity();
    let tol = 6.0 * f64::EPSILON;
    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..5 {
            for q in p + 1..6 {
                let alpha = w.column(p).norm_squared();
                let beta = w.column(q).norm_squared();
                let gamma = w.column(p).dot(&w.column(q));
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for mat in [&mut w, &mut v] {
                    for k in 0..6 {
                        let (a, b) = (mat[(k, p)], mat[(k, q)]);
                        mat[(k, p)] = c * a - s * b;
                        mat[(k, q)] = s * a + c * b;
                    }
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NumericalFailure("Jacobi SVD did not converge".into()));
    }
    let sigma = std::array::from_fn(|i| w.column(i).norm());
    if !sigma.iter().all(|s: &f64| s.is_finite()) {
        return Err(Error::NumericalFailure("non-finite singular values".into()));
    }
    Ok(JacobiSvd { w, v, sigma })
}

/// Least-squares rigid alignment `target ≈ R·source + t` (Kabsch with
/// reflection guard). Also returns the rank of the cross-covariance at `sv_cutoff`
/// and its smallest kept singular value.
pub fn kabsch(source: &[Vec3], target: &[Vec3], sv_cutoff: f64) -> Result<(RigidPose, usize, f64)> {
    if source.len() != target.len() {
        return Err(Error::SizeMismatch {
            what: "point-to-point target",
            expected: source.len(),
            got: target.len(),
        });
    }
    if source.len() < 3 {
        return Err(Error::TooFewPoints {
            needed: 3,
            got: source.len(),
        });
    }
    let n = source.len() as f64;
    let cs = source.iter().sum::<Vec3>() / n;
    let ct = target.iter().sum::<Vec3>() / n;
    let h = source
        .iter()
        .zip(target)
        .fold(Matrix3::zeros(), |acc, (s, t)| acc + (s - cs) * (t - ct).transpose());
    let svd = SVD::try_new(h, true, true, f64::EPSILON, SVD_MAX_ITERATIONS)
        .ok_or_else(|| Error::NumericalFailure("SVD of the cross-covariance did not converge".into()))?;
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::NumericalFailure("SVD returned no singular vectors".into())),
    };
    let v = v_t.transpose();
    let mut fix = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    let rotation = v * fix * u.transpose();
    let translation = ct - rotation * cs;

    let sigma = svd.singular_values;
    let threshold = sv_cutoff * sigma.max();
    let kept: Vec<f64> = sigma.iter().copied().filter(|&s| s > 0.0 && s >= threshold).collect();
    let smallest = kept.iter().copied().fold(f64::INFINITY, f64::min);
    let pose = RigidPose::from_approximate(rotation, translation, 1e-6)?;
    Ok((pose, kept.len(), if kept.is_empty() { 0.0 } else { smallest }))
}

/// Normal matching, system build and solve for one correspondence set.
pub fn solve_pair(
    refined_source: &PointCloud,
    generated_target: &PointCloud,
    target: &PointCloud,
    target_normals: &NormalField,
    variant: SolverVariant,
    sv_cutoff: f64,
) -> Result<SolveReport> {
    let normals = match_normals(generated_target, target, target_normals)?;
    let system = build_system(refined_source, generated_target, &normals)?;
    match variant {
        SolverVariant::PointToPlane => solve_svd(&system, sv_cutoff),
        SolverVariant::PointToPoint => {
            let (pose, rank, smallest) = kabsch(&system.source, &system.generated, sv_cutoff)?;
            Ok(SolveReport {
                x: pose_to_euler(&pose)?,
                residual_before: system.residual(&RigidPose::identity()),
                residual_after: system.residual(&pose),
                pose,
                rank,
                smallest_kept_singular_value: smallest,
            })
        }
    }
}
