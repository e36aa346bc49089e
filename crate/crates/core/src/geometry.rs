//! Spatial primitives shared by every stage of the pipeline.
//!
//! # Frame convention
//!
//! A [`RigidPose`] maps points between frames as `p' = R·p + t`.
//!
//! * The relative pose produced by registering scan `k` (source) against scan
//!   `k+1` (target) maps frame-`k` points onto their frame-`k+1` positions,
//!   i.e. it is `sensor_{k+1} ← sensor_k`.
//! * Trajectory poses are `world ← sensor_k`, with `world = sensor_0`.
//!
//! Accumulating a trajectory therefore composes with the *inverse* of each
//! relative pose: `world←sensor_{k+1} = (world←sensor_k) · (sensor_{k+1}←sensor_k)⁻¹`,
//! which is what [`RigidPose::accumulate`] does.

use nalgebra::{Matrix3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = nalgebra::Point3<f64>;
pub type Vec3 = Vector3<f64>;

/// Tolerance on `RᵀR = I` and `det R = 1`.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Threshold on `|R[2][0]|` beyond which the Euler decomposition is refused.
pub const GIMBAL_LOCK_THRESHOLD: f64 = 1.0 - 1e-9;

/// Ordered 3D points in a sensor frame, in meters.
///
/// Index identity is meaningful: normals and flow vectors are aligned 1:1 by
/// index, so the order is never changed implicitly.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Point3>,
}

impl PointCloud {
    /// Builds a cloud, rejecting any point with a NaN or infinite coordinate.
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if let Some(index) = points.iter().position(|p| !is_finite(p)) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { points })
    }

    /// Builds a cloud from points already known to be finite.
    pub(crate) fn from_finite(points: Vec<Point3>) -> Self {
        debug_assert!(points.iter().all(is_finite));
        Self { points }
    }

    pub fn from_xyz(coords: &[[f64; 3]]) -> Result<Self> {
        Self::new(coords.iter().map(|c| Point3::new(c[0], c[1], c[2])).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Point3> {
        self.points.iter()
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    /// Gathers the points at `indices`, in that order. Panics on an out-of-range index.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        Self::from_finite(indices.iter().map(|&i| self.points[i]).collect())
    }

    /// Translates every point by `offset`.
    pub fn translated(&self, offset: &Vec3) -> PointCloud {
        Self::from_finite(self.points.iter().map(|p| p + offset).collect())
    }
}

impl std::ops::Index<usize> for PointCloud {
    type Output = Point3;

    fn index(&self, index: usize) -> &Point3 {
        &self.points[index]
    }
}

impl<'a> IntoIterator for &'a PointCloud {
    type Item = &'a Point3;
    type IntoIter = std::slice::Iter<'a, Point3>;

    fn into_iter(self) -> Self::IntoIter {
        self.points.iter()
    }
}

fn is_finite(p: &Point3) -> bool {
    p.x.is_finite() && p.y.is_finite() && p.z.is_finite()
}

/// A rigid transform in SE(3): rotation matrix plus translation in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidPose {
    rotation: Matrix3<f64>,
    translation: Vec3,
}

impl Default for RigidPose {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidPose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Builds a pose, checking that `rotation` is orthonormal with det +1
    /// within [`ROTATION_TOLERANCE`].
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::NotARotation { error: f64::NAN });
        }
        let error = rotation_error(&rotation);
        if error > ROTATION_TOLERANCE {
            return Err(Error::NotARotation { error });
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Builds a pose from an approximately orthonormal matrix, projecting it
    /// onto the nearest rotation. Fails if `rotation` is further than
    /// `tolerance` from a rotation or is not finite.
    pub fn from_approximate(rotation: Matrix3<f64>, translation: Vec3, tolerance: f64) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::NotARotation { error: f64::NAN });
        }
        let error = rotation_error(&rotation);
        if error > tolerance {
            return Err(Error::NotARotation { error });
        }
        let rotation = if error > ROTATION_TOLERANCE {
            nearest_rotation(&rotation)
        } else {
            rotation
        };
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn transform_point(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    /// Applies `R·p + t` to every point, preserving order.
    pub fn transform_cloud(&self, cloud: &PointCloud) -> PointCloud {
        PointCloud::from_finite(cloud.iter().map(|p| self.transform_point(p)).collect())
    }

    /// `self ∘ inner`: the result applies `inner` first, then `self`.
    ///
    /// `R = R_self·R_inner`, `t = R_self·t_inner + t_self`. The product
    /// rotation is re-projected onto SO(3) if rounding has pushed it past
    /// [`ROTATION_TOLERANCE`].
    pub fn compose(&self, inner: &RigidPose) -> RigidPose {
        let mut rotation = self.rotation * inner.rotation;
        if rotation_error(&rotation) > ROTATION_TOLERANCE {
            rotation = nearest_rotation(&rotation);
        }
        RigidPose {
            rotation,
            translation: self.rotation * inner.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidPose {
        let rt = self.rotation.transpose();
        RigidPose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Advances a `world ← sensor_k` pose by the relative pose
    /// `sensor_{k+1} ← sensor_k` estimated for the pair (k, k+1).
    pub fn accumulate(&self, relative: &RigidPose) -> RigidPose {
        self.compose(&relative.inverse())
    }

    /// Rotation angle in radians, from the trace with the acos argument clamped to [-1, 1].
    pub fn rotation_angle(&self) -> f64 {
        let cos = 0.5 * (self.rotation.trace() - 1.0);
        cos.clamp(-1.0, 1.0).acos()
    }

    /// Rotation angle and translation norm of `self⁻¹ ∘ other`.
    pub fn error_to(&self, other: &RigidPose) -> (f64, f64) {
        let delta = self.inverse().compose(other);
        (delta.rotation_angle(), delta.translation.norm())
    }

    /// Row-major 3×4 `[R | t]`.
    pub fn to_row_major_3x4(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
        ]
    }

    /// Worst deviation of the rotation block from orthonormality / unit determinant.
    pub fn orthonormality_error(&self) -> f64 {
        rotation_error(&self.rotation)
    }
}

/// `max(|RᵀR − I|_∞, |det R − 1|)`.
pub fn rotation_error(rotation: &Matrix3<f64>) -> f64 {
    let gram = rotation.transpose() * rotation - Matrix3::identity();
    let ortho = gram.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    ortho.max((rotation.determinant() - 1.0).abs())
}

/// Projects a matrix onto the closest rotation in the Frobenius sense.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut fix = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    u * fix * v_t
}

pub fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// The six-parameter pose `[r_x, r_y, r_z, t_x, t_y, t_z]` (radians, meters).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EulerPose6 {
    pub r_x: f64,
    pub r_y: f64,
    pub r_z: f64,
    pub t_x: f64,
    pub t_y: f64,
    pub t_z: f64,
}

impl EulerPose6 {
    pub fn new(r_x: f64, r_y: f64, r_z: f64, t_x: f64, t_y: f64, t_z: f64) -> Self {
        Self { r_x, r_y, r_z, t_x, t_y, t_z }
    }

    pub fn from_vector(x: &Vector6<f64>) -> Self {
        Self::new(x[0], x[1], x[2], x[3], x[4], x[5])
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(self.r_x, self.r_y, self.r_z, self.t_x, self.t_y, self.t_z)
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }

    pub fn rotation_vector(&self) -> Vec3 {
        Vec3::new(self.r_x, self.r_y, self.r_z)
    }

    pub fn translation_vector(&self) -> Vec3 {
        Vec3::new(self.t_x, self.t_y, self.t_z)
    }

    /// Euclidean norm of the full six-vector.
    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }
}

pub fn rot_x(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// `R = R_z(r_z)·R_y(r_y)·R_x(r_x)`, `t = (t_x, t_y, t_z)`. This is the only
/// Euler convention used anywhere in the crate.
pub fn euler_to_pose(e: &EulerPose6) -> RigidPose {
    RigidPose {
        rotation: rot_z(e.r_z) * rot_y(e.r_y) * rot_x(e.r_x),
        translation: e.translation_vector(),
    }
}

/// Inverse of [`euler_to_pose`] for `|r_y| < π/2`.
pub fn pose_to_euler(pose: &RigidPose) -> Result<EulerPose6> {
    let r = &pose.rotation;
    let r20 = r[(2, 0)];
    if r20.abs() > GIMBAL_LOCK_THRESHOLD {
        return Err(Error::GimbalLock { r20 });
    }
    let t = &pose.translation;
    Ok(EulerPose6 {
        r_x: r[(2, 1)].atan2(r[(2, 2)]),
        r_y: (-r20).asin(),
        r_z: r[(1, 0)].atan2(r[(0, 0)]),
        t_x: t.x,
        t_y: t.y,
        t_z: t.z,
    })
}
