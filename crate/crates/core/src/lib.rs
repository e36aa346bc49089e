//! Coarse-to-fine LiDAR odometry built on linearized point-to-plane ICP.
//!
//! Each scan is cleaned of ground points, voxelized, resampled to a fixed
//! count and turned into a four-level farthest-point-sampled pyramid with
//! per-point normals. Registration walks the pyramid from coarse to fine:
//! every level warps the source by the pose estimated so far, pairs it with a
//! generated target from a scene-flow estimate, and solves a six-parameter
//! linear least-squares problem with a truncated SVD.

pub mod error;
pub mod flow;
pub mod geometry;
pub mod kitti;
pub mod odometry;
pub mod preprocess;
pub mod pyramid;
pub mod solver;
pub mod spatial;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{EulerPose6, Point3, PointCloud, RigidPose, Vec3};
