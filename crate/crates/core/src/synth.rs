//! Synthetic street-like scenes and scans with known poses.
//!
//! A scene is a ground plane plus building facades, parked cars, poles, trees
//! and sloped embankments laid out around a planned sensor path. Each scan
//! samples visible surfaces independently (area-weighted, within a range of
//! the sensor) and adds Gaussian range noise, so consecutive scans never share
//! exact points.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{euler_to_pose, rot_z, EulerPose6, Point3, PointCloud, RigidPose, Vec3};

/// Sensor mounting height above the ground, meters.
pub const SENSOR_HEIGHT: f64 = 1.73;

/// Within this range (meters) surfaces are sampled at full density.
const DENSITY_REFERENCE_RANGE: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MotionProfile {
    /// Constant velocity along +x.
    #[default]
    Straight,
    /// Straight stretches alternating with left and right turns.
    Turns,
}

impl MotionProfile {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "straight" => Some(Self::Straight),
            "turns" => Some(Self::Turns),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Straight => "straight",
            Self::Turns => "turns",
        }
    }

    /// Yaw change (radians) applied before step `k` (k ≥ 1).
    fn yaw_step(self, k: usize) -> f64 {
        match self {
            Self::Straight => 0.0,
            // 24-frame cycle: 4 straight, 8 left at 2°, 4 straight, 8 right at 2°.
            Self::Turns => match k % 24 {
                0..=3 => 0.0,
                4..=11 => 2f64.to_radians(),
                12..=15 => 0.0,
                _ => -2f64.to_radians(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub points_per_scan: usize,
    /// Sensor range, meters.
    pub range: f64,
    /// Standard deviation of the per-point noise, meters.
    pub noise_sigma: f64,
    /// Fraction of each scan drawn from the ground plane.
    pub ground_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            points_per_scan: 20_000,
            range: 40.0,
            noise_sigma: 0.005,
            ground_fraction: 0.4,
        }
    }
}

/// A flat parallelogram `origin + a·u + b·v`, `a, b ∈ [0, 1]`.
#[derive(Debug, Clone, Copy)]
struct Patch {
    origin: Vec3,
    u: Vec3,
    v: Vec3,
}

#[derive(Debug, Clone, Copy)]
enum Surface {
    Patch(Patch),
    /// Upright cylinder side surface.
    Cylinder { base: Vec3, radius: f64, height: f64 },
    Sphere { center: Vec3, radius: f64 },
}

impl Surface {
    fn area(&self) -> f64 {
        match self {
            Surface::Patch(p) => p.u.cross(&p.v).norm(),
            Surface::Cylinder { radius, height, .. } => 2.0 * PI * radius * height,
            Surface::Sphere { radius, .. } => 4.0 * PI * radius * radius,
        }
    }

    fn center_and_extent(&self) -> (Vec3, f64) {
        match self {
            Surface::Patch(p) => (p.origin + 0.5 * (p.u + p.v), 0.5 * (p.u.norm() + p.v.norm())),
            Surface::Cylinder { base, height, radius } => (base + Vec3::new(0.0, 0.0, height / 2.0), height / 2.0 + radius),
            Surface::Sphere { center, radius } => (*center, *radius),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec3 {
        match self {
            Surface::Patch(p) => p.origin + rng.random::<f64>() * p.u + rng.random::<f64>() * p.v,
            Surface::Cylinder { base, radius, height } => {
                let theta = rng.random_range(0.0..2.0 * PI);
                base + Vec3::new(radius * theta.cos(), radius * theta.sin(), rng.random_range(0.0..*height))
            }
            Surface::Sphere { center, radius } => {
                let z: f64 = rng.random_range(-1.0..1.0);
                let theta = rng.random_range(0.0..2.0 * PI);
                let r = (1.0 - z * z).sqrt();
                center + *radius * Vec3::new(r * theta.cos(), r * theta.sin(), z)
            }
        }
    }
}

/// Static world geometry, world frame with the ground at z = 0.
#[derive(Debug, Clone)]
pub struct Scene {
    surfaces: Vec<Surface>,
}

/// Ground-truth `world ← sensor` poses for a profile, with `world` on the
/// ground below the first sensor position.
fn sensor_path(profile: MotionProfile, frames: usize, speed: f64) -> Vec<RigidPose> {
    let mut yaw = 0.0f64;
    let mut pos = Vec3::new(0.0, 0.0, SENSOR_HEIGHT);
    let mut out = Vec::with_capacity(frames);
    for k in 0..frames {
        if k > 0 {
            yaw += profile.yaw_step(k);
            pos += rot_z(yaw) * Vec3::new(speed, 0.0, 0.0);
        }
        out.push(RigidPose::new(rot_z(yaw), pos).expect("yaw rotation is orthonormal"));
    }
    out
}

/// `sensor_0 ← sensor_k` poses for `frames` frames moving `speed` m/frame.
pub fn ground_truth_trajectory(profile: MotionProfile, frames: usize, speed: f64) -> Vec<RigidPose> {
    let path = sensor_path(profile, frames, speed);
    let to_first = path[0].inverse();
    path.iter().map(|p| to_first.compose(p)).collect()
}

fn footprint_box(center: Vec3, half_len: f64, half_wid: f64, yaw: f64, height: f64, with_roof: bool) -> Vec<Surface> {
    let r = rot_z(yaw);
    let corners: Vec<Vec3> = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]
        .iter()
        .map(|(a, b)| center + r * Vec3::new(a * half_len, b * half_wid, 0.0))
        .collect();
    let up = Vec3::new(0.0, 0.0, height);
    let mut out: Vec<Surface> = (0..4)
        .map(|i| {
            Surface::Patch(Patch {
                origin: corners[i],
                u: corners[(i + 1) % 4] - corners[i],
                v: up,
            })
        })
        .collect();
    if with_roof {
        out.push(Surface::Patch(Patch {
            origin: corners[0] + up,
            u: corners[1] - corners[0],
            v: corners[3] - corners[0],
        }));
    }
    out
}

impl Scene {
    /// Lays out a scene around `path` (`world ← sensor` poses, world ground at z = 0).
    pub fn generate(seed: u64, path: &[RigidPose], range: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5CE4E);
        let xy: Vec<(f64, f64)> = path.iter().map(|p| (p.translation().x, p.translation().y)).collect();
        let (mut lo_x, mut lo_y, mut hi_x, mut hi_y) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &(x, y) in &xy {
            lo_x = lo_x.min(x);
            lo_y = lo_y.min(y);
            hi_x = hi_x.max(x);
            hi_y = hi_y.max(y);
        }
        let margin = range;
        let (lo_x, lo_y, hi_x, hi_y) = (lo_x - margin, lo_y - margin, hi_x + margin, hi_y + margin);
        let area = (hi_x - lo_x) * (hi_y - lo_y);
        let clearance = |x: f64, y: f64| {
            xy.iter()
                .map(|&(px, py)| ((px - x).powi(2) + (py - y).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min)
        };
        // Objects stay fully within sensor range of the nearest path point.
        let reach = |extent: f64, max_clear: f64| f64::max(max_clear.min(range - 1.0 - extent), 0.0);
        let place = |rng: &mut ChaCha8Rng, min_clear: f64, max_clear: f64| loop {
            let max_clear = max_clear.max(min_clear);
            let (x, y) = (rng.random_range(lo_x..hi_x), rng.random_range(lo_y..hi_y));
            let c = clearance(x, y);
            if c >= min_clear && c <= max_clear {
                return Vec3::new(x, y, 0.0);
            }
        };

        let mut surfaces = Vec::new();
        let per_km2 = |density: f64| ((area / 1e6) * density).ceil() as usize;

        // Building facades.
        for _ in 0..per_km2(900.0) {
            let (hl, hw): (f64, f64) = (rng.random_range(3.0..10.0), rng.random_range(3.0..8.0));
            let c = place(&mut rng, 8.0 + hl.max(hw), reach(hl.hypot(hw), f64::INFINITY));
            let (yaw, h) = (rng.random_range(0.0..PI), rng.random_range(4.0..12.0));
            surfaces.extend(footprint_box(c, hl, hw, yaw, h, false));
        }
        // Parked cars.
        for _ in 0..per_km2(1400.0) {
            let c = place(&mut rng, 3.5, reach(2.3, 9.0));
            surfaces.extend(footprint_box(c, 2.1, 0.9, rng.random_range(0.0..PI), 1.5, true));
        }
        // Poles.
        for _ in 0..per_km2(1800.0) {
            let base = place(&mut rng, 2.5, reach(0.2, 14.0));
            surfaces.push(Surface::Cylinder { base, radius: 0.15, height: rng.random_range(3.0..7.0) });
        }
        // Trees: trunk plus spherical canopy.
        for _ in 0..per_km2(1000.0) {
            let radius = rng.random_range(1.2..2.8);
            let base = place(&mut rng, 4.0, reach(radius, 20.0));
            let trunk = rng.random_range(2.0..3.5);
            surfaces.push(Surface::Cylinder { base, radius: 0.25, height: trunk });
            surfaces.push(Surface::Sphere { center: base + Vec3::new(0.0, 0.0, trunk + radius * 0.8), radius });
        }
        // Sloped embankments.
        for _ in 0..per_km2(500.0) {
            let yaw = rng.random_range(0.0..2.0 * PI);
            let slope = rng.random_range(15f64..40.0).to_radians();
            let (len, depth): (f64, f64) = (rng.random_range(6.0..16.0), rng.random_range(3.0..6.0));
            let c = place(&mut rng, 6.0, reach(len + depth, 25.0));
            let along = rot_z(yaw) * Vec3::new(len, 0.0, 0.0);
            let up_slope = rot_z(yaw) * Vec3::new(0.0, depth * slope.cos(), depth * slope.sin());
            surfaces.push(Surface::Patch(Patch { origin: c, u: along, v: up_slope }));
        }
        Scene { surfaces }
    }

    /// Samples a scan from `world_from_sensor`; points are returned in the sensor frame.
    pub fn scan(&self, world_from_sensor: &RigidPose, cfg: &SynthConfig, scan_seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(scan_seed);
        let noise = Normal::new(0.0, cfg.noise_sigma.max(0.0)).expect("finite sigma");
        let sensor = world_from_sensor.translation();
        let visible: Vec<&Surface> = self
            .surfaces
            .iter()
            .filter(|s| {
                let (c, ext) = s.center_and_extent();
                ((c.x - sensor.x).powi(2) + (c.y - sensor.y).powi(2)).sqrt() - ext < cfg.range
            })
            .collect();
        let cumulative: Vec<f64> = visible
            .iter()
            .scan(0.0, |acc, s| {
                *acc += s.area();
                Some(*acc)
            })
            .collect();
        let total = cumulative.last().copied().unwrap_or(0.0);

        let to_sensor = world_from_sensor.inverse();
        let n_ground = if total > 0.0 {
            (cfg.points_per_scan as f64 * cfg.ground_fraction).round() as usize
        } else {
            cfg.points_per_scan
        };
        let mut points = Vec::with_capacity(cfg.points_per_scan);
        let range2 = cfg.range * cfg.range;

        for _ in 0..n_ground {
            let r = rng.random_range(2.0..cfg.range);
            let theta = rng.random_range(0.0..2.0 * PI);
            let p = Vec3::new(sensor.x + r * theta.cos(), sensor.y + r * theta.sin(), 0.0);
            points.push(self.noisy(&to_sensor, p, &noise, &mut rng));
        }
        let mut attempts = 0usize;
        while points.len() < cfg.points_per_scan && attempts < 200 * cfg.points_per_scan {
            attempts += 1;
            let pick = rng.random_range(0.0..total);
            let i = cumulative.partition_point(|&c| c <= pick).min(visible.len() - 1);
            let p = visible[i].sample(&mut rng);
            let d2 = (p - sensor).norm_squared();
            if d2 > range2 || d2 < 1.0 {
                continue;
            }
            // Beam spacing grows with range, so point density falls off as 1/r².
            if rng.random::<f64>() * d2 > DENSITY_REFERENCE_RANGE * DENSITY_REFERENCE_RANGE {
                continue;
            }
            points.push(self.noisy(&to_sensor, p, &noise, &mut rng));
        }
        PointCloud::new(points).expect("synthetic points are finite")
    }

    fn noisy(&self, to_sensor: &RigidPose, world: Vec3, noise: &Normal<f64>, rng: &mut ChaCha8Rng) -> Point3 {
        let local = to_sensor.transform_point(&Point3::from(world));
        // Noise along the beam direction.
        let dir = local.coords.normalize();
        Point3::from(local.coords + dir * noise.sample(rng))
    }
}

/// A synthetic sequence: scans in the sensor frame and `sensor_0 ← sensor_k` poses.
#[derive(Debug, Clone)]
pub struct SyntheticSequence {
    pub scans: Vec<PointCloud>,
    pub ground_truth: Vec<RigidPose>,
}

pub fn generate_sequence(cfg: &SynthConfig, profile: MotionProfile, frames: usize, speed: f64) -> Result<SyntheticSequence> {
    if frames < 2 {
        return Err(Error::InvalidConfig("a sequence needs at least 2 frames".into()));
    }
    let path = sensor_path(profile, frames, speed);
    let scene = Scene::generate(cfg.seed, &path, cfg.range);
    let scans = path
        .iter()
        .enumerate()
        .map(|(k, pose)| scene.scan(pose, cfg, scan_seed(cfg.seed, k)))
        .collect();
    let to_first = path[0].inverse();
    Ok(SyntheticSequence {
        scans,
        ground_truth: path.iter().map(|p| to_first.compose(p)).collect(),
    })
}

fn scan_seed(seed: u64, frame: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(frame as u64 + 1)
}

/// Two scans related by a known `target ← source` pose.
#[derive(Debug, Clone)]
pub struct SyntheticPair {
    pub source: PointCloud,
    pub target: PointCloud,
    pub true_pose: RigidPose,
}

/// Draws a vehicle-like relative motion and scans a fresh scene from both
/// sensor positions.
///
/// Yaw is uniform in `±max_rotation` and roll and pitch are uniform in a
/// tenth of that range; the rotation is then clamped to an angle of at most
/// `max_rotation` (radians). The translation points in a uniformly random
/// direction with norm at most `max_translation`.
pub fn generate_pair(seed: u64, max_rotation: f64, max_translation: f64, cfg: &SynthConfig) -> SyntheticPair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0xA11CE));
    let tilt = max_rotation / 10.0;
    let euler = nalgebra::Rotation3::from_euler_angles(
        rng.random_range(-tilt..=tilt),
        rng.random_range(-tilt..=tilt),
        rng.random_range(-max_rotation..=max_rotation),
    );
    let rotation = match euler.axis_angle() {
        Some((axis, angle)) if angle > max_rotation => nalgebra::Rotation3::from_axis_angle(&axis, max_rotation),
        _ => euler,
    };
    let dir = loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            break v / n;
        }
    };
    let translation = dir * rng.random_range(0.0..=max_translation);
    let true_pose = RigidPose::from_approximate(rotation.into_inner(), translation, 1e-9).expect("a rotation matrix");

    let world_from_source = euler_to_pose(&EulerPose6::new(0.0, 0.0, rng.random_range(0.0..2.0 * PI), 0.0, 0.0, SENSOR_HEIGHT));
    // target ← source = (world ← target)⁻¹ ∘ (world ← source)
    let world_from_target = world_from_source.compose(&true_pose.inverse());
    let cfg = SynthConfig { seed, ..cfg.clone() };
    let scene = Scene::generate(seed, &[world_from_source, world_from_target], cfg.range);
    SyntheticPair {
        source: scene.scan(&world_from_source, &cfg, scan_seed(seed, 0)),
        target: scene.scan(&world_from_target, &cfg, scan_seed(seed, 1)),
        true_pose,
    }
}
