//! Multi-level point pyramid built by farthest point sampling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::preprocess::NormalField;
use crate::spatial::dist2;

pub const LEVELS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PyramidConfig {
    /// Point counts per level, finest first. Must be strictly decreasing.
    pub level_counts: [usize; LEVELS],
}

impl Default for PyramidConfig {
    fn default() -> Self {
        Self {
            level_counts: [8192, 2048, 512, 256],
        }
    }
}

impl PyramidConfig {
    pub fn validate(&self) -> Result<()> {
        let c = &self.level_counts;
        if c[LEVELS - 1] == 0 || c.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::InvalidConfig(format!(
                "level counts {c:?} must be positive and strictly decreasing"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PyramidLevel {
    pub index: usize,
    pub points: PointCloud,
    pub normals: NormalField,
    /// Index of each point in the next finer level; `None` at level 0.
    pub parent_indices: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pyramid {
    levels: Vec<PyramidLevel>,
}

impl Pyramid {
    pub fn levels(&self) -> &[PyramidLevel] {
        &self.levels
    }

    pub fn level(&self, i: usize) -> &PyramidLevel {
        &self.levels[i]
    }

    pub fn counts(&self) -> [usize; LEVELS] {
        std::array::from_fn(|i| self.levels[i].points.len())
    }

    /// Indices of level `i` expressed directly in level-0 indices.
    pub fn indices_in_level0(&self, i: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.levels[i].points.len()).collect();
        for level in self.levels[1..=i].iter().rev() {
            let parents = level.parent_indices.as_ref().expect("levels above 0 have parents");
            idx = idx.into_iter().map(|j| parents[j]).collect();
        }
        idx
    }
}

/// Greedy maximin subset of `m` indices.
///
/// Starts from index 0; each next pick is the unselected point with the
/// largest distance to its closest selected point, lower index on ties.
pub fn farthest_point_sample(cloud: &PointCloud, m: usize) -> Result<Vec<usize>> {
    let n = cloud.len();
    if m == 0 || m > n {
        return Err(Error::BadCount {
            requested: m,
            available: n,
        });
    }
    let pts = cloud.points();
    // Squared distance to the selected set; -1 marks selected points.
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut picked = Vec::with_capacity(m);
    let mut current = 0usize;
    for _ in 0..m {
        picked.push(current);
        min_d2[current] = -1.0;
        let anchor = pts[current];
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for (j, d) in min_d2.iter_mut().enumerate() {
            if *d < 0.0 {
                continue;
            }
            let cand = dist2(&pts[j], &anchor);
            if cand < *d {
                *d = cand;
            }
            if *d > best.0 {
                best = (*d, j);
            }
        }
        current = best.1;
    }
    Ok(picked)
}

/// Level 0 is the input; level i+1 is FPS of level i, carrying normals by index.
pub fn build_pyramid(cloud: &PointCloud, normals: &NormalField, cfg: &PyramidConfig) -> Result<Pyramid> {
    cfg.validate()?;
    let c0 = cfg.level_counts[0];
    if cloud.len() != c0 {
        return Err(Error::SizeMismatch {
            what: "level-0 cloud",
            expected: c0,
            got: cloud.len(),
        });
    }
    if normals.len() != cloud.len() {
        return Err(Error::SizeMismatch {
            what: "level-0 normals",
            expected: cloud.len(),
            got: normals.len(),
        });
    }
    let mut levels = vec![PyramidLevel {
        index: 0,
        points: cloud.clone(),
        normals: normals.clone(),
        parent_indices: None,
    }];
    for i in 1..LEVELS {
        let parent = &levels[i - 1];
        let picks = farthest_point_sample(&parent.points, cfg.level_counts[i])?;
        let level = PyramidLevel {
            index: i,
            points: parent.points.select(&picks),
            normals: parent.normals.select(&picks),
            parent_indices: Some(picks),
        };
        levels.push(level);
    }
    Ok(Pyramid { levels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Point3, Vec3};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Quadratic reference: recompute every min-distance from scratch each step.
    fn fps_reference(pts: &[Point3], m: usize) -> Vec<usize> {
        let d = |a: &Point3, b: &Point3| {
            let v = a - b;
            (v.x * v.x + v.y * v.y + v.z * v.z).sqrt()
        };
        let mut sel = vec![0usize];
        while sel.len() < m {
            let mut best: Option<(f64, usize)> = None;
            for j in 0..pts.len() {
                if sel.contains(&j) {
                    continue;
                }
                let md = sel.iter().map(|&s| d(&pts[j], &pts[s])).fold(f64::INFINITY, f64::min);
                if best.is_none_or(|(bd, _)| md > bd) {
                    best = Some((md, j));
                }
            }
            sel.push(best.unwrap().1);
        }
        sel
    }

    fn random_cloud(seed: u64, n: usize) -> PointCloud {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(
            (0..n)
                .map(|_| Point3::new(r.random_range(-5.0..5.0), r.random_range(-5.0..5.0), r.random_range(-1.0..1.0)))
                .collect(),
        )
        .unwrap()
    }

    fn up_normals(n: usize) -> NormalField {
        NormalField::new(vec![Vec3::z(); n]).unwrap()
    }

    #[test]
    fn collinear_pair_picks_endpoints() {
        let cloud = PointCloud::new((0..10).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect()).unwrap();
        assert_eq!(farthest_point_sample(&cloud, 2).unwrap(), vec![0, 9]);
        assert_eq!(farthest_point_sample(&cloud, 3).unwrap(), vec![0, 9, 4]);
    }

    #[test]
    fn full_sample_is_a_permutation() {
        let cloud = random_cloud(1, 40);
        let mut picks = farthest_point_sample(&cloud, 40).unwrap();
        picks.sort_unstable();
        assert_eq!(picks, (0..40).collect::<Vec<_>>());
    }

    #[test]
    fn duplicates_are_still_distinct_picks() {
        let cloud = PointCloud::from_xyz(&[[0.0; 3], [0.0; 3], [1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(farthest_point_sample(&cloud, 4).unwrap(), vec![0, 2, 1, 3]);
    }

    #[test]
    fn bad_counts() {
        let cloud = random_cloud(2, 5);
        assert!(matches!(farthest_point_sample(&cloud, 0), Err(Error::BadCount { .. })));
        assert!(matches!(farthest_point_sample(&cloud, 6), Err(Error::BadCount { .. })));
    }

    #[test]
    fn config_validation() {
        PyramidConfig::default().validate().unwrap();
        assert!(PyramidConfig { level_counts: [8, 8, 4, 2] }.validate().is_err());
        assert!(PyramidConfig { level_counts: [8, 4, 2, 0] }.validate().is_err());
    }

    #[test]
    fn pyramid_levels_are_nested_subsets() {
        let cfg = PyramidConfig { level_counts: [512, 128, 32, 16] };
        let cloud = random_cloud(3, 512);
        let mut normals: Vec<Vec3> = Vec::new();
        let mut r = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..512 {
            normals.push(Vec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), 1.0).normalize());
        }
        let normals = NormalField::new(normals).unwrap();
        let pyr = build_pyramid(&cloud, &normals, &cfg).unwrap();
        assert_eq!(pyr.counts(), [512, 128, 32, 16]);
        assert!(pyr.level(0).parent_indices.is_none());
        for i in 1..LEVELS {
            let (lvl, parent) = (pyr.level(i), pyr.level(i - 1));
            let idx = lvl.parent_indices.as_ref().unwrap();
            for (j, &p) in idx.iter().enumerate() {
                assert_eq!(lvl.points[j], parent.points[p]);
                assert_eq!(lvl.normals[j], parent.normals[p]);
            }
            for (j, &k0) in pyr.indices_in_level0(i).iter().enumerate() {
                assert_eq!(lvl.points[j], cloud[k0]);
            }
        }
        assert_eq!(build_pyramid(&cloud, &normals, &cfg).unwrap(), pyr);
    }

    #[test]
    fn pyramid_rejects_wrong_sizes() {
        let cfg = PyramidConfig { level_counts: [64, 32, 16, 8] };
        assert!(matches!(
            build_pyramid(&random_cloud(5, 63), &up_normals(63), &cfg),
            Err(Error::SizeMismatch { .. })
        ));
        assert!(matches!(
            build_pyramid(&random_cloud(5, 64), &up_normals(60), &cfg),
            Err(Error::SizeMismatch { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn fps_matches_reference(seed in any::<u64>(), n in 1usize..=64, frac in 0.0f64..=1.0) {
            let cloud = random_cloud(seed, n);
            let m = ((n as f64 * frac).ceil() as usize).clamp(1, n);
            prop_assert_eq!(farthest_point_sample(&cloud, m).unwrap(), fps_reference(cloud.points(), m));
        }

        #[test]
        fn fps_each_pick_is_farthest(seed in any::<u64>()) {
            let cloud = random_cloud(seed, 80);
            let picks = farthest_point_sample(&cloud, 30).unwrap();
            for t in 1..picks.len() {
                let to_set = |j: usize| picks[..t].iter().map(|&s| (cloud[j] - cloud[s]).norm()).fold(f64::INFINITY, f64::min);
                let chosen = to_set(picks[t]);
                for j in (0..80).filter(|j| !picks[..t].contains(j)) {
                    prop_assert!(chosen >= to_set(j));
                }
            }
        }
    }
}
