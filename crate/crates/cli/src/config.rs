//! TOML run configuration.
//!
//! ```toml
//! preset = "multi-refine"        # optional: svd-po2po | svd-po2pl | multi-no-refine | multi-refine
//!
//! [preprocess]
//! ground_drop_fraction = 0.5
//! voxel_side = 0.3
//! target_count = 8192
//!
//! [pyramid]
//! level_counts = [8192, 2048, 512, 256]
//!
//! [odometry]
//! iterations_per_level = 3
//! flow = "closest-point"         # or "oracle" (needs ground-truth poses)
//!
//! [sequence]
//! loss_residual = true
//! ```
//!
//! Every key is optional; omitted keys take the library defaults. A preset is
//! applied on top of the `[odometry]` table.

use std::path::Path;

use c2flo::odometry::{OdometryConfig, Preset, SequenceOptions};
use c2flo::preprocess::PreprocessConfig;
use c2flo::pyramid::PyramidConfig;
use c2flo::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Option<Preset>,
    pub preprocess: PreprocessConfig,
    pub pyramid: PyramidConfig,
    pub odometry: OdometryConfig,
    pub sequence: SequenceOptions,
}

impl RunConfig {
    pub fn from_toml(path: &Path, text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::MalformedFile {
            path: path.to_path_buf(),
            reason: e.message().to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(path, &text)
    }

    /// The odometry settings after the preset (if any) is applied.
    pub fn effective_odometry(&self) -> OdometryConfig {
        match self.preset {
            Some(p) => p.apply(&self.odometry),
            None => self.odometry.clone(),
        }
    }

    /// Validates every section and folds the preset into `odometry`.
    pub fn resolve(mut self) -> Result<Self> {
        self.odometry = self.effective_odometry();
        self.preset = None;
        self.preprocess.validate()?;
        self.pyramid.validate()?;
        self.odometry.validate()?;
        if self.pyramid.level_counts[0] != self.preprocess.target_count {
            return Err(Error::InvalidConfig(format!(
                "pyramid level 0 has {} points but preprocessing emits {}",
                self.pyramid.level_counts[0], self.preprocess.target_count
            )));
        }
        Ok(self)
    }
}
