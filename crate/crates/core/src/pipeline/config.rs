use serde::{Deserialize, Serialize};

use crate::estim::RansacConfig;
use crate::features::ClassicalConfig;
use crate::metrics::MetricConfig;

use super::PipelineError;

/// Settings for an evaluation run. Every field has a default, so `{}` is a
/// valid config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Base seed; each pair's RANSAC seed is derived from it and the pair id.
    pub seed: u64,
    pub ransac: RansacConfig,
    pub metrics: MetricConfig,
    /// Long-edge size images are resized to before builtin matching. `None`
    /// matches at original resolution. Geometry always uses original pixels.
    pub resize_long_edge: Option<u32>,
    pub matcher: ClassicalConfig,
    /// Worker threads; `None` uses all cores.
    pub jobs: Option<usize>,
    /// Record wall-clock matching time. Disable for byte-stable output.
    pub timing: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            ransac: RansacConfig::default(),
            metrics: MetricConfig::default(),
            resize_long_edge: None,
            matcher: ClassicalConfig::default(),
            jobs: None,
            timing: true,
        }
    }
}

impl RunConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self, PipelineError> {
        let cfg: Self = serde_json::from_slice(bytes).map_err(|e| PipelineError::validation(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let mut problems = Vec::new();
        if let Err(e) = self.ransac.validate() {
            problems.push(format!("ransac: {e}"));
        }
        if let Err(e) = self.metrics.validate() {
            problems.push(format!("metrics: {e}"));
        }
        if self.resize_long_edge == Some(0) {
            problems.push("resize_long_edge must be positive".into());
        }
        if self.jobs == Some(0) {
            problems.push("jobs must be positive".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(PipelineError::Validation(problems))
        }
    }
}
