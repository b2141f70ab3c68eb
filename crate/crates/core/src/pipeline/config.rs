use serde::{Deserialize, Serialize};

use crate::burst::DEFAULT_DELTA_T;
use crate::error::{Error, Result};
use crate::learn::{ForestParams, LogisticParams};
use crate::stage1::Stage1Params;
use crate::urimap::{DEFAULT_BETA, DEFAULT_LAMBDA, DEFAULT_TAU};

/// Every tunable of training and inference. Missing JSON fields take their
/// defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub similarity_forest: ForestParams,
    pub background_forest: ForestParams,
    pub uri_forest: ForestParams,
    pub gate: LogisticParams,
    /// Neighbourhood, segmentation thresholds, `q`, `p_min` and the gate
    /// threshold.
    pub stage1: Stage1Params,
    pub delta_t: f64,
    pub tau: f64,
    pub lambda: f64,
    pub beta: f64,
    /// Minimum overlap, as a fraction of the true window, for a predicted
    /// window to count as a hit.
    pub overlap_threshold: f64,
    /// Behaviors with fewer training instances get no CUM.
    pub min_instances: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            similarity_forest: ForestParams::default(),
            background_forest: ForestParams::default(),
            uri_forest: ForestParams {
                balanced: true,
                ..ForestParams::default()
            },
            gate: LogisticParams::default(),
            stage1: Stage1Params::default(),
            delta_t: DEFAULT_DELTA_T,
            tau: DEFAULT_TAU,
            lambda: DEFAULT_LAMBDA,
            beta: DEFAULT_BETA,
            overlap_threshold: 0.5,
            min_instances: 2,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.stage1.validate()?;
        if !(self.delta_t > 0.0 && self.delta_t.is_finite()) {
            return Err(Error::Config(format!("delta_t must be positive, got {}", self.delta_t)));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau must lie in [0, 1], got {}", self.tau)));
        }
        if self.lambda < 0.0 {
            return Err(Error::Config(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::Config(format!("beta must lie in (0, 1), got {}", self.beta)));
        }
        if !(self.overlap_threshold > 0.0 && self.overlap_threshold <= 1.0) {
            return Err(Error::Config("overlap_threshold must lie in (0, 1]".into()));
        }
        for f in [&self.similarity_forest, &self.background_forest, &self.uri_forest] {
            if f.n_trees == 0 || f.max_depth == 0 || f.min_leaf == 0 {
                return Err(Error::Config("forest sizes must be positive".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_missing_fields() {
        let c: PipelineConfig = serde_json::from_str(r#"{"lambda": 0.5, "stage1": {"q": 0.7}}"#).unwrap();
        assert_eq!(c.lambda, 0.5);
        assert_eq!(c.stage1.q, 0.7);
        assert_eq!(c.stage1.p_min, 0.5);
        assert_eq!(c.beta, 0.3);
        assert!(c.uri_forest.balanced);
        c.validate().unwrap();
    }

    #[test]
    fn bad_values_are_rejected() {
        let c = PipelineConfig {
            delta_t: 0.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = PipelineConfig {
            beta: 1.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
