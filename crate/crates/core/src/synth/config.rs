use serde::{Deserialize, Serialize};

use super::signature::GRID_SIZE;
use crate::error::{Error, Result};

/// Timing and label noise applied while emitting invocations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimingConfig {
    /// Gap between packets of one invocation, uniform in this range.
    pub intra_gap: (f64, f64),
    /// Gap between the end of one invocation and the start of the next on the
    /// same domain.
    pub inter_gap: (f64, f64),
    /// Probability that an intra-invocation gap is a stall instead.
    pub intra_stall_prob: f64,
    pub stall_gap: (f64, f64),
    /// Offset of each domain's flow from the instance start, uniform in `[0, x]`.
    pub flow_start_jitter: f64,
    /// Expected number of extra invocations of unrelated URIs per instance.
    pub spurious_uri_rate: f64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            intra_gap: (0.005, 0.05),
            inter_gap: (1.0, 2.0),
            intra_stall_prob: 0.0,
            stall_gap: (0.05, 0.09),
            flow_start_jitter: 0.2,
            spurious_uri_rate: 0.0,
        }
    }
}

impl TimingConfig {
    pub fn validate(&self) -> Result<()> {
        let range = |name: &str, r: (f64, f64)| {
            if r.0 >= 0.0 && r.1 >= r.0 && r.1.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be an ordered non-negative range")))
            }
        };
        range("intra_gap", self.intra_gap)?;
        range("inter_gap", self.inter_gap)?;
        range("stall_gap", self.stall_gap)?;
        if !(0.0..=1.0).contains(&self.intra_stall_prob) {
            return Err(Error::Config("intra_stall_prob must lie in [0, 1]".into()));
        }
        if self.flow_start_jitter < 0.0 || self.spurious_uri_rate < 0.0 {
            return Err(Error::Config("jitter and spurious rate must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackgroundConfig {
    /// Seconds between push heartbeats; 0 disables them.
    pub heartbeat_period: f64,
    /// Ad prefetches per second (Poisson).
    pub prefetch_rate: f64,
    /// Telemetry beacons per second (Poisson).
    pub telemetry_rate: f64,
}

impl Default for BackgroundConfig {
    fn default() -> Self {
        Self {
            heartbeat_period: 30.0,
            prefetch_rate: 0.05,
            telemetry_rate: 0.03,
        }
    }
}

fn d_apps() -> usize {
    10
}
fn d_platforms() -> Vec<String> {
    vec!["android".into(), "ios".into(), "web".into()]
}
fn d_behaviors() -> usize {
    3
}
fn d_uris() -> usize {
    6
}
fn d_shared() -> f64 {
    0.5
}
fn d_pool() -> usize {
    96
}
fn d_domains() -> usize {
    3
}
fn d_canonical() -> f64 {
    0.76
}
fn d_instances() -> usize {
    50
}
fn d_train() -> usize {
    40
}
fn d_merge_prob() -> f64 {
    0.5
}
fn d_max_delay() -> f64 {
    5.0
}
fn d_margin() -> f64 {
    5.0
}

/// Scenario for the synthetic generator. Every field but `seed` has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub seed: u64,
    #[serde(default = "d_apps")]
    pub apps: usize,
    #[serde(default = "d_platforms")]
    pub platforms: Vec<String>,
    #[serde(default = "d_behaviors")]
    pub behaviors_per_app: usize,
    #[serde(default = "d_uris")]
    pub uris_per_behavior: usize,
    /// Fraction of each behavior's URIs seen identically on every platform.
    #[serde(default = "d_shared")]
    pub shared_fraction: f64,
    /// Fraction of each behavior's URIs common to all behaviors of the app.
    #[serde(default)]
    pub behavior_overlap: f64,
    /// Behavior `b` leaves out its last `b * private_taper` behavior-specific
    /// private URIs, keeping at least one.
    #[serde(default)]
    pub private_taper: usize,
    /// Most distinct URIs one app may use across platforms.
    #[serde(default = "d_pool")]
    pub uri_pool_size: usize,
    #[serde(default = "d_domains")]
    pub domains_per_app: usize,
    #[serde(default = "d_canonical")]
    pub canonical_prob: f64,
    #[serde(default)]
    pub timing: TimingConfig,
    #[serde(default)]
    pub background: BackgroundConfig,
    /// Instances per (app, platform, behavior); the first `train_per_behavior`
    /// go to training.
    #[serde(default = "d_instances")]
    pub instances_per_behavior: usize,
    #[serde(default = "d_train")]
    pub train_per_behavior: usize,
    #[serde(default = "d_merge_prob")]
    pub merge_prob: f64,
    #[serde(default = "d_max_delay")]
    pub max_merge_delay: f64,
    /// Background-only time before and after each instance.
    #[serde(default = "d_margin")]
    pub margin: f64,
}

impl ScenarioConfig {
    pub fn new(seed: u64) -> Self {
        serde_json::from_value(serde_json::json!({ "seed": seed })).expect("defaults deserialize")
    }

    pub fn n_shared(&self) -> usize {
        (self.shared_fraction * self.uris_per_behavior as f64).round() as usize
    }

    pub fn n_core(&self) -> usize {
        (self.behavior_overlap * self.uris_per_behavior as f64).round() as usize
    }

    /// Distinct shared URIs and distinct private URIs per platform, per app.
    pub fn uri_counts(&self) -> (usize, usize) {
        let (n, s, c, b) = (
            self.uris_per_behavior,
            self.n_shared(),
            self.n_core(),
            self.behaviors_per_app,
        );
        let shared = s.min(c) + b * s.saturating_sub(c);
        let private = c.saturating_sub(s) + b * (n - s.max(c));
        (shared, private)
    }

    pub fn validate(&self) -> Result<()> {
        if self.apps == 0 || self.behaviors_per_app == 0 || self.uris_per_behavior == 0 {
            return Err(Error::Config(
                "apps, behaviors and URIs per behavior must be positive".into(),
            ));
        }
        if self.platforms.is_empty() {
            return Err(Error::Config("at least one platform is required".into()));
        }
        let mut names = self.platforms.clone();
        names.sort();
        names.dedup();
        if names.len() != self.platforms.len() {
            return Err(Error::Config("platform names must be unique".into()));
        }
        if self.domains_per_app == 0 {
            return Err(Error::Config("domains_per_app must be positive".into()));
        }
        for (name, v) in [
            ("shared_fraction", self.shared_fraction),
            ("behavior_overlap", self.behavior_overlap),
            ("merge_prob", self.merge_prob),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        let variant_max = (1.0 - self.canonical_prob) * 10.0 / 24.0;
        if !(self.canonical_prob > 0.0 && self.canonical_prob <= 1.0) || self.canonical_prob < variant_max {
            return Err(Error::Config(format!(
                "canonical_prob {} must lie in (0, 1] and dominate every variant",
                self.canonical_prob
            )));
        }
        if self.uri_pool_size > GRID_SIZE {
            return Err(Error::Config(format!(
                "uri_pool_size {} exceeds the {GRID_SIZE} distinguishable signatures",
                self.uri_pool_size
            )));
        }
        let (shared, private) = self.uri_counts();
        let needed = shared + self.platforms.len() * private;
        if needed > self.uri_pool_size {
            return Err(Error::Config(format!(
                "shared_fraction {} needs {needed} distinct URIs per app but uri_pool_size is {}",
                self.shared_fraction, self.uri_pool_size
            )));
        }
        if self.train_per_behavior > self.instances_per_behavior {
            return Err(Error::Config(
                "train_per_behavior exceeds instances_per_behavior".into(),
            ));
        }
        if !(0.0..=crate::traffic::MAX_MERGE_DELAY).contains(&self.max_merge_delay) {
            return Err(Error::Config("max_merge_delay must lie in [0, 5]".into()));
        }
        if self.margin < 0.0 {
            return Err(Error::Config("margin must be non-negative".into()));
        }
        self.timing.validate()
    }
}
