//! TOML experiment configuration.
//!
//! ```toml
//! builtin = ["BM1"]
//! seeds = [1, 2, 3, 4, 5]
//! overhead_grid = [0, 5, 10, 15, 20]
//! trials = 2000
//! width = 8
//! cross_fraction = 0.5
//! policy = "wired_or"
//!
//! [[bench]]
//! name = "small"
//! latency = 6
//! ops = 20
//! edges = 30
//! outputs = 3
//!
//! [attack]
//! max_iters = 10
//! timeout_s = 5
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{builtin, BenchSpec};
use crate::lock::AreaModel;
use crate::polysb::CorruptionPolicy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSettings {
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    /// Largest box count handed to the enumerative backend.
    #[serde(default = "default_capacity")]
    pub capacity: usize,
}

fn default_max_iters() -> usize {
    10
}

fn default_timeout() -> f64 {
    10.0
}

fn default_capacity() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Names of built-in benchmark shapes.
    #[serde(default)]
    pub builtin: Vec<String>,
    /// Custom benchmark shapes.
    #[serde(default)]
    pub bench: Vec<BenchSpec>,
    pub seeds: Vec<u64>,
    pub overhead_grid: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: u64,
    #[serde(default = "default_width")]
    pub width: u32,
    #[serde(default = "default_cross")]
    pub cross_fraction: f64,
    #[serde(default)]
    pub policy: CorruptionPolicy,
    /// Cap each benchmark at its fixed switch-box count, when it has one.
    #[serde(default)]
    pub cap_to_target: bool,
    #[serde(default)]
    pub area: AreaModel,
    #[serde(default)]
    pub attack: Option<AttackSettings>,
}

fn default_trials() -> u64 {
    1000
}

fn default_width() -> u32 {
    8
}

fn default_cross() -> f64 {
    0.5
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<ExperimentConfig, ConfigError> {
        let c: ExperimentConfig = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.seeds.is_empty() {
            return bad("`seeds` must not be empty".into());
        }
        if self.overhead_grid.is_empty() {
            return bad("`overhead_grid` must not be empty".into());
        }
        if let Some(p) = self.overhead_grid.iter().find(|p| p.is_nan() || **p < 0.0) {
            return bad(format!("overhead point {p} is negative"));
        }
        if self.trials == 0 {
            return bad("`trials` must be at least 1".into());
        }
        if !(1..=64).contains(&self.width) {
            return bad(format!("width {} is outside 1..=64", self.width));
        }
        if !(0.0..=1.0).contains(&self.cross_fraction) {
            return bad(format!(
                "cross_fraction {} is outside [0, 1]",
                self.cross_fraction
            ));
        }
        if self.builtin.is_empty() && self.bench.is_empty() {
            return bad("no benchmarks configured".into());
        }
        for name in &self.builtin {
            if builtin(name).is_none() {
                return bad(format!("unknown built-in benchmark `{name}`"));
            }
        }
        Ok(())
    }

    /// All benchmark shapes, built-ins first.
    pub fn benchmarks(&self) -> Vec<BenchSpec> {
        self.builtin
            .iter()
            .filter_map(|n| builtin(n))
            .chain(self.bench.iter().cloned())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_doc_example() {
        let text = "builtin = [\"BM1\"]\nseeds = [1, 2]\noverhead_grid = [0, 5.5]\n\
                    [[bench]]\nname = \"s\"\nlatency = 6\nops = 20\nedges = 30\noutputs = 3\n\
                    [attack]\nmax_iters = 4\n";
        let c = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(c.benchmarks().len(), 2);
        assert_eq!(c.width, 8);
        assert_eq!(c.attack.unwrap().max_iters, 4);
    }

    #[test]
    fn rejects_empty_grid() {
        let text = "builtin = [\"BM1\"]\nseeds = [1]\noverhead_grid = []\n";
        assert!(matches!(
            ExperimentConfig::from_toml(text),
            Err(ConfigError::Invalid(_))
        ));
    }

    #[test]
    fn rejects_unknown_builtin() {
        let text = "builtin = [\"BM99\"]\nseeds = [1]\noverhead_grid = [0]\n";
        assert!(ExperimentConfig::from_toml(text).is_err());
    }
}
