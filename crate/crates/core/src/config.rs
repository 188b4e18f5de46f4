//! Effective run configuration: defaults, then a TOML file, then flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{ConsistencyMode, KinematicThresholds};
use crate::counterfactual::PairThresholds;
use crate::datamodel::{CorpusPaths, DEFAULT_WINDOW_S};
use crate::lexicon::TraceEquality;
use crate::stats::DEFAULT_MI_K;

/// Environment variable holding the default worker count.
pub const JOBS_ENV: &str = "VLAFAITH_JOBS";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Directory holding `records.jsonl`, `obstacles.jsonl` and `futures.jsonl`.
    pub data: Option<PathBuf>,
    pub records: Option<PathBuf>,
    pub obstacles: Option<PathBuf>,
    pub futures: Option<PathBuf>,
    pub strict: bool,
    pub lexicon: Option<PathBuf>,
    pub rules: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub eps_v: f64,
    pub eps_a: f64,
    pub eps_l: f64,
    pub delta_tau: f64,
    pub spread_high: f64,
    pub window: f64,
    pub low_threshold: f64,
    pub mi_k: usize,
    pub seed: u64,
    pub trace_eq: TraceEquality,
    pub consistency_mode: ConsistencyMode,
    /// Worker threads; 0 lets the pool decide.
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let k = KinematicThresholds::default();
        let p = PairThresholds::default();
        Self {
            data: None,
            records: None,
            obstacles: None,
            futures: None,
            strict: false,
            lexicon: None,
            rules: None,
            out: None,
            eps_v: k.eps_v,
            eps_a: k.eps_a,
            eps_l: k.eps_l,
            delta_tau: p.delta_tau,
            spread_high: p.spread_high,
            window: DEFAULT_WINDOW_S,
            low_threshold: 0.5,
            mi_k: DEFAULT_MI_K,
            seed: 0,
            trace_eq: TraceEquality::Text,
            consistency_mode: ConsistencyMode::Graded,
            jobs: 0,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str, path: &str) -> Result<Self, ConfigError> {
        toml::from_str(s).map_err(|e| ConfigError::Parse {
            path: path.to_string(),
            message: e.to_string(),
        })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn kinematic(&self) -> KinematicThresholds {
        KinematicThresholds {
            eps_v: self.eps_v,
            eps_a: self.eps_a,
            eps_l: self.eps_l,
        }
    }

    pub fn pair(&self) -> PairThresholds {
        PairThresholds {
            delta_tau: self.delta_tau,
            spread_high: self.spread_high,
        }
    }

    /// Individual paths override the directory.
    pub fn corpus_paths(&self) -> Result<CorpusPaths, ConfigError> {
        let base = self.data.as_ref().map(CorpusPaths::in_dir);
        let pick = |own: &Option<PathBuf>, from_dir: Option<&PathBuf>, name: &str| {
            own.clone()
                .or_else(|| from_dir.cloned())
                .ok_or_else(|| ConfigError::Invalid(format!("no {name} file: pass --data or --{name}")))
        };
        Ok(CorpusPaths {
            records: pick(&self.records, base.as_ref().map(|b| &b.records), "records")?,
            obstacles: pick(&self.obstacles, base.as_ref().map(|b| &b.obstacles), "obstacles")?,
            futures: pick(&self.futures, base.as_ref().map(|b| &b.futures), "futures")?,
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("eps_v", self.eps_v),
            ("eps_a", self.eps_a),
            ("eps_l", self.eps_l),
            ("delta_tau", self.delta_tau),
            ("spread_high", self.spread_high),
            ("window", self.window),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.low_threshold > 0.0 && self.low_threshold < 1.0) {
            return Err(ConfigError::Invalid(format!(
                "low_threshold must lie in (0, 1), got {}",
                self.low_threshold
            )));
        }
        if self.mi_k == 0 {
            return Err(ConfigError::Invalid("mi_k must be at least 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_overrides_defaults() {
        let c = RunConfig::from_toml_str("eps_v = 0.7\ndelta_tau = 1.5\ntrace_eq = \"category\"\n", "x").unwrap();
        assert_eq!(c.eps_v, 0.7);
        assert_eq!(c.delta_tau, 1.5);
        assert_eq!(c.trace_eq, TraceEquality::Category);
        assert_eq!(c.eps_a, 1.0);
        assert!(RunConfig::from_toml_str("bogus = 1", "x").is_err());
    }

    #[test]
    fn validation() {
        assert!(RunConfig::default().validate().is_ok());
        let bad = RunConfig {
            low_threshold: 1.0,
            ..RunConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = RunConfig {
            eps_l: 0.0,
            ..RunConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn paths_resolve() {
        let c = RunConfig {
            data: Some("d".into()),
            futures: Some("f.jsonl".into()),
            ..RunConfig::default()
        };
        let p = c.corpus_paths().unwrap();
        assert_eq!(p.records, PathBuf::from("d/records.jsonl"));
        assert_eq!(p.futures, PathBuf::from("f.jsonl"));
        assert!(RunConfig::default().corpus_paths().is_err());
    }
}
