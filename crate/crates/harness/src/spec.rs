//! Experiment description, defaults and validation.

use std::path::PathBuf;

use mmab_core::BanditConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SpecError {
    #[error("need fewer agents than arms, got {agents} agents and {arms} arms")]
    AgentsVsArms { agents: usize, arms: usize },
    #[error("need at least one agent")]
    NoAgents,
    #[error("beta must exceed 1, got {0}")]
    Beta(f64),
    #[error("delta must lie in (0, 1), got {0}")]
    Delta(f64),
    #[error("{got} means given for {arms} arms")]
    MeansLength { got: usize, arms: usize },
    #[error("mean {0} is outside [0, 1]")]
    MeanRange(f64),
    #[error("horizon must be positive")]
    Horizon,
    #[error("need at least one seed")]
    Seeds,
    #[error("asynchronous runs need one activation period per agent")]
    Periods,
    #[error("activation periods must be positive")]
    ZeroPeriod,
    #[error("curve spacing must be positive")]
    CurveEvery,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    #[default]
    Syncd,
    Async,
}

/// Arm means, either listed or evenly spaced from `from` to `to`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Means {
    List(Vec<f64>),
    Linspace { from: f64, to: f64 },
}

impl Means {
    pub fn resolve(&self, arms: usize) -> Vec<f64> {
        match self {
            Means::List(v) => v.clone(),
            Means::Linspace { from, .. } if arms <= 1 => vec![*from; arms],
            Means::Linspace { from, to } => {
                (0..arms).map(|i| from + (to - from) * i as f64 / (arms - 1) as f64).collect()
            }
        }
    }
}

/// Either a number of runs seeded `seed, seed + 1, ...` or explicit seeds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Seeds {
    Count(u64),
    List(Vec<u64>),
}

fn default_arms() -> usize {
    10
}
fn default_agents() -> usize {
    5
}
fn default_horizon() -> u64 {
    50_000
}
fn default_means() -> Means {
    Means::Linspace { from: 0.9, to: 0.89 }
}
fn default_beta() -> f64 {
    4.0
}
fn default_seeds() -> Seeds {
    Seeds::Count(20)
}
fn default_curve_points() -> u64 {
    200
}

/// One experiment: an instance, an algorithm and a set of seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default = "default_arms")]
    pub arms: usize,
    #[serde(default = "default_agents")]
    pub agents: usize,
    #[serde(default = "default_horizon")]
    pub horizon: u64,
    #[serde(default = "default_means")]
    pub means: Means,
    /// Master seed; run `i` uses `seed + i` when `seeds` is a count.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub algorithm: Algorithm,
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Confidence level; `1/T^2` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Activation periods, asynchronous runs only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub periods: Option<Vec<u64>>,
    #[serde(default = "default_seeds")]
    pub seeds: Seeds,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Number of points on each regret curve.
    #[serde(default = "default_curve_points")]
    pub curve_points: u64,
    /// Also write the per-step trace, message log and agent snapshots.
    #[serde(default)]
    pub trace: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn seed_list(&self) -> Vec<u64> {
        match &self.seeds {
            Seeds::Count(n) => (0..*n).map(|i| self.seed.wrapping_add(i)).collect(),
            Seeds::List(v) => v.clone(),
        }
    }

    pub fn delta_value(&self) -> f64 {
        self.delta.unwrap_or_else(|| 1.0 / (self.horizon as f64).powi(2))
    }

    pub fn bandit(&self, seed: u64) -> BanditConfig {
        BanditConfig {
            arms: self.arms,
            agents: self.agents,
            horizon: self.horizon,
            means: self.means.resolve(self.arms),
            seed,
        }
    }

    /// Checks the spec and makes every default explicit.
    pub fn normalize(&self) -> Result<Self, SpecError> {
        if self.agents == 0 {
            return Err(SpecError::NoAgents);
        }
        if self.agents >= self.arms {
            return Err(SpecError::AgentsVsArms { agents: self.agents, arms: self.arms });
        }
        if self.horizon == 0 {
            return Err(SpecError::Horizon);
        }
        if self.beta.is_nan() || self.beta <= 1.0 {
            return Err(SpecError::Beta(self.beta));
        }
        let delta = self.delta_value();
        if !(delta > 0.0 && delta < 1.0) {
            return Err(SpecError::Delta(delta));
        }
        let means = self.means.resolve(self.arms);
        if means.len() != self.arms {
            return Err(SpecError::MeansLength { got: means.len(), arms: self.arms });
        }
        if let Some(&m) = means.iter().find(|m| !(0.0..=1.0).contains(*m)) {
            return Err(SpecError::MeanRange(m));
        }
        let seeds = self.seed_list();
        if seeds.is_empty() {
            return Err(SpecError::Seeds);
        }
        if self.curve_points == 0 {
            return Err(SpecError::CurveEvery);
        }
        let periods = match self.algorithm {
            Algorithm::Syncd => None,
            Algorithm::Async => {
                let p = self.periods.clone().ok_or(SpecError::Periods)?;
                if p.len() != self.agents {
                    return Err(SpecError::Periods);
                }
                if p.contains(&0) {
                    return Err(SpecError::ZeroPeriod);
                }
                Some(p)
            }
        };
        Ok(ExperimentSpec {
            means: Means::List(means),
            delta: Some(delta),
            seeds: Seeds::List(seeds),
            periods,
            ..self.clone()
        })
    }

    /// Short digest of everything that determines a single run except its seed.
    pub fn config_hash(&self) -> String {
        let key = ExperimentSpec {
            seed: 0,
            seeds: Seeds::Count(1),
            out_dir: None,
            curve_points: default_curve_points(),
            trace: false,
            means: Means::List(self.means.resolve(self.arms)),
            delta: Some(self.delta_value()),
            ..self.clone()
        };
        let digest = Sha256::digest(serde_json::to_vec(&key).expect("spec serializes"));
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}
