//! Shared stochastic bandit with collision feedback.
//!
//! Arms are 0-based internally. Every pulling agent draws one Bernoulli
//! sample from its own `(arm, agent)` stream; the sample is zeroed when
//! more than one agent pulls the same arm in the same step.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

use crate::rng::reward_stream;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("need at least two arms, got {0}")]
    TooFewArms(usize),
    #[error("need at least one agent")]
    NoAgents,
    #[error("agents ({agents}) must be fewer than arms ({arms})")]
    TooManyAgents { agents: usize, arms: usize },
    #[error("expected {expected} means, got {got}")]
    MeansLength { expected: usize, got: usize },
    #[error("mean of arm {arm} is {value}, outside [0, 1]")]
    MeanOutOfRange { arm: usize, value: f64 },
    #[error("horizon must be positive")]
    ZeroHorizon,
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("agent {agent} pulled arm {arm}, only {arms} arms exist")]
    ArmOutOfRange { agent: usize, arm: usize, arms: usize },
    #[error("step cap of {0} exceeded")]
    StepCap(u64),
}

/// Static description of a bandit instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditConfig {
    pub arms: usize,
    pub agents: usize,
    pub horizon: u64,
    pub means: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl BanditConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.arms < 2 {
            return Err(EnvError::TooFewArms(self.arms));
        }
        if self.agents == 0 {
            return Err(EnvError::NoAgents);
        }
        if self.agents >= self.arms {
            return Err(EnvError::TooManyAgents { agents: self.agents, arms: self.arms });
        }
        if self.means.len() != self.arms {
            return Err(EnvError::MeansLength { expected: self.arms, got: self.means.len() });
        }
        for (arm, &value) in self.means.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(EnvError::MeanOutOfRange { arm, value });
            }
        }
        if self.horizon == 0 {
            return Err(EnvError::ZeroHorizon);
        }
        Ok(())
    }

    /// Means sorted in decreasing order.
    pub fn sorted_means(&self) -> Vec<f64> {
        let mut m = self.means.clone();
        m.sort_by(|a, b| b.partial_cmp(a).unwrap());
        m
    }

    /// Sum of the `n` largest means.
    pub fn top_sum(&self, n: usize) -> f64 {
        self.sorted_means().iter().take(n).sum()
    }

    /// Indices of the `n` best arms, best first; ties broken by index.
    pub fn top_arms(&self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.arms).collect();
        idx.sort_by(|&a, &b| self.means[b].partial_cmp(&self.means[a]).unwrap().then(a.cmp(&b)));
        idx.truncate(n);
        idx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Pull(usize),
    Idle,
}

impl Action {
    pub fn arm(self) -> Option<usize> {
        match self {
            Action::Pull(k) => Some(k),
            Action::Idle => None,
        }
    }
}

/// What a single agent sees after a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Observation {
    pub collision: bool,
    pub reward: u8,
}

/// Protocol phase an agent reports for the step it is taking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Init,
    Explore,
    Comm,
    CommA,
    Exploit,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Init => "init",
            Phase::Explore => "explore",
            Phase::Comm => "comm",
            Phase::CommA => "comm_a",
            Phase::Exploit => "exploit",
        }
    }

    /// Phases in which collisions are deliberate.
    pub fn signals(self) -> bool {
        matches!(self, Phase::Init | Phase::Comm | Phase::CommA)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One agent's entry in the environment trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PullRecord {
    pub t: u64,
    pub agent: usize,
    pub action: Action,
    pub collision: bool,
    pub reward: u8,
}

pub struct BanditEnv {
    config: BanditConfig,
    clock: u64,
    step_cap: u64,
    streams: Vec<ChaCha8Rng>,
    occupancy: Vec<u32>,
    observations: Vec<Observation>,
    trace: Vec<PullRecord>,
    record: bool,
}

impl BanditEnv {
    /// Creates an environment that refuses to run past twice its horizon.
    pub fn new(config: BanditConfig) -> Result<Self, EnvError> {
        config.validate()?;
        let cap = config.horizon.saturating_mul(2);
        Ok(Self::with_cap(config, cap))
    }

    /// Environment for codec experiments that runs far past its nominal
    /// horizon and does not keep a trace.
    pub fn channel(config: BanditConfig) -> Result<Self, EnvError> {
        config.validate()?;
        let mut env = Self::with_cap(config, u64::MAX);
        env.record = false;
        Ok(env)
    }

    fn with_cap(config: BanditConfig, step_cap: u64) -> Self {
        let streams = (0..config.arms)
            .flat_map(|k| (0..config.agents).map(move |m| (k, m)))
            .map(|(k, m)| reward_stream(config.seed, k, m))
            .collect();
        let occupancy = vec![0; config.arms];
        let observations = vec![Observation::default(); config.agents];
        BanditEnv { config, clock: 0, step_cap, streams, occupancy, observations, trace: Vec::new(), record: true }
    }

    pub fn config(&self) -> &BanditConfig {
        &self.config
    }

    /// Number of completed steps.
    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn trace(&self) -> &[PullRecord] {
        &self.trace
    }

    /// Turns trace recording on or off; callers that keep their own
    /// per-step log switch it off to save memory.
    pub fn set_recording(&mut self, on: bool) {
        self.record = on;
    }

    pub fn take_trace(&mut self) -> Vec<PullRecord> {
        std::mem::take(&mut self.trace)
    }

    /// Plays one joint action and returns each agent's observation.
    pub fn step(&mut self, actions: &[Action]) -> Result<&[Observation], EnvError> {
        let (k_arms, m_agents) = (self.config.arms, self.config.agents);
        if actions.len() != m_agents {
            return Err(EnvError::ActionCount { expected: m_agents, got: actions.len() });
        }
        if self.clock >= self.step_cap {
            return Err(EnvError::StepCap(self.step_cap));
        }
        self.occupancy.iter_mut().for_each(|c| *c = 0);
        for (agent, action) in actions.iter().enumerate() {
            if let Action::Pull(arm) = *action {
                if arm >= k_arms {
                    return Err(EnvError::ArmOutOfRange { agent, arm, arms: k_arms });
                }
                self.occupancy[arm] += 1;
            }
        }
        self.clock += 1;
        for (agent, action) in actions.iter().enumerate() {
            let obs = match *action {
                Action::Pull(arm) => {
                    let stream = &mut self.streams[arm * m_agents + agent];
                    let x = u8::from(stream.gen::<f64>() < self.config.means[arm]);
                    let collision = self.occupancy[arm] > 1;
                    Observation { collision, reward: if collision { 0 } else { x } }
                }
                Action::Idle => Observation::default(),
            };
            self.observations[agent] = obs;
            if self.record {
                self.trace.push(PullRecord {
                    t: self.clock,
                    agent,
                    action: *action,
                    collision: obs.collision,
                    reward: obs.reward,
                });
            }
        }
        Ok(&self.observations)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(arms: usize, agents: usize, means: Vec<f64>) -> BanditConfig {
        BanditConfig { arms, agents, horizon: 100, means, seed: 3 }
    }

    #[test]
    fn rejects_invalid_configs() {
        assert_eq!(cfg(3, 3, vec![0.5; 3]).validate(), Err(EnvError::TooManyAgents { agents: 3, arms: 3 }));
        assert_eq!(cfg(3, 1, vec![1.2, 0.5, 0.1]).validate(), Err(EnvError::MeanOutOfRange { arm: 0, value: 1.2 }));
        assert!(cfg(3, 1, vec![0.5; 2]).validate().is_err());
        assert!(cfg(3, 2, vec![0.9, 0.5, 0.1]).validate().is_ok());
    }

    #[test]
    fn collisions_zero_every_colliding_agent() {
        let mut env = BanditEnv::new(cfg(3, 2, vec![1.0; 3])).unwrap();
        let obs = env.step(&[Action::Pull(0), Action::Pull(0)]).unwrap().to_vec();
        assert!(obs.iter().all(|o| o.collision && o.reward == 0));
        let obs = env.step(&[Action::Pull(0), Action::Pull(1)]).unwrap().to_vec();
        assert!(obs.iter().all(|o| !o.collision && o.reward == 1));
        assert_eq!(env.clock(), 2);
        assert_eq!(env.trace().len(), 4);
    }

    #[test]
    fn idle_agents_never_collide() {
        let mut env = BanditEnv::new(cfg(3, 2, vec![1.0, 1.0, 1.0])).unwrap();
        let obs = env.step(&[Action::Idle, Action::Pull(0)]).unwrap().to_vec();
        assert_eq!(obs[0], Observation { collision: false, reward: 0 });
        assert_eq!(obs[1], Observation { collision: false, reward: 1 });
    }

    #[test]
    fn action_errors() {
        let mut env = BanditEnv::new(cfg(3, 2, vec![0.5; 3])).unwrap();
        assert_eq!(env.step(&[Action::Idle]).unwrap_err(), EnvError::ActionCount { expected: 2, got: 1 });
        assert!(matches!(env.step(&[Action::Pull(3), Action::Idle]), Err(EnvError::ArmOutOfRange { .. })));
    }

    #[test]
    fn step_cap_is_twice_the_horizon() {
        let mut c = cfg(2, 1, vec![0.5, 0.5]);
        c.horizon = 2;
        let mut env = BanditEnv::new(c).unwrap();
        for _ in 0..4 {
            env.step(&[Action::Pull(0)]).unwrap();
        }
        assert_eq!(env.step(&[Action::Pull(0)]).unwrap_err(), EnvError::StepCap(4));
    }

    #[test]
    fn same_seed_same_rewards() {
        let run = || {
            let mut env = BanditEnv::new(cfg(3, 2, vec![0.3, 0.6, 0.9])).unwrap();
            (0..50)
                .map(|t| env.step(&[Action::Pull(t % 3), Action::Pull((t + 1) % 3)]).unwrap().to_vec())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn empirical_mean_tracks_true_mean() {
        let mut env = BanditEnv::new(BanditConfig { horizon: 20_000, ..cfg(2, 1, vec![0.3, 0.7]) }).unwrap();
        let n = 20_000;
        let ones: u32 = (0..n).map(|_| env.step(&[Action::Pull(1)]).unwrap()[0].reward as u32).sum();
        let mean = ones as f64 / n as f64;
        // four standard deviations of a Bernoulli(0.7) mean over 20k draws
        assert!((mean - 0.7).abs() < 4.0 * (0.21f64 / n as f64).sqrt());
    }
}
