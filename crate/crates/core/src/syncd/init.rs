//! Orthogonalization and rank assignment.
//!
//! States are 1-based arm labels `1..K-1`; label `K` is the detection arm.
//! Orthogonalization runs in blocks of `K + 1` steps: one random pull by
//! unsatisfied agents, then `K` detection steps in which a satisfied agent
//! in state `s` steps onto the detection arm only in detection step `s`
//! and unsatisfied agents sit on it throughout. A silent detection window
//! means everyone is satisfied.
//!
//! Rank assignment then takes `2K - 2` steps in which every pair of states
//! collides exactly once; the collisions in the first `2s` steps give the
//! rank and the total gives the number of agents.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Mean length of orthogonalization in steps.
pub fn expected_orthogonalization_steps(arms: usize, agents: usize) -> f64 {
    let (k, m) = (arms as f64, agents as f64);
    m * (k - 1.0) * (k + 1.0) / (k - m)
}

/// Step budget after which initialization is declared stuck.
pub fn init_watchdog(arms: usize, agents: usize) -> u64 {
    (50.0 * expected_orthogonalization_steps(arms, agents)).ceil() as u64 + rank_steps(arms) as u64
}

pub fn rank_steps(arms: usize) -> usize {
    2 * arms - 2
}

/// 1-based arm pulled in rank-assignment step `s` (1-based) by state `k`.
pub fn rank_arm(k: usize, s: usize, arms: usize) -> usize {
    if s > 2 * k && s < arms + k {
        s - k
    } else {
        k
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InitResult {
    pub rank: usize,
    pub agents: usize,
    /// 1-based orthogonal state.
    pub state: usize,
}

#[derive(Debug, Clone)]
enum Stage {
    Orth { pos: usize, state: Option<usize>, candidate: usize, heard: bool },
    Rank { s: usize, state: usize, early: usize, total: usize },
    Done(InitResult),
}

/// One agent's initialization state machine.
#[derive(Debug, Clone)]
pub struct InitMachine {
    arms: usize,
    stage: Stage,
    steps: u64,
}

impl InitMachine {
    pub fn new(arms: usize) -> Self {
        assert!(arms >= 2);
        InitMachine { arms, stage: Stage::Orth { pos: 0, state: None, candidate: 0, heard: false }, steps: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn result(&self) -> Option<InitResult> {
        match self.stage {
            Stage::Done(r) => Some(r),
            _ => None,
        }
    }

    /// 0-based arm to pull this step.
    pub fn arm(&mut self, rng: &mut ChaCha8Rng) -> usize {
        let k = self.arms;
        let label = match &mut self.stage {
            Stage::Orth { pos: 0, state: Some(s), .. } => *s,
            Stage::Orth { pos: 0, state: None, candidate, .. } => {
                *candidate = rng.gen_range(1..k);
                *candidate
            }
            Stage::Orth { pos, state: Some(s), .. } if *pos != *s => *s,
            Stage::Orth { .. } => k,
            Stage::Rank { s, state, .. } => rank_arm(*state, *s, k),
            Stage::Done(_) => panic!("initialization already finished"),
        };
        label - 1
    }

    /// Returns the result once the final step has been observed.
    pub fn observe(&mut self, collision: bool) -> Option<InitResult> {
        self.steps += 1;
        let k = self.arms;
        match &mut self.stage {
            Stage::Orth { pos, state, candidate, heard } => {
                if *pos == 0 {
                    if state.is_none() && !collision {
                        *state = Some(*candidate);
                    }
                } else if collision {
                    *heard = true;
                }
                *pos += 1;
                if *pos == k + 1 {
                    match (*state, *heard) {
                        (Some(s), false) => self.stage = Stage::Rank { s: 1, state: s, early: 0, total: 0 },
                        _ => {
                            *pos = 0;
                            *heard = false;
                        }
                    }
                }
            }
            Stage::Rank { s, state, early, total } => {
                if collision {
                    *total += 1;
                    if *s <= 2 * *state {
                        *early += 1;
                    }
                }
                *s += 1;
                if *s > rank_steps(k) {
                    self.stage = Stage::Done(InitResult { rank: *early, agents: *total + 1, state: *state });
                }
            }
            Stage::Done(_) => panic!("initialization already finished"),
        }
        self.result()
    }
}
