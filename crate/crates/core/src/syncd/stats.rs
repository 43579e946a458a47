//! Pooled estimates, confidence intervals and elimination rules.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("arm {0} satisfies both the accept and the reject rule")]
    AcceptAndReject(usize),
    #[error("arm {0} has no samples")]
    NoSamples(usize),
}

/// `sqrt(ln(1/delta) / (2 n))`.
pub fn ecr(log_inv_delta: f64, n: u64) -> f64 {
    (log_inv_delta / (2.0 * n as f64)).sqrt()
}

/// Half-width of the interval around a pooled estimate backed by `n` pulls.
pub fn radius(beta: f64, log_inv_delta: f64, n: u64) -> f64 {
    2.0 * beta * ecr(log_inv_delta, n)
}

/// A communication round is due once the error rate has shrunk by `beta`.
pub fn ecr_trigger(current: f64, last: f64, beta: f64) -> bool {
    current <= last / beta
}

/// Inputs of the pooled estimator for one arm.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EstimateInputs {
    /// Sum over agents of last-shared count times last-shared mean.
    pub shared_sum: f64,
    /// Global count at the last round.
    pub shared_pulls: u64,
    /// Own reward sum now and at the last round.
    pub own_x: u64,
    pub own_x_last: u64,
    /// Own count now and at the last round.
    pub own_n: u64,
    pub own_n_last: u64,
}

impl EstimateInputs {
    pub fn estimate(&self) -> Option<f64> {
        let denom = self.shared_pulls + self.own_n - self.own_n_last;
        (denom > 0).then(|| (self.shared_sum + (self.own_x - self.own_x_last) as f64) / denom as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmInterval {
    pub arm: usize,
    pub estimate: f64,
    pub lcb: f64,
    pub ucb: f64,
}

impl ArmInterval {
    pub fn new(arm: usize, estimate: f64, radius: f64) -> Self {
        ArmInterval { arm, estimate, lcb: estimate - radius, ucb: estimate + radius }
    }
}

/// Arms to accept and reject, each in increasing arm order.
///
/// An arm is accepted when it dominates at least `|K_t| - M_t` others and
/// rejected when at least `M_t` others dominate it.
pub fn classify(intervals: &[ArmInterval], remaining: usize) -> Result<(Vec<usize>, Vec<usize>), StatsError> {
    let k_t = intervals.len();
    let mut acc = Vec::new();
    let mut rej = Vec::new();
    for a in intervals {
        let below = intervals.iter().filter(|b| b.arm != a.arm && a.lcb >= b.ucb).count();
        let above = intervals.iter().filter(|b| b.arm != a.arm && a.ucb <= b.lcb).count();
        let accept = below >= k_t.saturating_sub(remaining);
        let reject = above >= remaining;
        match (accept, reject) {
            (true, true) => return Err(StatsError::AcceptAndReject(a.arm)),
            (true, false) => acc.push(a.arm),
            (false, true) => rej.push(a.arm),
            (false, false) => {}
        }
    }
    acc.sort_unstable();
    rej.sort_unstable();
    Ok((acc, rej))
}
