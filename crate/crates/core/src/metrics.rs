//! Regret accounting, gap profiles and reference bounds.
//!
//! The canonical regret is pseudo-regret: every step is charged the sum of
//! the means the active agents could have collected on the best arms,
//! minus the means actually collected without collision. Initialization
//! steps earn no credit at all.

use serde::{Deserialize, Serialize};

use crate::codec::{precision_bits, Encoding, MessageRecord};
use crate::env::Phase;

/// One agent's part of one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub arm: Option<u16>,
    pub collision: bool,
    pub reward: u8,
    pub phase: Phase,
    pub active: bool,
}

/// Step-by-step record of a run, `agents` rows per step.
#[derive(Debug, Clone, Default)]
pub struct RegretLedger {
    pub agents: usize,
    pub means: Vec<f64>,
    pub rows: Vec<LedgerRow>,
    sorted: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Decomposition {
    pub init: f64,
    pub comm: f64,
    pub explore: f64,
}

impl Decomposition {
    pub fn total(&self) -> f64 {
        self.init + self.comm + self.explore
    }
}

impl RegretLedger {
    pub fn new(agents: usize, means: Vec<f64>) -> Self {
        let mut sorted = means.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        RegretLedger { agents, means, rows: Vec::new(), sorted }
    }

    pub fn push(&mut self, row: LedgerRow) {
        self.rows.push(row);
    }

    pub fn steps(&self) -> u64 {
        (self.rows.len() / self.agents.max(1)) as u64
    }

    /// Rows of step `t`, 1-based.
    pub fn step(&self, t: u64) -> &[LedgerRow] {
        let m = self.agents;
        let i = (t as usize - 1) * m;
        &self.rows[i..i + m]
    }

    fn best_sum(&self, n: usize) -> f64 {
        self.sorted.iter().take(n).sum()
    }

    fn credit(&self, r: &LedgerRow) -> f64 {
        match r.arm {
            Some(k) if r.active && !r.collision && r.phase != Phase::Init => self.means[k as usize],
            _ => 0.0,
        }
    }

    /// Per-row deficits of one step, aligned with the agents.
    fn step_deficits(&self, rows: &[LedgerRow], out: &mut [f64]) {
        let active = rows.iter().filter(|r| r.active).count();
        let share = if active == 0 { 0.0 } else { self.best_sum(active) / active as f64 };
        for (o, r) in out.iter_mut().zip(rows) {
            *o = if r.active { share - self.credit(r) } else { 0.0 };
        }
    }

    fn fold_steps(&self, until: u64, mut f: impl FnMut(&[LedgerRow], &[f64])) {
        let mut buf = vec![0.0; self.agents];
        for rows in self.rows.chunks_exact(self.agents).take(until as usize) {
            self.step_deficits(rows, &mut buf);
            f(rows, &buf);
        }
    }

    /// Group pseudo-regret over the first `until` steps.
    pub fn group_regret_until(&self, until: u64) -> f64 {
        let mut total = 0.0;
        self.fold_steps(until, |_, d| total += d.iter().sum::<f64>());
        total
    }

    pub fn group_regret(&self) -> f64 {
        self.group_regret_until(self.steps())
    }

    /// Regret against realized rewards instead of means.
    pub fn realized_regret(&self) -> f64 {
        let mut total = 0.0;
        for rows in self.rows.chunks_exact(self.agents) {
            let active = rows.iter().filter(|r| r.active).count();
            total += self.best_sum(active) - rows.iter().map(|r| r.reward as f64).sum::<f64>();
        }
        total
    }

    pub fn agent_deficits_until(&self, until: u64) -> Vec<f64> {
        let mut acc = vec![0.0; self.agents];
        self.fold_steps(until, |_, d| acc.iter_mut().zip(d).for_each(|(a, x)| *a += x));
        acc
    }

    pub fn agent_deficits(&self) -> Vec<f64> {
        self.agent_deficits_until(self.steps())
    }

    /// Largest per-agent deficit.
    pub fn individual_regret(&self) -> f64 {
        self.agent_deficits().into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Splits group regret by phase tag; communication covers both the
    /// statistics and the marking rounds.
    pub fn decompose_until(&self, until: u64) -> Decomposition {
        let mut d = Decomposition::default();
        self.fold_steps(until, |rows, defs| {
            for (r, x) in rows.iter().zip(defs) {
                match r.phase {
                    Phase::Init => d.init += x,
                    Phase::Comm | Phase::CommA => d.comm += x,
                    Phase::Explore | Phase::Exploit => d.explore += x,
                }
            }
        });
        d
    }

    pub fn decompose(&self) -> Decomposition {
        self.decompose_until(self.steps())
    }

    /// Cumulative group and individual regret sampled every `every` steps
    /// and at the final step.
    pub fn curve(&self, every: u64) -> Vec<CurvePoint> {
        let every = every.max(1);
        let mut out = Vec::new();
        let mut group = 0.0;
        let mut per = vec![0.0; self.agents];
        let last = self.steps();
        let mut t = 0u64;
        self.fold_steps(last, |_, d| {
            t += 1;
            group += d.iter().sum::<f64>();
            per.iter_mut().zip(d).for_each(|(a, x)| *a += x);
            if t.is_multiple_of(every) || t == last {
                let individual = per.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                out.push(CurvePoint { t, group, individual });
            }
        });
        out
    }

    /// Steps on which a collision happened without any participant being
    /// in a signalling phase.
    pub fn stray_collisions(&self) -> Vec<u64> {
        let mut bad = Vec::new();
        for (i, rows) in self.rows.chunks_exact(self.agents).enumerate() {
            for r in rows.iter().filter(|r| r.collision) {
                let deliberate = rows.iter().any(|o| o.arm == r.arm && o.phase.signals());
                if !deliberate {
                    bad.push(i as u64 + 1);
                    break;
                }
            }
        }
        bad
    }

    /// Number of maximal runs of statistics-round steps of one agent.
    pub fn comm_round_count(&self, agent: usize) -> usize {
        let mut count = 0;
        let mut inside = false;
        for rows in self.rows.chunks_exact(self.agents) {
            let now = rows[agent].phase == Phase::Comm;
            if now && !inside {
                count += 1;
            }
            inside = now;
        }
        count
    }

    /// Steps where every active agent exploits but the pulled arms are not
    /// the best `|A(t)|` arms, and the number of such exploiting steps.
    pub fn exploit_mismatches(&self) -> (u64, u64) {
        let order = self.arm_order();
        let (mut steps, mut bad) = (0, 0);
        for rows in self.rows.chunks_exact(self.agents) {
            let active: Vec<&LedgerRow> = rows.iter().filter(|r| r.active).collect();
            if active.is_empty() || !active.iter().all(|r| r.phase == Phase::Exploit) {
                continue;
            }
            steps += 1;
            let mut pulled: Vec<usize> = active.iter().filter_map(|r| r.arm.map(usize::from)).collect();
            pulled.sort_unstable();
            let mut best = order[..active.len()].to_vec();
            best.sort_unstable();
            if pulled != best || active.iter().any(|r| r.collision) {
                bad += 1;
            }
        }
        (steps, bad)
    }

    /// Arm indices by decreasing mean, ties by index.
    fn arm_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.means.len()).collect();
        order.sort_by(|&a, &b| self.means[b].partial_cmp(&self.means[a]).unwrap().then(a.cmp(&b)));
        order
    }

    pub fn phase_steps(&self, agent: usize, phase: Phase) -> u64 {
        self.rows.chunks_exact(self.agents).filter(|r| r[agent].phase == phase).count() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub t: u64,
    pub group: f64,
    pub individual: f64,
}

/// Gaps of an instance, with means taken in decreasing order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapProfile {
    pub sorted_means: Vec<f64>,
    pub agents: usize,
    /// Per rank: distance to the `(M+1)`-th mean for the top `M`, distance
    /// to the `M`-th mean otherwise.
    pub gaps: Vec<f64>,
}

impl GapProfile {
    pub fn new(means: &[f64], agents: usize) -> Self {
        let mut s = means.to_vec();
        s.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let m = agents;
        let gaps = (0..s.len()).map(|i| if i < m { s[i] - s[m] } else { s[m - 1] - s[i] }).collect();
        GapProfile { sorted_means: s, agents, gaps }
    }

    pub fn min_gap(&self) -> f64 {
        self.gaps.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_top_gap(&self) -> f64 {
        self.gaps[..self.agents].iter().copied().fold(0.0, f64::max)
    }

    /// Bound on the number of statistics rounds: `sum_k log_beta(8 beta / gap_k)`.
    pub fn comm_round_bound(&self, beta: f64) -> f64 {
        self.gaps.iter().map(|g| (8.0 * beta / g).ln() / beta.ln()).sum()
    }
}

/// Bound on the mean length of a differential message, sign included.
pub fn payload_bound(beta: f64, agents: usize) -> f64 {
    7.0 + (1.0 + beta + (agents as f64 * std::f64::consts::LN_2 / 2.0).sqrt()).log2()
}

/// Width of the first message about a statistic backed by `pulls` pulls.
pub fn first_message_width(pulls: u64) -> usize {
    precision_bits(pulls).map_or(0, |b| b as usize + 1)
}

/// Reference value of the group-regret upper bound; `init_regret` stands in
/// for the initialization constant.
pub fn theorem1_reference(means: &[f64], agents: usize, horizon: u64, beta: f64, init_regret: f64) -> f64 {
    let g = GapProfile::new(means, agents);
    let (m, k) = (agents as f64, means.len() as f64);
    let log_t = (horizon as f64).ln();
    let explore: f64 =
        g.gaps[agents..].iter().map(|&d| 32.0 * beta * beta * (beta + 2.0) * log_t / d + m * k * d).sum();
    let m3 = 2.0 * m.powi(3);
    let setup = m3 * k + m3 * (1.0 + 0.5 * (log_t / (beta * beta) + m * k).log2());
    let rounds = m3 * (g.comm_round_bound(beta) - 1.0) * payload_bound(beta, agents);
    explore + init_regret + setup + rounds
}

/// Per-arm gap used by the asynchronous lower bound, `None` where it is
/// infinite. `levels` are the distinct positive numbers of simultaneously
/// active agents.
pub fn async_gaps(means: &[f64], levels: &[usize]) -> Vec<Option<f64>> {
    let mut s = means.to_vec();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut lv: Vec<usize> = levels.iter().copied().filter(|&l| l > 0).collect();
    lv.sort_unstable();
    lv.dedup();
    (1..=s.len())
        .map(|k| {
            let critical = lv.iter().copied().filter(|&l| l < k).max()?;
            Some(s[critical - 1] - s[k - 1])
        })
        .collect()
}

/// `sum_k 1 / gap_k` over finite positive asynchronous gaps.
pub fn lower_bound_constant(means: &[f64], levels: &[usize]) -> f64 {
    async_gaps(means, levels).into_iter().flatten().filter(|&g| g > 0.0).map(|g| 1.0 / g).sum()
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CommStats {
    pub rounds: usize,
    pub messages: usize,
    pub total_bits: usize,
    pub delta_messages: usize,
    pub mean_delta_bits: f64,
    pub max_delta_bits: usize,
    pub first_messages: usize,
}

pub fn comm_stats(ledger: &RegretLedger, messages: &[MessageRecord]) -> CommStats {
    let deltas: Vec<usize> = messages.iter().filter(|m| m.encoding == Encoding::Delta).map(|m| m.wire_bits).collect();
    CommStats {
        rounds: if ledger.agents > 0 { ledger.comm_round_count(0) } else { 0 },
        messages: messages.len(),
        total_bits: messages.iter().map(|m| m.wire_bits).sum(),
        delta_messages: deltas.len(),
        mean_delta_bits: if deltas.is_empty() {
            0.0
        } else {
            deltas.iter().sum::<usize>() as f64 / deltas.len() as f64
        },
        max_delta_bits: deltas.iter().copied().max().unwrap_or(0),
        first_messages: messages.iter().filter(|m| m.encoding == Encoding::Full).count(),
    }
}
