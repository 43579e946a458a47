//! Synchronous decentralized agent.
//!
//! Every agent runs the same deterministic state machine and only learns
//! about the others through collisions. After initialization the agents
//! explore the active set in collision-free phases, share quantized means
//! whenever the error rate has shrunk by a factor `beta`, and settle on
//! round-robin exploitation of the accepted arms.
//!
//! Decisions taken right after a statistics round use identical tables on
//! every agent and apply immediately. Decisions taken from private data at
//! the end of an ordinary phase are held back: the agent deviates in the
//! first cycle of the next phase so that every other agent observes a
//! collision, the phase is abandoned after that cycle, and a marking round
//! merges all pending decisions.

pub mod init;
pub mod schedule;
pub mod stats;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{
    make_delta, quantize, Anchors, ArmSlot, CodecError, CommARound, CommRound, Encoding, MessageRecord, QuantizedMean,
};
use crate::env::{Action, Observation, Phase};
use crate::rng::agent_stream;
use init::{InitMachine, InitResult};
use schedule::{scheduled_arm, ScheduleError};
use stats::{classify, ecr, ecr_trigger, radius, ArmInterval, EstimateInputs, StatsError};

#[derive(Debug, Error, PartialEq)]
pub enum AgentError {
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("unexpected collision at step {0}")]
    UnexpectedCollision(u64),
    #[error("internal inconsistency: {0}")]
    Inconsistent(String),
}

/// Parameters shared by every agent of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub arms: usize,
    pub horizon: u64,
    pub beta: f64,
    pub delta: f64,
}

impl Params {
    /// `delta = 1 / T^2`.
    pub fn with_default_delta(arms: usize, horizon: u64, beta: f64) -> Self {
        Params { arms, horizon, beta, delta: 1.0 / (horizon as f64 * horizon as f64) }
    }

    pub fn log_inv_delta(&self) -> f64 {
        -self.delta.ln()
    }
}

/// Lockstep interface the simulator drives.
pub trait Agent {
    fn act(&mut self) -> (Action, Phase);
    fn observe(&mut self, obs: Observation) -> Result<(), AgentError>;
}

#[derive(Debug, Clone)]
struct Explore {
    step: usize,
    cycles: usize,
    signalling: bool,
    heard: bool,
    /// Explore samples of the first cycle, kept until it is known that no
    /// one signalled.
    buffer: Vec<(usize, u8)>,
}

#[derive(Debug, Clone)]
enum Stage {
    Init(InitMachine),
    Explore(Explore),
    Comm(CommRound),
    CommA(CommARound),
    Exploit { step: usize },
}

/// Snapshot of an agent's state, for debugging exports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSnapshot {
    pub step: u64,
    pub rank: usize,
    pub agents: usize,
    pub phase: Phase,
    pub active: Vec<usize>,
    pub accepted: Vec<usize>,
    pub rejected: Vec<usize>,
    pub pulls: Vec<u64>,
    pub intervals: Vec<ArmInterval>,
    pub ecr_last: f64,
    pub comm_rounds: u32,
}

/// Shared statistics after a round: per active arm, every agent's last
/// shared mean and the global count behind it.
pub type SharedTable = Vec<(usize, Vec<Option<QuantizedMean>>, u64)>;

pub struct SyncdAgent {
    p: Params,
    log_inv_delta: f64,
    rng: ChaCha8Rng,
    stage: Stage,
    clock: u64,
    last_arm: Option<usize>,
    last_phase: Phase,
    rank: usize,
    agents: usize,
    active: Vec<usize>,
    acc: Vec<usize>,
    rej: Vec<usize>,
    n: Vec<u64>,
    x: Vec<u64>,
    n_last: Vec<u64>,
    x_last: Vec<u64>,
    pulls: Vec<u64>,
    pulls_last: Vec<u64>,
    shared: Vec<Vec<Option<QuantizedMean>>>,
    ecr_last: f64,
    pending_acc: Vec<usize>,
    pending_rej: Vec<usize>,
    comm_rounds: u32,
    comma_rounds: u32,
    messages: Vec<MessageRecord>,
    init_steps: u64,
}

impl SyncdAgent {
    /// `id` only seeds the agent's private randomness; the agent never
    /// learns it.
    pub fn new(p: Params, master_seed: u64, id: usize) -> Self {
        let k = p.arms;
        SyncdAgent {
            p,
            log_inv_delta: p.log_inv_delta(),
            rng: agent_stream(master_seed, id),
            stage: Stage::Init(InitMachine::new(k)),
            clock: 0,
            last_arm: None,
            last_phase: Phase::Init,
            rank: 0,
            agents: 0,
            active: Vec::new(),
            acc: Vec::new(),
            rej: Vec::new(),
            n: vec![0; k],
            x: vec![0; k],
            n_last: vec![0; k],
            x_last: vec![0; k],
            pulls: vec![0; k],
            pulls_last: vec![0; k],
            shared: Vec::new(),
            ecr_last: 1.0,
            pending_acc: Vec::new(),
            pending_rej: Vec::new(),
            comm_rounds: 0,
            comma_rounds: 0,
            messages: Vec::new(),
            init_steps: 0,
        }
    }

    pub fn is_initialized(&self) -> bool {
        !matches!(self.stage, Stage::Init(_))
    }

    pub fn init_result(&self) -> Option<(usize, usize)> {
        self.is_initialized().then_some((self.rank, self.agents))
    }

    pub fn init_steps(&self) -> u64 {
        self.init_steps
    }

    pub fn accepted(&self) -> &[usize] {
        &self.acc
    }

    pub fn rejected(&self) -> &[usize] {
        &self.rej
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn comm_rounds(&self) -> u32 {
        self.comm_rounds
    }

    pub fn marking_rounds(&self) -> u32 {
        self.comma_rounds
    }

    pub fn messages(&self) -> &[MessageRecord] {
        &self.messages
    }

    pub fn shared_table(&self) -> SharedTable {
        self.active.iter().map(|&k| (k, self.shared.iter().map(|row| row[k]).collect(), self.pulls_last[k])).collect()
    }

    fn remaining(&self) -> usize {
        self.agents - self.acc.len()
    }

    fn estimate_inputs(&self, k: usize) -> EstimateInputs {
        let per_agent = self.pulls_last[k] / self.agents.max(1) as u64;
        let shared_sum = self
            .shared
            .iter()
            .enumerate()
            .filter_map(|(r, row)| {
                let n = if r == self.rank { self.n_last[k] } else { per_agent };
                row[k].map(|q| n as f64 * q.value())
            })
            .sum();
        EstimateInputs {
            shared_sum,
            shared_pulls: self.pulls_last[k],
            own_x: self.x[k],
            own_x_last: self.x_last[k],
            own_n: self.n[k],
            own_n_last: self.n_last[k],
        }
    }

    pub fn intervals(&self) -> Result<Vec<ArmInterval>, AgentError> {
        self.active
            .iter()
            .map(|&k| {
                let est = self.estimate_inputs(k).estimate().ok_or(StatsError::NoSamples(k))?;
                Ok(ArmInterval::new(k, est, radius(self.p.beta, self.log_inv_delta, self.pulls[k])))
            })
            .collect()
    }

    pub fn snapshot(&self) -> AgentSnapshot {
        AgentSnapshot {
            step: self.clock,
            rank: self.rank,
            agents: self.agents,
            phase: self.last_phase,
            active: self.active.clone(),
            accepted: self.acc.clone(),
            rejected: self.rej.clone(),
            pulls: self.pulls.clone(),
            intervals: if self.pulls.iter().any(|&n| n > 0) { self.intervals().unwrap_or_default() } else { vec![] },
            ecr_last: self.ecr_last,
            comm_rounds: self.comm_rounds,
        }
    }

    fn arm_at(&self, rank: usize, step: usize) -> Result<usize, ScheduleError> {
        let m = self.agents;
        scheduled_arm(rank, step % m, step / m, m, &self.active, &self.acc, self.remaining())
    }

    fn finish_init(&mut self, r: InitResult) {
        self.rank = r.rank;
        self.agents = r.agents;
        self.init_steps = self.clock;
        self.active = (0..self.p.arms).collect();
        self.shared = vec![vec![None; self.p.arms]; r.agents];
        self.start_phase();
    }

    fn start_phase(&mut self) {
        if self.remaining() == 0 {
            self.stage = Stage::Exploit { step: 0 };
            return;
        }
        let signalling = self.agents > 1 && !(self.pending_acc.is_empty() && self.pending_rej.is_empty());
        self.stage = Stage::Explore(Explore {
            step: 0,
            cycles: self.active.len(),
            signalling,
            heard: false,
            buffer: Vec::with_capacity(self.agents),
        });
    }

    fn record_sample(&mut self, arm: usize, reward: u8) {
        self.n[arm] += 1;
        self.x[arm] += reward as u64;
    }

    fn end_phase(&mut self) -> Result<(), AgentError> {
        let inc = (self.agents * self.remaining()) as u64;
        for &k in &self.active {
            self.pulls[k] += inc;
            debug_assert_eq!(self.n[k] * self.agents as u64, self.pulls[k]);
        }
        let n = self.pulls[self.active[0]];
        if self.active.iter().any(|&k| self.pulls[k] != n) {
            return Err(AgentError::Inconsistent("active arms with unequal pull counts".into()));
        }
        let now = ecr(self.log_inv_delta, n);
        if ecr_trigger(now, self.ecr_last, self.p.beta) {
            self.ecr_last = now;
            return self.start_comm();
        }
        let (acc, rej) = classify(&self.intervals()?, self.remaining())?;
        if self.agents == 1 {
            self.apply(acc, rej);
        } else {
            self.pending_acc = acc;
            self.pending_rej = rej;
        }
        self.start_phase();
        Ok(())
    }

    fn start_comm(&mut self) -> Result<(), AgentError> {
        let mut slots = Vec::with_capacity(self.active.len());
        let mut outgoing = Vec::with_capacity(self.active.len());
        for &k in &self.active {
            self.n_last[k] = self.n[k];
            self.x_last[k] = self.x[k];
            self.pulls_last[k] = self.pulls[k];
            let cur = quantize(self.x[k] as f64 / self.n[k] as f64, self.pulls[k])?;
            let prev = self.shared[self.rank][k];
            let msg = make_delta(&cur, prev.as_ref())?;
            let encoding = if prev.is_some() { Encoding::Delta } else { Encoding::Full };
            slots.push(ArmSlot { arm: k, encoding, bits: cur.bits, pulls: self.pulls[k] });
            outgoing.push(msg);
            self.shared[self.rank][k] = Some(cur);
        }
        let anchors = Anchors::new(&self.active, self.p.arms);
        let round = CommRound::new(self.comm_rounds, self.rank, self.agents, anchors, slots, outgoing);
        if round.is_done() {
            return self.finish_comm(round);
        }
        self.stage = Stage::Comm(round);
        Ok(())
    }

    fn finish_comm(&mut self, round: CommRound) -> Result<(), AgentError> {
        for sender in (0..self.agents).filter(|&s| s != self.rank) {
            for (slot, msg) in round.slots().iter().zip(round.received_from(sender)) {
                let msg = msg.ok_or(CodecError::Desync { step: self.clock })?;
                let prev = self.shared[sender][slot.arm];
                self.shared[sender][slot.arm] = Some(msg.reconstruct(prev.as_ref(), self.pulls_last[slot.arm])?);
            }
        }
        self.messages.extend_from_slice(round.log());
        self.comm_rounds += 1;
        let (acc, rej) = classify(&self.intervals()?, self.remaining())?;
        self.apply(acc, rej);
        self.start_phase();
        Ok(())
    }

    fn start_comm_a(&mut self) {
        let marks = [&self.pending_acc, &self.pending_rej]
            .iter()
            .map(|set| self.active.iter().map(|k| set.contains(k)).collect())
            .collect();
        let anchors = Anchors::new(&self.active, self.p.arms);
        self.stage = Stage::CommA(CommARound::new(self.rank, self.agents, anchors, marks));
    }

    fn finish_comm_a(&mut self, round: &CommARound) {
        let union = round.union();
        let pick = |mode: usize| -> Vec<usize> {
            self.active.iter().zip(&union[mode]).filter(|(_, &m)| m).map(|(&k, _)| k).collect()
        };
        let (acc, rej) = (pick(0), pick(1));
        // arms marked both ways by different agents stay active
        let acc: Vec<usize> = acc.iter().copied().filter(|k| !rej.contains(k)).collect();
        let rej: Vec<usize> = rej.into_iter().filter(|k| !union[0][self.pos(*k)]).collect();
        self.pending_acc.clear();
        self.pending_rej.clear();
        self.comma_rounds += 1;
        self.apply(acc, rej);
        self.start_phase();
    }

    fn pos(&self, k: usize) -> usize {
        self.active.iter().position(|&a| a == k).expect("active arm")
    }

    /// Moves decided arms out of the active set, never accepting more
    /// arms than there are free agents and never leaving fewer active arms
    /// than free agents.
    fn apply(&mut self, acc: Vec<usize>, rej: Vec<usize>) {
        for k in acc.into_iter().take(self.remaining()) {
            self.active.retain(|&a| a != k);
            self.acc.push(k);
        }
        for k in rej {
            if self.active.len() > self.remaining() && self.active.contains(&k) {
                self.active.retain(|&a| a != k);
                self.rej.push(k);
            }
        }
        if self.active.len() == self.remaining() {
            self.acc.append(&mut self.active);
        }
    }
}

impl Agent for SyncdAgent {
    fn act(&mut self) -> (Action, Phase) {
        let (arm, phase) = match &mut self.stage {
            Stage::Init(m) => (m.arm(&mut self.rng), Phase::Init),
            Stage::Explore(e) => {
                let m = self.agents;
                let (step, signal) = (e.step, e.signalling && e.step < m - 1);
                if signal {
                    let target = (self.rank + step + 1) % m;
                    (self.arm_at(target, step).expect("valid schedule"), Phase::CommA)
                } else {
                    (self.arm_at(self.rank, step).expect("valid schedule"), Phase::Explore)
                }
            }
            Stage::Comm(r) => (r.arm(), Phase::Comm),
            Stage::CommA(r) => (r.arm(), Phase::CommA),
            Stage::Exploit { step } => {
                let step = *step;
                (self.arm_at(self.rank, step).expect("valid schedule"), Phase::Exploit)
            }
        };
        self.last_arm = Some(arm);
        self.last_phase = phase;
        (Action::Pull(arm), phase)
    }

    fn observe(&mut self, obs: Observation) -> Result<(), AgentError> {
        self.clock += 1;
        let arm = self.last_arm.take().expect("observe without act");
        let stage = std::mem::replace(&mut self.stage, Stage::Exploit { step: 0 });
        match stage {
            Stage::Init(mut m) => match m.observe(obs.collision) {
                Some(r) => self.finish_init(r),
                None => self.stage = Stage::Init(m),
            },
            Stage::Explore(mut e) => {
                let m = self.agents;
                let first_cycle = e.step < m;
                let exploring = self.active.contains(&arm) && self.last_phase == Phase::Explore;
                if first_cycle {
                    e.heard |= obs.collision;
                    if exploring {
                        e.buffer.push((arm, obs.reward));
                    }
                } else if obs.collision {
                    return Err(AgentError::UnexpectedCollision(self.clock));
                } else if exploring {
                    self.record_sample(arm, obs.reward);
                }
                e.step += 1;
                if e.step == m {
                    if e.signalling || e.heard {
                        self.start_comm_a();
                        return Ok(());
                    }
                    for (k, r) in std::mem::take(&mut e.buffer) {
                        self.record_sample(k, r);
                    }
                }
                if e.step == m * e.cycles {
                    return self.end_phase();
                }
                self.stage = Stage::Explore(e);
            }
            Stage::Comm(mut r) => {
                if r.observe(obs.collision)? {
                    return self.finish_comm(r);
                }
                self.stage = Stage::Comm(r);
            }
            Stage::CommA(mut r) => {
                if r.observe(obs.collision) {
                    self.finish_comm_a(&r);
                } else {
                    self.stage = Stage::CommA(r);
                }
            }
            Stage::Exploit { step } => {
                if obs.collision {
                    return Err(AgentError::UnexpectedCollision(self.clock));
                }
                self.stage = Stage::Exploit { step: step + 1 };
            }
        }
        Ok(())
    }
}
