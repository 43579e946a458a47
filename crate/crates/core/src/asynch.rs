//! Asynchronous variant with periodic activation.
//!
//! Agent `m` is active at step `t` (1-based) iff `t mod theta_m == 0`, so all
//! agents are active together exactly at multiples of `l = lcm(theta)`.
//! The activation profile is public: every agent can list the active set
//! of any step, ordered by agent index, and so knows its local index.
//!
//! Exploration phases are `K_t` sweeps of one activation cycle each; in
//! sweep `s` the active agent with local index `j` pulls `K_t[(j + s) mod K_t]`.
//! Anything that needs every agent on the channel (statistics rounds,
//! rejection marking) only advances on all-active steps; everyone idles
//! in between. Once only `M` arms remain and their intervals are strictly
//! ordered, the active agent with local index `j` pulls the `j`-th best.

use serde::{Deserialize, Serialize};

use crate::codec::{
    make_delta, quantize, Anchors, ArmSlot, CodecError, CommARound, CommRound, Encoding, MessageRecord, QuantizedMean,
};
use crate::env::{Action, Observation, Phase};
use crate::syncd::stats::{classify, ecr, ecr_trigger, radius, ArmInterval, EstimateInputs, StatsError};
use crate::syncd::{Agent, AgentError, Params, SharedTable};

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Periodic activation profile, one period per agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivationSchedule {
    pub periods: Vec<u64>,
}

impl ActivationSchedule {
    pub fn new(periods: Vec<u64>) -> Result<Self, String> {
        if periods.is_empty() {
            return Err("no agents".into());
        }
        if periods.contains(&0) {
            return Err("periods must be positive".into());
        }
        let s = ActivationSchedule { periods };
        if s.lcm() > 1 << 20 {
            return Err(format!("activation cycle of {} steps is too long", s.lcm()));
        }
        Ok(s)
    }

    pub fn agents(&self) -> usize {
        self.periods.len()
    }

    pub fn lcm(&self) -> u64 {
        self.periods.iter().fold(1, |acc, &p| acc / gcd(acc, p) * p)
    }

    pub fn is_active(&self, agent: usize, t: u64) -> bool {
        t.is_multiple_of(self.periods[agent])
    }

    /// Agents active at step `t`, in index order.
    pub fn active_set(&self, t: u64) -> Vec<usize> {
        (0..self.agents()).filter(|&m| self.is_active(m, t)).collect()
    }

    pub fn local_index(&self, agent: usize, t: u64) -> Option<usize> {
        self.is_active(agent, t).then(|| (0..agent).filter(|&m| self.is_active(m, t)).count())
    }

    /// Activations of `agent` in one cycle.
    pub fn activations_per_cycle(&self, agent: usize) -> u64 {
        self.lcm() / self.periods[agent]
    }

    /// Distinct positive numbers of simultaneously active agents.
    pub fn levels(&self) -> Vec<usize> {
        let mut lv: Vec<usize> = (1..=self.lcm()).map(|t| self.active_set(t).len()).filter(|&n| n > 0).collect();
        lv.sort_unstable();
        lv.dedup();
        lv
    }
}

/// The `M` remaining arms in decreasing order of estimate, provided every
/// pair of them is separated by its intervals.
pub fn sort_check(intervals: &[ArmInterval], agents: usize) -> Option<Vec<usize>> {
    if intervals.len() != agents {
        return None;
    }
    let mut iv = intervals.to_vec();
    iv.sort_by(|a, b| b.estimate.partial_cmp(&a.estimate).unwrap().then(a.arm.cmp(&b.arm)));
    let separated = iv.iter().enumerate().all(|(i, a)| iv[i + 1..].iter().all(|b| a.lcb > b.ucb));
    separated.then(|| iv.iter().map(|a| a.arm).collect())
}

#[derive(Debug, Clone)]
struct Explore {
    step: u64,
    sweeps: u64,
    signalling: bool,
    heard: bool,
    buffer: Vec<(usize, u8)>,
}

#[derive(Debug, Clone)]
enum Stage {
    Explore(Explore),
    Comm { round: CommRound, forced: bool },
    CommA(CommARound),
    Exploit,
}

pub struct AsyncAgent {
    p: Params,
    log_inv_delta: f64,
    schedule: ActivationSchedule,
    lcm: u64,
    rank: usize,
    agents: usize,
    clock: u64,
    stage: Stage,
    last: Option<(usize, Phase)>,
    active: Vec<usize>,
    rej: Vec<usize>,
    top: Vec<usize>,
    n: Vec<u64>,
    x: Vec<u64>,
    n_last: Vec<u64>,
    x_last: Vec<u64>,
    pulls: Vec<u64>,
    pulls_last: Vec<u64>,
    /// Inferred per-agent pull counts and their values at the last round.
    peer_pulls: Vec<Vec<u64>>,
    peer_pulls_last: Vec<Vec<u64>>,
    shared: Vec<Vec<Option<QuantizedMean>>>,
    ecr_last: f64,
    pending_rej: Vec<usize>,
    pending_sort: bool,
    comm_rounds: u32,
    forced_rounds: u32,
    marking_rounds: u32,
    messages: Vec<MessageRecord>,
    sorted_at: Option<u64>,
}

impl AsyncAgent {
    pub fn new(p: Params, schedule: ActivationSchedule, rank: usize) -> Self {
        let (k, m) = (p.arms, schedule.agents());
        let lcm = schedule.lcm();
        AsyncAgent {
            p,
            log_inv_delta: p.log_inv_delta(),
            schedule,
            lcm,
            rank,
            agents: m,
            clock: 0,
            stage: Stage::Explore(Explore {
                step: 0,
                sweeps: k as u64,
                signalling: false,
                heard: false,
                buffer: Vec::new(),
            }),
            last: None,
            active: (0..k).collect(),
            rej: Vec::new(),
            top: Vec::new(),
            n: vec![0; k],
            x: vec![0; k],
            n_last: vec![0; k],
            x_last: vec![0; k],
            pulls: vec![0; k],
            pulls_last: vec![0; k],
            peer_pulls: vec![vec![0; k]; m],
            peer_pulls_last: vec![vec![0; k]; m],
            shared: vec![vec![None; k]; m],
            ecr_last: 1.0,
            pending_rej: Vec::new(),
            pending_sort: false,
            comm_rounds: 0,
            forced_rounds: 0,
            marking_rounds: 0,
            messages: Vec::new(),
            sorted_at: None,
        }
    }

    pub fn sorted(&self) -> Option<&[usize]> {
        (!self.top.is_empty()).then_some(&self.top[..])
    }

    pub fn sorted_at(&self) -> Option<u64> {
        self.sorted_at
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn rejected(&self) -> &[usize] {
        &self.rej
    }

    pub fn comm_rounds(&self) -> u32 {
        self.comm_rounds
    }

    pub fn forced_rounds(&self) -> u32 {
        self.forced_rounds
    }

    pub fn marking_rounds(&self) -> u32 {
        self.marking_rounds
    }

    pub fn messages(&self) -> &[MessageRecord] {
        &self.messages
    }

    pub fn shared_table(&self) -> SharedTable {
        self.active.iter().map(|&k| (k, self.shared.iter().map(|row| row[k]).collect(), self.pulls_last[k])).collect()
    }

    fn estimate_inputs(&self, k: usize) -> EstimateInputs {
        let shared_sum = self
            .shared
            .iter()
            .enumerate()
            .filter_map(|(s, row)| row[k].map(|q| self.peer_pulls_last[s][k] as f64 * q.value()))
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

    fn start_phase(&mut self) {
        let signalling = self.agents > 1 && (!self.pending_rej.is_empty() || self.pending_sort);
        self.stage = Stage::Explore(Explore {
            step: 0,
            sweeps: self.active.len() as u64,
            signalling,
            heard: false,
            buffer: Vec::new(),
        });
    }

    /// Steps of a phase spent in the signalling window.
    fn window(&self) -> u64 {
        (self.agents as u64 - 1) * self.lcm
    }

    fn end_phase(&mut self) -> Result<(), AgentError> {
        let per_cycle: Vec<u64> = (0..self.agents).map(|m| self.schedule.activations_per_cycle(m)).collect();
        let total: u64 = per_cycle.iter().sum();
        for &k in &self.active {
            self.pulls[k] += total;
            for (m, c) in per_cycle.iter().enumerate() {
                self.peer_pulls[m][k] += c;
            }
            debug_assert_eq!(self.n[k], self.peer_pulls[self.rank][k]);
        }
        let n = self.pulls[self.active[0]];
        let now = ecr(self.log_inv_delta, n);
        if ecr_trigger(now, self.ecr_last, self.p.beta) {
            self.ecr_last = now;
            return self.start_comm(false);
        }
        let intervals = self.intervals()?;
        let (_, rej) = classify(&intervals, self.agents)?;
        let sorted = sort_check(&intervals, self.agents);
        if self.agents == 1 {
            self.apply_rejections(rej);
            if let Some(top) = sorted {
                self.begin_exploit(top);
                return Ok(());
            }
        } else {
            self.pending_rej = rej;
            self.pending_sort = sorted.is_some();
        }
        self.start_phase();
        Ok(())
    }

    fn start_comm(&mut self, forced: bool) -> Result<(), AgentError> {
        let mut slots = Vec::with_capacity(self.active.len());
        let mut outgoing = Vec::with_capacity(self.active.len());
        for &k in &self.active {
            self.n_last[k] = self.n[k];
            self.x_last[k] = self.x[k];
            self.pulls_last[k] = self.pulls[k];
            for m in 0..self.agents {
                self.peer_pulls_last[m][k] = self.peer_pulls[m][k];
            }
            let cur = quantize(self.x[k] as f64 / self.n[k] as f64, self.pulls[k])?;
            let prev = self.shared[self.rank][k];
            let encoding = if prev.is_some() { Encoding::Delta } else { Encoding::Full };
            outgoing.push(make_delta(&cur, prev.as_ref())?);
            slots.push(ArmSlot { arm: k, encoding, bits: cur.bits, pulls: self.pulls[k] });
            self.shared[self.rank][k] = Some(cur);
        }
        let anchors = Anchors::new(&self.active, self.p.arms);
        let round_id = self.comm_rounds + self.forced_rounds;
        let round = CommRound::new(round_id, self.rank, self.agents, anchors, slots, outgoing);
        if round.is_done() {
            return self.finish_comm(round, forced);
        }
        self.stage = Stage::Comm { round, forced };
        Ok(())
    }

    fn finish_comm(&mut self, round: CommRound, forced: bool) -> Result<(), AgentError> {
        for sender in (0..self.agents).filter(|&s| s != self.rank) {
            for (slot, msg) in round.slots().iter().zip(round.received_from(sender)) {
                let msg = msg.ok_or(CodecError::Desync { step: self.clock })?;
                let prev = self.shared[sender][slot.arm];
                self.shared[sender][slot.arm] = Some(msg.reconstruct(prev.as_ref(), self.pulls_last[slot.arm])?);
            }
        }
        self.messages.extend_from_slice(round.log());
        if forced {
            self.forced_rounds += 1;
        } else {
            self.comm_rounds += 1;
        }
        let intervals = self.intervals()?;
        let (_, rej) = classify(&intervals, self.agents)?;
        self.apply_rejections(rej);
        self.pending_rej.clear();
        self.pending_sort = false;
        match sort_check(&self.intervals()?, self.agents) {
            Some(top) => self.begin_exploit(top),
            None => self.start_phase(),
        }
        Ok(())
    }

    fn begin_exploit(&mut self, top: Vec<usize>) {
        self.top = top;
        self.sorted_at = Some(self.clock);
        self.stage = Stage::Exploit;
    }

    fn apply_rejections(&mut self, rej: Vec<usize>) {
        for k in rej {
            if self.active.len() > self.agents && self.active.contains(&k) {
                self.active.retain(|&a| a != k);
                self.rej.push(k);
            }
        }
    }

    /// Entered when a signal was seen: merge rejections if any can still
    /// happen, then settle the order with a statistics round.
    fn synchronize(&mut self) -> Result<(), AgentError> {
        if self.active.len() > self.agents {
            let marks = vec![self.active.iter().map(|k| self.pending_rej.contains(k)).collect()];
            let anchors = Anchors::new(&self.active, self.p.arms);
            self.stage = Stage::CommA(CommARound::new(self.rank, self.agents, anchors, marks));
            Ok(())
        } else {
            self.start_comm(true)
        }
    }

    fn finish_comm_a(&mut self, round: &CommARound) -> Result<(), AgentError> {
        let union = &round.union()[0];
        let rej: Vec<usize> = self.active.iter().zip(union).filter(|(_, &m)| m).map(|(&k, _)| k).collect();
        self.marking_rounds += 1;
        self.apply_rejections(rej);
        self.pending_rej.clear();
        if self.active.len() == self.agents {
            return self.start_comm(true);
        }
        self.pending_sort = false;
        self.start_phase();
        Ok(())
    }

    fn explore_arm(&self, e: &Explore, t: u64, agent: usize) -> Option<usize> {
        let j = self.schedule.local_index(agent, t)?;
        let sweep = (e.step / self.lcm) as usize;
        Some(self.active[(j + sweep) % self.active.len()])
    }
}

impl Agent for AsyncAgent {
    fn act(&mut self) -> (Action, Phase) {
        let t = self.clock + 1;
        let all_active = t.is_multiple_of(self.lcm);
        let me_active = self.schedule.is_active(self.rank, t);
        let (arm, phase) = match &self.stage {
            Stage::Explore(e) => {
                let sweep = e.step / self.lcm;
                if e.signalling && all_active && sweep + 1 < self.agents as u64 {
                    let target = (self.rank + sweep as usize + 1) % self.agents;
                    (self.explore_arm(e, t, target), Phase::CommA)
                } else if me_active {
                    (self.explore_arm(e, t, self.rank), Phase::Explore)
                } else {
                    (None, Phase::Explore)
                }
            }
            Stage::Comm { round, .. } => (all_active.then(|| round.arm()), Phase::Comm),
            Stage::CommA(round) => (all_active.then(|| round.arm()), Phase::CommA),
            Stage::Exploit => {
                let arm = self.schedule.local_index(self.rank, t).map(|j| self.top[j]);
                (arm, Phase::Exploit)
            }
        };
        self.last = arm.map(|a| (a, phase));
        (arm.map_or(Action::Idle, Action::Pull), phase)
    }

    fn observe(&mut self, obs: Observation) -> Result<(), AgentError> {
        self.clock += 1;
        let t = self.clock;
        let all_active = t.is_multiple_of(self.lcm);
        let last = self.last.take();
        let stage = std::mem::replace(&mut self.stage, Stage::Exploit);
        match stage {
            Stage::Explore(mut e) => {
                let in_window = e.step < self.window();
                if let Some((arm, phase)) = last {
                    let sample = phase == Phase::Explore;
                    if in_window {
                        e.heard |= obs.collision;
                        if sample {
                            e.buffer.push((arm, obs.reward));
                        }
                    } else if obs.collision {
                        return Err(AgentError::UnexpectedCollision(t));
                    } else if sample {
                        self.n[arm] += 1;
                        self.x[arm] += obs.reward as u64;
                    }
                }
                e.step += 1;
                if e.step == self.window() && self.agents > 1 {
                    if e.signalling || e.heard {
                        return self.synchronize();
                    }
                    for (k, r) in std::mem::take(&mut e.buffer) {
                        self.n[k] += 1;
                        self.x[k] += r as u64;
                    }
                }
                if e.step == e.sweeps * self.lcm {
                    return self.end_phase();
                }
                self.stage = Stage::Explore(e);
            }
            Stage::Comm { mut round, forced } => {
                if all_active && round.observe(obs.collision)? {
                    return self.finish_comm(round, forced);
                }
                self.stage = Stage::Comm { round, forced };
            }
            Stage::CommA(mut round) => {
                if all_active && round.observe(obs.collision) {
                    return self.finish_comm_a(&round);
                }
                self.stage = Stage::CommA(round);
            }
            Stage::Exploit => {
                if obs.collision {
                    return Err(AgentError::UnexpectedCollision(t));
                }
            }
        }
        Ok(())
    }
}
