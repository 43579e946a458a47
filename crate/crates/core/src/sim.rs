//! Lockstep drivers that play agents against the environment.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asynch::{ActivationSchedule, AsyncAgent};
use crate::codec::MessageRecord;
use crate::env::{Action, BanditConfig, BanditEnv, EnvError};
use crate::metrics::{LedgerRow, RegretLedger};
use crate::syncd::init::init_watchdog;
use crate::syncd::{Agent, AgentError, AgentSnapshot, Params, SyncdAgent};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("agent {agent} failed at step {t}: {source}")]
    Agent { agent: usize, t: u64, source: AgentError },
    #[error("initialization did not finish within {0} steps")]
    InitWatchdog(u64),
    #[error("invalid activation schedule: {0}")]
    Schedule(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOptions {
    /// Compare every agent's shared table after each statistics round.
    pub check_tables: bool,
    /// Record agent snapshots whenever the decided sets or round counters change.
    pub snapshots: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: u64,
    pub agent: usize,
    pub state: AgentSnapshot,
}

/// Everything a finished run leaves behind.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub ledger: RegretLedger,
    pub messages: Vec<MessageRecord>,
    pub init_steps: Option<u64>,
    /// Per agent: learned rank and number of agents, if initialization finished.
    pub init: Vec<Option<(usize, usize)>>,
    pub comm_rounds: u32,
    pub marking_rounds: u32,
    /// Per agent, in acceptance order (sorted order for the asynchronous variant).
    pub accepted: Vec<Vec<usize>>,
    pub table_checks: u32,
    pub table_mismatches: u32,
    pub snapshots: Vec<Snapshot>,
    /// Step at which the asynchronous agents finished sorting.
    pub sorted_at: Option<u64>,
}

fn agent_err(agent: usize, t: u64) -> impl FnOnce(AgentError) -> SimError {
    move |source| SimError::Agent { agent, t, source }
}

pub fn run_syncd(cfg: &BanditConfig, params: Params, opts: RunOptions) -> Result<RunOutput, SimError> {
    let mut env = BanditEnv::new(cfg.clone())?;
    env.set_recording(false);
    let m = cfg.agents;
    let mut agents: Vec<SyncdAgent> = (0..m).map(|id| SyncdAgent::new(params, cfg.seed, id)).collect();
    let mut ledger = RegretLedger::new(m, cfg.means.clone());
    ledger.rows.reserve(cfg.horizon as usize * m);
    let watchdog = init_watchdog(cfg.arms, m);
    let mut actions = vec![Action::Idle; m];
    let mut phases = Vec::with_capacity(m);
    let (mut table_checks, mut table_mismatches) = (0, 0);
    let mut seen_rounds = 0;
    let mut snapshots = Vec::new();
    let mut marker = None;
    for t in 1..=cfg.horizon {
        phases.clear();
        for (a, agent) in actions.iter_mut().zip(agents.iter_mut()) {
            let (action, phase) = agent.act();
            *a = action;
            phases.push(phase);
        }
        let obs = env.step(&actions)?;
        for i in 0..m {
            ledger.push(LedgerRow {
                arm: actions[i].arm().map(|k| k as u16),
                collision: obs[i].collision,
                reward: obs[i].reward,
                phase: phases[i],
                active: true,
            });
        }
        let obs = obs.to_vec();
        for (i, (agent, o)) in agents.iter_mut().zip(obs).enumerate() {
            agent.observe(o).map_err(agent_err(i, t))?;
        }
        if t == watchdog && !agents.iter().all(SyncdAgent::is_initialized) {
            return Err(SimError::InitWatchdog(watchdog));
        }
        if opts.check_tables && agents[0].comm_rounds() > seen_rounds {
            seen_rounds = agents[0].comm_rounds();
            table_checks += 1;
            let reference = agents[0].shared_table();
            if agents.iter().any(|a| a.comm_rounds() != seen_rounds || a.shared_table() != reference) {
                table_mismatches += 1;
            }
        }
        if opts.snapshots {
            let a = &agents[0];
            let now = (a.is_initialized(), a.comm_rounds(), a.marking_rounds(), a.accepted().len(), a.rejected().len());
            if marker != Some(now) {
                marker = Some(now);
                snapshots.extend(agents.iter().enumerate().map(|(i, a)| Snapshot { t, agent: i, state: a.snapshot() }));
            }
        }
    }
    let init: Vec<Option<(usize, usize)>> = agents.iter().map(SyncdAgent::init_result).collect();
    Ok(RunOutput {
        ledger,
        messages: agents.iter().flat_map(|a| a.messages().iter().copied()).collect(),
        init_steps: agents.iter().all(SyncdAgent::is_initialized).then(|| agents[0].init_steps()),
        init,
        comm_rounds: agents[0].comm_rounds(),
        marking_rounds: agents[0].marking_rounds(),
        accepted: agents.iter().map(|a| a.accepted().to_vec()).collect(),
        table_checks,
        table_mismatches,
        snapshots,
        sorted_at: None,
    })
}

pub fn run_async(cfg: &BanditConfig, params: Params, periods: &[u64], opts: RunOptions) -> Result<RunOutput, SimError> {
    if periods.len() != cfg.agents {
        return Err(SimError::Schedule(format!("{} periods for {} agents", periods.len(), cfg.agents)));
    }
    let schedule = ActivationSchedule::new(periods.to_vec()).map_err(SimError::Schedule)?;
    let mut env = BanditEnv::new(cfg.clone())?;
    env.set_recording(false);
    let m = cfg.agents;
    let mut agents: Vec<AsyncAgent> = (0..m).map(|id| AsyncAgent::new(params, schedule.clone(), id)).collect();
    let mut ledger = RegretLedger::new(m, cfg.means.clone());
    ledger.rows.reserve(cfg.horizon as usize * m);
    let mut actions = vec![Action::Idle; m];
    let mut phases = Vec::with_capacity(m);
    let (mut table_checks, mut table_mismatches) = (0, 0);
    let mut seen_rounds = 0;
    for t in 1..=cfg.horizon {
        phases.clear();
        for (a, agent) in actions.iter_mut().zip(agents.iter_mut()) {
            let (action, phase) = agent.act();
            *a = action;
            phases.push(phase);
        }
        let obs = env.step(&actions)?;
        for i in 0..m {
            ledger.push(LedgerRow {
                arm: actions[i].arm().map(|k| k as u16),
                collision: obs[i].collision,
                reward: obs[i].reward,
                phase: phases[i],
                active: schedule.is_active(i, t),
            });
        }
        let obs = obs.to_vec();
        for (i, (agent, o)) in agents.iter_mut().zip(obs).enumerate() {
            agent.observe(o).map_err(agent_err(i, t))?;
        }
        let rounds = agents[0].comm_rounds() + agents[0].forced_rounds();
        if opts.check_tables && rounds > seen_rounds {
            seen_rounds = rounds;
            table_checks += 1;
            let reference = agents[0].shared_table();
            if agents.iter().any(|a| a.comm_rounds() + a.forced_rounds() != rounds || a.shared_table() != reference) {
                table_mismatches += 1;
            }
        }
    }
    Ok(RunOutput {
        ledger,
        messages: agents.iter().flat_map(|a| a.messages().iter().copied()).collect(),
        init_steps: None,
        init: (0..m).map(|i| Some((i, m))).collect(),
        comm_rounds: agents[0].comm_rounds() + agents[0].forced_rounds(),
        marking_rounds: agents[0].marking_rounds(),
        accepted: agents.iter().map(|a| a.sorted().map(<[usize]>::to_vec).unwrap_or_default()).collect(),
        table_checks,
        table_mismatches,
        snapshots: Vec::new(),
        sorted_at: agents.iter().map(AsyncAgent::sorted_at).max().flatten(),
    })
}
