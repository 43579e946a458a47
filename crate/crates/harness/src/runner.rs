//! Runs every seed of an experiment and aggregates the results.

use mmab_core::asynch::ActivationSchedule;
use mmab_core::metrics::{comm_stats, lower_bound_constant, payload_bound, theorem1_reference, CurvePoint, GapProfile};
use mmab_core::sim::{run_async, run_syncd, RunOptions, RunOutput, SimError};
use mmab_core::syncd::Params;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::spec::{Algorithm, ExperimentSpec, SpecError};

/// Relative tolerance of the regret decomposition check.
pub const DECOMPOSITION_TOL: f64 = 1e-9;

/// One line of `runs.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub config_hash: String,
    pub algorithm: Algorithm,
    pub regret: f64,
    pub individual_regret: f64,
    pub realized_regret: f64,
    pub regret_init: f64,
    pub regret_comm: f64,
    pub regret_explore: f64,
    pub init_steps: Option<u64>,
    pub comm_rounds: u32,
    pub marking_rounds: u32,
    pub messages: usize,
    pub total_bits: usize,
    pub mean_delta_bits: f64,
    pub max_delta_bits: usize,
    pub round_bound: f64,
    pub payload_bound: f64,
    /// Group-regret upper bound for synchronous runs.
    pub theorem1_reference: Option<f64>,
    /// Lower-bound constant for asynchronous runs.
    pub lower_bound_constant: Option<f64>,
    /// Accepted arms, `;`-separated, in the order the agents hold them.
    pub accepted: String,
    pub found_top: bool,
    pub sorted_at: Option<u64>,
    pub exploit_mismatches: u64,
    pub stray_collisions: usize,
    pub table_checks: u32,
    pub table_mismatches: u32,
    pub decomposition_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub seed: u64,
    pub kind: String,
    pub detail: String,
}

/// A finished run with everything needed for the per-seed outputs.
pub struct SeedResult {
    pub record: RunRecord,
    pub curve: Vec<CurvePoint>,
    pub output: Option<RunOutput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub t: u64,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

pub struct ExperimentResult {
    pub spec: ExperimentSpec,
    pub runs: Vec<SeedResult>,
    pub failures: Vec<Failure>,
}

/// Named numeric column of a row type.
type Column<T> = (&'static str, fn(&T) -> f64);

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

fn top_arms(means: &[f64], m: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..means.len()).collect();
    order.sort_by(|&a, &b| means[b].partial_cmp(&means[a]).unwrap().then(a.cmp(&b)));
    order.truncate(m);
    order
}

/// Plays a single seed and checks the run invariants.
pub fn run_seed(spec: &ExperimentSpec, seed: u64, keep_output: bool) -> Result<SeedResult, Failure> {
    let cfg = spec.bandit(seed);
    let params = Params { arms: spec.arms, horizon: spec.horizon, beta: spec.beta, delta: spec.delta_value() };
    let opts = RunOptions { check_tables: true, snapshots: spec.trace };
    let sim_err = |e: SimError| Failure { seed, kind: "simulation".into(), detail: e.to_string() };
    let out = match spec.algorithm {
        Algorithm::Syncd => run_syncd(&cfg, params, opts),
        Algorithm::Async => run_async(&cfg, params, spec.periods.as_deref().unwrap_or_default(), opts),
    }
    .map_err(sim_err)?;
    let l = &out.ledger;
    let regret = l.group_regret();
    let dec = l.decompose();
    let decomposition_error = (dec.total() - regret).abs() / regret.abs().max(1.0);
    let stats = comm_stats(l, &out.messages);
    let stray = l.stray_collisions();
    let (_, exploit_mismatches) = l.exploit_mismatches();
    let top = top_arms(&cfg.means, cfg.agents);
    let found_top = out.accepted.iter().all(|acc| {
        let mut a = acc.clone();
        a.sort_unstable();
        let mut t = top.clone();
        t.sort_unstable();
        a == t
    });
    let (theorem1, lower) = match spec.algorithm {
        Algorithm::Syncd => (Some(theorem1_reference(&cfg.means, cfg.agents, cfg.horizon, spec.beta, dec.init)), None),
        Algorithm::Async => {
            let sched = ActivationSchedule::new(spec.periods.clone().unwrap_or_default()).map_err(|e| Failure {
                seed,
                kind: "spec".into(),
                detail: e,
            })?;
            (None, Some(lower_bound_constant(&cfg.means, &sched.levels())))
        }
    };
    let record = RunRecord {
        seed,
        config_hash: spec.config_hash(),
        algorithm: spec.algorithm,
        regret,
        individual_regret: l.individual_regret(),
        realized_regret: l.realized_regret(),
        regret_init: dec.init,
        regret_comm: dec.comm,
        regret_explore: dec.explore,
        init_steps: out.init_steps,
        comm_rounds: out.comm_rounds,
        marking_rounds: out.marking_rounds,
        messages: stats.messages,
        total_bits: stats.total_bits,
        mean_delta_bits: stats.mean_delta_bits,
        max_delta_bits: stats.max_delta_bits,
        round_bound: GapProfile::new(&cfg.means, cfg.agents).comm_round_bound(spec.beta),
        payload_bound: payload_bound(spec.beta, cfg.agents),
        theorem1_reference: theorem1,
        lower_bound_constant: lower,
        accepted: out.accepted[0].iter().map(usize::to_string).collect::<Vec<_>>().join(";"),
        found_top,
        sorted_at: out.sorted_at,
        exploit_mismatches,
        stray_collisions: stray.len(),
        table_checks: out.table_checks,
        table_mismatches: out.table_mismatches,
        decomposition_error,
    };
    let invariant = |kind: &str, detail: String| Err(Failure { seed, kind: kind.into(), detail });
    if let Some(t) = stray.first() {
        return invariant("collision", format!("{} unexpected collision steps, first at t={t}", stray.len()));
    }
    if decomposition_error > DECOMPOSITION_TOL {
        return invariant("decomposition", format!("relative error {decomposition_error:e}"));
    }
    if out.table_mismatches > 0 {
        return invariant("agreement", format!("{} of {} rounds disagree", out.table_mismatches, out.table_checks));
    }
    if spec.algorithm == Algorithm::Async && exploit_mismatches > 0 {
        return invariant("exploitation", format!("{exploit_mismatches} exploitation steps off the optimal set"));
    }
    let every = (spec.horizon / spec.curve_points).max(1);
    let curve = l.curve(every);
    Ok(SeedResult { record, curve, output: keep_output.then_some(out) })
}

/// Runs every seed in parallel. Invalid specs are an error; failing seeds
/// are reported in `failures`.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult, SpecError> {
    let spec = spec.normalize()?;
    let seeds = spec.seed_list();
    let results: Vec<Result<SeedResult, Failure>> = seeds.par_iter().map(|&s| run_seed(&spec, s, spec.trace)).collect();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(r) => runs.push(r),
            Err(f) => failures.push(f),
        }
    }
    Ok(ExperimentResult { spec, runs, failures })
}

impl ExperimentResult {
    pub fn is_clean(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn records(&self) -> Vec<&RunRecord> {
        self.runs.iter().map(|r| &r.record).collect()
    }

    /// Mean and standard deviation of group and individual regret at each
    /// sampled step.
    pub fn curves(&self) -> Vec<CurveRow> {
        let Some(first) = self.runs.first() else { return Vec::new() };
        let mut rows = Vec::new();
        for (i, p) in first.curve.iter().enumerate() {
            let metrics: [Column<CurvePoint>; 2] = [("group", |c| c.group), ("individual", |c| c.individual)];
            for (metric, get) in metrics {
                let xs: Vec<f64> = self.runs.iter().map(|r| get(&r.curve[i])).collect();
                let (mean, std) = mean_std(&xs);
                rows.push(CurveRow { t: p.t, metric: metric.into(), mean, std });
            }
        }
        rows
    }

    pub fn summary(&self) -> Vec<SummaryRow> {
        let metrics: [Column<RunRecord>; 9] = [
            ("regret", |r| r.regret),
            ("individual_regret", |r| r.individual_regret),
            ("realized_regret", |r| r.realized_regret),
            ("regret_init", |r| r.regret_init),
            ("regret_comm", |r| r.regret_comm),
            ("regret_explore", |r| r.regret_explore),
            ("comm_rounds", |r| f64::from(r.comm_rounds)),
            ("mean_delta_bits", |r| r.mean_delta_bits),
            ("found_top", |r| f64::from(u8::from(r.found_top))),
        ];
        metrics
            .iter()
            .map(|(name, f)| {
                let xs: Vec<f64> = self.runs.iter().map(|r| f(&r.record)).collect();
                let (mean, std) = mean_std(&xs);
                let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
                let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                SummaryRow { metric: (*name).into(), mean, std, min, max }
            })
            .collect()
    }
}

/// Parameters a sweep can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// Spacing between consecutive means, starting from the largest mean.
    DeltaGap,
    Beta,
    Horizon,
}

impl SweepParam {
    pub fn apply(self, spec: &ExperimentSpec, value: f64) -> ExperimentSpec {
        let mut s = spec.clone();
        match self {
            SweepParam::DeltaGap => {
                let top = spec.means.resolve(spec.arms).into_iter().fold(f64::NEG_INFINITY, f64::max);
                s.means = crate::spec::Means::List((0..spec.arms).map(|i| top - value * i as f64).collect());
            }
            SweepParam::Beta => s.beta = value,
            SweepParam::Horizon => {
                s.horizon = value as u64;
                if spec.delta.is_none() {
                    s.delta = None;
                }
            }
        }
        s
    }
}

pub fn sweep(
    spec: &ExperimentSpec,
    param: SweepParam,
    values: &[f64],
) -> Result<Vec<(f64, ExperimentResult)>, SpecError> {
    values.iter().map(|&v| Ok((v, run_experiment(&param.apply(spec, v))?))).collect()
}
