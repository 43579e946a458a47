//! CSV and JSON files written for an experiment.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::runner::{ExperimentResult, SeedResult};

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> OutputError + '_ {
    move |source| OutputError::Io { path: path.display().to_string(), source }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), OutputError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io(path))?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), OutputError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(io(path))
}

#[derive(Serialize)]
struct TraceRow {
    t: u64,
    agent: usize,
    arm: Option<u16>,
    collision: bool,
    reward: u8,
    phase: &'static str,
    active: bool,
}

fn write_trace(dir: &Path, run: &SeedResult) -> Result<(), OutputError> {
    let Some(out) = &run.output else { return Ok(()) };
    let seed = run.record.seed;
    let m = out.ledger.agents;
    let rows = out.ledger.rows.iter().enumerate().map(|(i, r)| TraceRow {
        t: (i / m) as u64 + 1,
        agent: i % m,
        arm: r.arm,
        collision: r.collision,
        reward: r.reward,
        phase: r.phase.as_str(),
        active: r.active,
    });
    write_csv(&dir.join(format!("trace_seed{seed}.csv")), rows)?;
    write_csv(&dir.join(format!("messages_seed{seed}.csv")), out.messages.iter())?;
    let path = dir.join(format!("snapshots_seed{seed}.jsonl"));
    let mut w = BufWriter::new(File::create(&path).map_err(io(&path))?);
    for s in &out.snapshots {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n").map_err(io(&path))?;
    }
    w.flush().map_err(io(&path))
}

/// Writes `runs.csv`, `curves.csv`, `summary.csv`, `spec.normalized.json`,
/// `failures.json` when a seed failed, and the per-seed traces when asked.
pub fn write_experiment(dir: &Path, result: &ExperimentResult) -> Result<(), OutputError> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    write_json(&dir.join("spec.normalized.json"), &result.spec)?;
    write_csv(&dir.join("runs.csv"), result.records())?;
    write_csv(&dir.join("curves.csv"), result.curves())?;
    write_csv(&dir.join("summary.csv"), result.summary())?;
    let failures = dir.join("failures.json");
    if result.failures.is_empty() {
        if failures.exists() {
            fs::remove_file(&failures).map_err(io(&failures))?;
        }
    } else {
        write_json(&failures, &result.failures)?;
    }
    if result.spec.trace {
        for run in &result.runs {
            write_trace(dir, run)?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct SweepCurveRow<'a> {
    param: &'a str,
    value: f64,
    t: u64,
    metric: &'a str,
    mean: f64,
    std: f64,
}

#[derive(Serialize)]
struct SweepSummaryRow<'a> {
    param: &'a str,
    value: f64,
    metric: &'a str,
    mean: f64,
    std: f64,
    min: f64,
    max: f64,
}

/// Writes one sub-directory per value plus long-format `sweep_curves.csv`
/// and `sweep_summary.csv` keyed by the parameter value.
pub fn write_sweep(dir: &Path, param: &str, results: &[(f64, ExperimentResult)]) -> Result<(), OutputError> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut curves = Vec::new();
    let mut summary = Vec::new();
    for (value, r) in results {
        write_experiment(&dir.join(format!("{param}={value}")), r)?;
        let c = r.curves();
        curves.extend(c.into_iter().map(|c| (*value, c)));
        summary.extend(r.summary().into_iter().map(|s| (*value, s)));
    }
    write_csv(
        &dir.join("sweep_curves.csv"),
        curves.iter().map(|(value, c)| SweepCurveRow {
            param,
            value: *value,
            t: c.t,
            metric: &c.metric,
            mean: c.mean,
            std: c.std,
        }),
    )?;
    write_csv(
        &dir.join("sweep_summary.csv"),
        summary.iter().map(|(value, s)| SweepSummaryRow {
            param,
            value: *value,
            metric: &s.metric,
            mean: s.mean,
            std: s.std,
            min: s.min,
            max: s.max,
        }),
    )
}
