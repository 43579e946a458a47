use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mmab_harness::output::{write_experiment, write_json, write_sweep};
use mmab_harness::{run_experiment, sweep, Algorithm, ExperimentResult, ExperimentSpec, Seeds, SweepParam};

/// Multi-player bandit experiments on a collision channel.
#[derive(Parser)]
#[command(name = "mmab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of an experiment and write the result files.
    Run(Overrides),
    /// Run the experiment once per value of a parameter.
    Sweep {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long, value_enum)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Check a config and print it with every default filled in.
    Validate {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Overrides {
    /// JSON experiment spec; defaults to the reference experiment.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of seeds, counted from the master seed.
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    horizon: Option<u64>,
    #[arg(long, value_enum)]
    algorithm: Option<Algorithm>,
    /// Activation periods, one per agent.
    #[arg(long, value_delimiter = ',')]
    periods: Option<Vec<u64>>,
    /// Also write per-step traces, message logs and snapshots.
    #[arg(long)]
    trace: bool,
    #[arg(long, env = "MMAB_OUT_DIR")]
    out: Option<PathBuf>,
}

fn load(config: Option<&Path>) -> Result<ExperimentSpec, String> {
    match config {
        None => Ok(ExperimentSpec::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            ExperimentSpec::from_json(&text).map_err(|e| format!("{}: {e}", p.display()))
        }
    }
}

impl Overrides {
    fn spec(&self) -> Result<(ExperimentSpec, PathBuf), String> {
        let mut s = load(self.config.as_deref())?;
        if let Some(n) = self.seeds {
            s.seeds = Seeds::Count(n);
        }
        if let Some(v) = self.seed {
            s.seed = v;
        }
        if let Some(v) = self.beta {
            s.beta = v;
        }
        if let Some(v) = self.horizon {
            s.horizon = v;
        }
        if let Some(v) = self.algorithm {
            s.algorithm = v;
        }
        if let Some(v) = &self.periods {
            s.periods = Some(v.clone());
        }
        s.trace |= self.trace;
        let out = self.out.clone().or_else(|| s.out_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
        Ok((s, out))
    }
}

fn report(r: &ExperimentResult, dir: &Path) -> bool {
    let summary = r.summary();
    let get = |name: &str| summary.iter().find(|s| s.metric == name).map_or(f64::NAN, |s| s.mean);
    println!(
        "{} runs, {} failed; regret {:.1}, individual {:.1}, comm rounds {:.1}; written to {}",
        r.runs.len() + r.failures.len(),
        r.failures.len(),
        get("regret"),
        get("individual_regret"),
        get("comm_rounds"),
        dir.display()
    );
    for f in &r.failures {
        eprintln!("seed {}: {} failure: {}", f.seed, f.kind, f.detail);
    }
    r.is_clean()
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<bool, String> {
    match cli.command {
        Command::Validate { config } => {
            let s = load(config.as_deref())?.normalize().map_err(|e| e.to_string())?;
            println!("{}", serde_json::to_string_pretty(&s).map_err(|e| e.to_string())?);
            Ok(true)
        }
        Command::Run(o) => {
            let (spec, dir) = o.spec()?;
            let r = run_experiment(&spec).map_err(|e| e.to_string())?;
            write_experiment(&dir, &r).map_err(|e| e.to_string())?;
            Ok(report(&r, &dir))
        }
        Command::Sweep { overrides, param, values } => {
            let (spec, dir) = overrides.spec()?;
            let results = sweep(&spec, param, &values).map_err(|e| e.to_string())?;
            let name = serde_json::to_value(param).map_err(|e| e.to_string())?;
            let name = name.as_str().unwrap_or("param");
            write_sweep(&dir, name, &results).map_err(|e| e.to_string())?;
            let failures: Vec<_> = results.iter().flat_map(|(_, r)| r.failures.iter()).collect();
            if !failures.is_empty() {
                write_json(&dir.join("failures.json"), &failures).map_err(|e| e.to_string())?;
            }
            let mut clean = true;
            for (v, r) in &results {
                print!("{name}={v}: ");
                clean &= report(r, &dir.join(format!("{name}={v}")));
            }
            Ok(clean)
        }
    }
}
