//! Experiment runner for the multi-player bandit simulator: spec parsing,
//! parallel multi-seed runs, parameter sweeps and CSV output.

pub mod output;
pub mod runner;
pub mod spec;

pub use runner::{run_experiment, sweep, ExperimentResult, Failure, RunRecord, SweepParam};
pub use spec::{Algorithm, ExperimentSpec, Means, Seeds, SpecError};
