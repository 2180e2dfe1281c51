//! Experiment engine: configuration, the active-learning loop, sweeps,
//! generation runs and file output.

mod config;
mod experiment;
mod generation;
mod output;
mod sweeps;

pub use config::{
    load_dataset, ArchConfig, DatasetSpec, DualityConfig, ExperimentConfig, GenerateConfig, SweepConfig,
};
pub use experiment::{
    al_round, evaluate, round_seed, run_cell, run_experiment, run_on_pool, write_outputs, CellMeta, CellResult,
    CurvePoint, ExperimentResult, MetricName, RoundOutcome, RunMeta,
};
pub use generation::{generate_on_pool, run_generation, GenerationOutcome};
pub use output::{mean_std, read_curves_csv, summarize, write_curves_csv, write_json, SummaryRow, CURVE_COLUMNS};
pub use sweeps::{
    sweep_clusters, sweep_clusters_on_pool, sweep_k_values, sweep_redundancy, sweep_redundancy_on_pool,
    ClusterSweep, RedundancyRow, RedundancySweep,
};

use crate::duality::{verify_suite, VerificationReport};
use crate::error::Result;

/// Runs the duality verification suite and writes `duality_report.json`.
pub fn verify_duality(config: &ExperimentConfig) -> Result<VerificationReport> {
    let d = &config.duality;
    let report = verify_suite(d.instances, d.seed, d.step, d.dual_trials)?;
    write_json(&config.output_dir.join("duality_report.json"), &report)?;
    Ok(report)
}
