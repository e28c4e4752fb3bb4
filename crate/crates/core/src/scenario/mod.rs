//! Scenario configuration, the three-phase runner, artifacts and sweeps.
//!
//! A scenario runs pre-attack (baseline), attack, and restore phases in a
//! single simulation: the adversary is inserted by ARP poisoning at
//! `attack_start_s`, held by periodic re-poisoning, and removed with
//! corrective ARP replies at `attack_stop_s`. Runs are deterministic:
//! identical configuration and seed produce byte-identical artifacts.

mod artifacts;
mod config;
mod runner;
mod sweep;

pub use artifacts::{
    build_metrics, parse_capture_file, render_capture_file, render_comparison,
    render_metrics_text, summarize_run, write_artifacts, MetricsBundle, RunArtifacts,
};
pub use config::{
    apply_override, EndpointParams, IdsParams, NetParams, ScenarioConfig, ScenarioError,
};
pub use runner::{RunOutcome, Runner, ADVERSARY_NODE, MASTER_NODE, ROUTER_NODE};
pub use sweep::{evaluation_matrix, render_sweep_table, run_sweep, SweepCell, SweepRow, SweepSpec};

use std::path::Path;

/// Loads, validates, runs and writes one scenario.
pub fn run_scenario_file(
    path: &Path,
    out_dir: &Path,
    seed_override: Option<u64>,
    overrides: &[(String, String)],
) -> Result<(RunOutcome, RunArtifacts), ScenarioError> {
    let mut cfg = ScenarioConfig::from_file(path, overrides)?;
    if let Some(seed) = seed_override {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let outcome = Runner::new(cfg.clone())?.execute();
    let artifacts = write_artifacts(&cfg, &outcome, out_dir)?;
    Ok((outcome, artifacts))
}

/// Runs an in-memory configuration and writes artifacts.
pub fn run_config(
    cfg: &ScenarioConfig,
    out_dir: &Path,
) -> Result<(RunOutcome, RunArtifacts), ScenarioError> {
    cfg.validate()?;
    let outcome = Runner::new(cfg.clone())?.execute();
    let artifacts = write_artifacts(cfg, &outcome, out_dir)?;
    Ok((outcome, artifacts))
}
