//! Scenario runner and frame-inspection CLI.

mod inspect;

use anyhow::Context;
use clap::{Parser, Subcommand};
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use sublab_core::scenario::{
    render_sweep_table, run_scenario_file, run_sweep, summarize_run, ScenarioError, SweepSpec,
};

#[derive(Parser)]
#[command(
    name = "sublab",
    version,
    about = "Deterministic substation-network lab: DNP3 traffic, MiTM attacks, IDS and telemetry"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Override the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory for run artifacts.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    /// Override a scenario field by dotted path, e.g.
    /// `--override adversary.mask_acks=false`. Repeatable.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario file through the baseline/attack/restore phases
    /// and write its artifacts.
    Run {
        /// Scenario file (TOML).
        scenario: PathBuf,
    },
    /// Run a matrix of scenarios and print the retransmission/RTT table.
    Sweep {
        /// Sweep matrix file (TOML).
        matrix: PathBuf,
    },
    /// Decode a frame (hex octets) or summarize a capture file.
    Inspect {
        /// Hex octets ("05 64 ..." or compact) or a capture file path.
        input: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error:#}");
            let config_error = error.downcast_ref::<ScenarioError>().map(|e| {
                matches!(e, ScenarioError::ConfigInvalid(_) | ScenarioError::Parse(_))
            });
            match config_error {
                Some(true) => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}

fn parse_overrides(raw: &[String]) -> anyhow::Result<Vec<(String, String)>> {
    raw.iter()
        .map(|entry| {
            entry
                .split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| anyhow::anyhow!("--override expects KEY=VALUE, got {entry:?}"))
        })
        .collect()
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run { scenario } => {
            let overrides = parse_overrides(&cli.overrides)?;
            let (outcome, artifacts) =
                run_scenario_file(&scenario, &cli.out_dir, cli.seed, &overrides)
                    .with_context(|| format!("running {}", scenario.display()))?;
            println!("{}", summarize_run(&outcome));
            println!("capture: {}", artifacts.capture_path.display());
            println!("alerts:  {}", artifacts.alerts_path.display());
            println!("metrics: {}", artifacts.metrics_path.display());
            println!("manifest: {}", artifacts.manifest_path.display());
            Ok(())
        }
        Command::Sweep { matrix } => {
            let mut spec = SweepSpec::from_file(&matrix)
                .with_context(|| format!("loading {}", matrix.display()))?;
            if let Some(seed) = cli.seed {
                spec.seed = seed;
            }
            let rows = run_sweep(&spec.cells(), spec.seed, &cli.out_dir);
            print!("{}", render_sweep_table(&rows));
            if rows.iter().any(|r| r.error.is_some()) {
                anyhow::bail!("one or more sweep cells failed");
            }
            Ok(())
        }
        Command::Inspect { input } => {
            let report = inspect::inspect(&input)?;
            // tolerate a closed pipe (e.g. piping into head)
            let _ = std::io::stdout().write_all(report.as_bytes());
            Ok(())
        }
    }
}
