//! Scenario sweeps across use cases, outstation counts and polling rates.

use super::artifacts::{build_metrics, write_artifacts};
use super::config::{ScenarioConfig, ScenarioError};
use super::runner::Runner;
use crate::metrics::RetransmissionStats;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const SWEEP_SCHEMA: &str = "sublab-sweep/1";

/// Sweep matrix file: the cross product of the listed dimensions. The
/// 5-outstation rows of use case 1 are excluded unless requested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    #[serde(default = "default_sweep_schema")]
    pub schema: String,
    #[serde(default = "default_use_cases")]
    pub use_cases: Vec<u8>,
    #[serde(default = "default_outstations")]
    pub outstations: Vec<u16>,
    #[serde(default = "default_intervals")]
    pub polling_intervals_s: Vec<u64>,
    #[serde(default)]
    pub include_uc1_small: bool,
    #[serde(default = "default_sweep_seed")]
    pub seed: u64,
}

fn default_sweep_schema() -> String {
    SWEEP_SCHEMA.to_string()
}
fn default_use_cases() -> Vec<u8> {
    vec![1, 2, 3, 4]
}
fn default_outstations() -> Vec<u16> {
    vec![5, 10]
}
fn default_intervals() -> Vec<u64> {
    vec![30, 60]
}
fn default_sweep_seed() -> u64 {
    42
}

impl Default for SweepSpec {
    fn default() -> Self {
        toml::from_str("").expect("all fields defaulted")
    }
}

impl SweepSpec {
    pub fn from_file(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)?;
        let spec: Self = toml::from_str(&text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        if spec.schema != SWEEP_SCHEMA {
            return Err(ScenarioError::ConfigInvalid(vec![format!(
                "schema: expected {SWEEP_SCHEMA:?}, found {:?}",
                spec.schema
            )]));
        }
        if spec.use_cases.iter().any(|&u| u == 0 || u > 4) {
            return Err(ScenarioError::ConfigInvalid(vec![
                "use_cases: entries must be in 1..=4".to_string(),
            ]));
        }
        Ok(spec)
    }

    /// Cells in (use case, outstations, interval) order.
    pub fn cells(&self) -> Vec<SweepCell> {
        let mut cells = Vec::new();
        let mut use_cases = self.use_cases.clone();
        use_cases.sort_unstable();
        use_cases.dedup();
        let mut outstations = self.outstations.clone();
        outstations.sort_unstable();
        outstations.dedup();
        let mut intervals = self.polling_intervals_s.clone();
        intervals.sort_unstable();
        intervals.dedup();
        for &use_case in &use_cases {
            for &os in &outstations {
                if use_case == 1 && os == 5 && !self.include_uc1_small {
                    continue;
                }
                for &interval in &intervals {
                    cells.push(SweepCell {
                        use_case,
                        outstations: os,
                        polling_interval_s: interval,
                    });
                }
            }
        }
        cells
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepCell {
    pub use_case: u8,
    pub outstations: u16,
    pub polling_interval_s: u64,
}

impl SweepCell {
    pub fn name(&self) -> String {
        format!("UC{}_{}OS_{}", self.use_case, self.outstations, self.polling_interval_s)
    }
}

/// The evaluated grid: use cases 1-4 over {5, 10} outstations and
/// {30, 60} s polling, except the 5-outstation rows of use case 1.
/// 14 cells in total, sorted by (use case, outstations, interval).
pub fn evaluation_matrix() -> Vec<SweepCell> {
    let mut cells = Vec::new();
    for use_case in 1..=4u8 {
        for outstations in [5u16, 10] {
            if use_case == 1 && outstations == 5 {
                continue;
            }
            for polling_interval_s in [30u64, 60] {
                cells.push(SweepCell { use_case, outstations, polling_interval_s });
            }
        }
    }
    cells
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub cell: SweepCell,
    pub name: String,
    pub retransmission: Option<RetransmissionStats>,
    pub baseline_rtt_ms: f64,
    pub attack_rtt_ms: f64,
    pub mismatch_verdicts: usize,
    pub error: Option<String>,
}

/// Runs every cell, writing artifacts under `out_dir` and collecting one
/// row per cell. A failing cell contributes an error row; the sweep
/// continues.
pub fn run_sweep(cells: &[SweepCell], seed: u64, out_dir: &Path) -> Vec<SweepRow> {
    let mut rows = Vec::new();
    for cell in cells {
        let cfg = ScenarioConfig::cell(cell.use_case, cell.outstations, cell.polling_interval_s, seed);
        let row = match Runner::new(cfg.clone()) {
            Ok(runner) => {
                let outcome = runner.execute();
                let write_error =
                    write_artifacts(&cfg, &outcome, out_dir).err().map(|e| e.to_string());
                let bundle = build_metrics(&outcome);
                SweepRow {
                    cell: *cell,
                    name: outcome.name.clone(),
                    retransmission: Some(bundle.overall_retransmission),
                    baseline_rtt_ms: bundle.baseline_rtt.mean_ms,
                    attack_rtt_ms: bundle.attack_rtt.mean_ms,
                    mismatch_verdicts: outcome
                        .verdicts
                        .iter()
                        .filter(|v| v.verdict == crate::endpoints::MatchVerdict::Mismatch)
                        .count(),
                    error: write_error,
                }
            }
            Err(e) => SweepRow {
                cell: *cell,
                name: cell.name(),
                retransmission: None,
                baseline_rtt_ms: 0.0,
                attack_rtt_ms: 0.0,
                mismatch_verdicts: 0,
                error: Some(e.to_string()),
            },
        };
        rows.push(row);
    }
    rows
}

/// Renders the retransmission-rate and RTT summary table.
pub fn render_sweep_table(rows: &[SweepRow]) -> String {
    let mut out = String::new();
    out.push_str("scenario        N_R    T_R_s     R_R        rtt_base_ms  rtt_attack_ms  mismatches\n");
    for row in rows {
        if let Some(err) = &row.error {
            out.push_str(&format!("{:<15} FAILED: {err}\n", row.name));
            continue;
        }
        let stats = row.retransmission.expect("present without error");
        let rate = match stats.rate {
            crate::metrics::RetransRate::PerSecond(v) => format!("{v:.4}"),
            crate::metrics::RetransRate::Undefined => "undef".to_string(),
        };
        out.push_str(&format!(
            "{:<15} {:<6} {:<9.3} {:<10} {:<12.3} {:<14.3} {}\n",
            row.name,
            stats.count,
            stats.span_s,
            rate,
            row.baseline_rtt_ms,
            row.attack_rtt_ms,
            row.mismatch_verdicts,
        ));
    }
    out
}
