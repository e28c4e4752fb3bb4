//! Run artifacts: capture file, alert log, metrics report, manifest.

use super::config::{ScenarioConfig, ScenarioError};
use super::runner::{RunOutcome, ADVERSARY_NODE, MASTER_NODE, ROUTER_NODE};
use crate::ids::{render_alert_log, router_lan_view};
use crate::metrics::{
    correlation_report, processing_report, retransmission_rate, rtt_report, CorrelationBucket,
    ProcessingStats, RetransRate, RetransmissionStats, RttReport,
};
use crate::mitm::PacketClass;
use crate::netsim::CaptureRecord;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const CAPTURE_SCHEMA: &str = "sublab-capture/1";
pub const METRICS_SCHEMA: &str = "sublab-metrics/1";
pub const MANIFEST_SCHEMA: &str = "sublab-run/1";

/// All metrics of one run, per phase where phases apply.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsBundle {
    pub overall_retransmission: RetransmissionStats,
    pub attack_retransmission: RetransmissionStats,
    pub baseline_rtt: RttReport,
    pub attack_rtt: RttReport,
    pub overall_rtt: RttReport,
    pub processing: BTreeMap<PacketClass, ProcessingStats>,
    pub correlation: Vec<CorrelationBucket>,
}

pub fn build_metrics(outcome: &RunOutcome) -> MetricsBundle {
    let records = &outcome.captures;
    let (attack_start, attack_stop) = outcome.attack_window();

    let baseline_slice: Vec<CaptureRecord> = if outcome.use_case == 0 {
        records.clone()
    } else {
        records.iter().filter(|r| r.ts_us < attack_start).cloned().collect()
    };
    let attack_slice: Vec<CaptureRecord> = records
        .iter()
        .filter(|r| r.ts_us >= attack_start && r.ts_us < attack_stop)
        .cloned()
        .collect();

    let lan_view: Vec<CaptureRecord> =
        router_lan_view(records, ROUTER_NODE).map(|(_, r)| r.clone()).collect();

    MetricsBundle {
        overall_retransmission: retransmission_rate(records),
        attack_retransmission: retransmission_rate(&attack_slice),
        baseline_rtt: rtt_report(&baseline_slice, MASTER_NODE, outcome.rto_us),
        attack_rtt: rtt_report(&attack_slice, MASTER_NODE, outcome.rto_us),
        overall_rtt: rtt_report(records, MASTER_NODE, outcome.rto_us),
        processing: processing_report(records, ADVERSARY_NODE),
        correlation: correlation_report(&lan_view, &outcome.alerts, outcome.run_end_us),
    }
}

fn rate_text(stats: &RetransmissionStats) -> String {
    match stats.rate {
        RetransRate::PerSecond(v) => format!("{v:.3}/s"),
        RetransRate::Undefined => format!("undefined (N_R={})", stats.count),
    }
}

/// Human-readable metrics report.
pub fn render_metrics_text(name: &str, seed: u64, bundle: &MetricsBundle) -> String {
    let mut out = String::new();
    out.push_str(&format!("# {METRICS_SCHEMA} scenario={name} seed={seed}\n"));

    out.push_str("\n[retransmission]\n");
    let overall = &bundle.overall_retransmission;
    out.push_str(&format!(
        "overall: N_R={} T_R={:.3}s R_R={}\n",
        overall.count,
        overall.span_s,
        rate_text(overall)
    ));
    let attack = &bundle.attack_retransmission;
    out.push_str(&format!(
        "attack: N_R={} T_R={:.3}s R_R={}\n",
        attack.count,
        attack.span_s,
        rate_text(attack)
    ));

    out.push_str("\n[rtt]\n");
    for (label, report) in [
        ("baseline", &bundle.baseline_rtt),
        ("attack", &bundle.attack_rtt),
        ("overall", &bundle.overall_rtt),
    ] {
        out.push_str(&format!(
            "{label}: n={} mean={:.3}ms max={:.3}ms over_rto={} unmatched={}\n",
            report.samples.len(),
            report.mean_ms,
            report.max_ms,
            report.over_rto,
            report.unmatched.len()
        ));
    }
    out.push_str(&format!(
        "delta: attack-baseline mean = {:+.3}ms\n",
        bundle.attack_rtt.mean_ms - bundle.baseline_rtt.mean_ms
    ));

    out.push_str("\n[processing]\n");
    for class in PacketClass::ALL {
        match bundle.processing.get(&class) {
            Some(stats) => out.push_str(&format!(
                "{}: n={} mean={:.3}ms stddev={:.3}ms\n",
                class.name(),
                stats.samples,
                stats.mean_ms,
                stats.stddev_ms
            )),
            None => out.push_str(&format!("{}: n=0\n", class.name())),
        }
    }

    out.push_str("\n[correlation]\n");
    for bucket in &bundle.correlation {
        out.push_str(&format!(
            "minute {}: arp_alerts={} direct_operate={} compromised={}\n",
            bucket.minute, bucket.arp_alerts, bucket.direct_operate_packets, bucket.compromised
        ));
    }
    out
}

/// Deltas between two runs of the same scenario shape (typically a
/// baseline run and an attack run).
pub fn render_comparison(
    baseline_name: &str,
    baseline: &MetricsBundle,
    attack_name: &str,
    attack: &MetricsBundle,
) -> String {
    let rate = |b: &MetricsBundle| b.overall_retransmission.rate_value().unwrap_or(0.0);
    let mut out = String::new();
    out.push_str(&format!("# comparison {baseline_name} -> {attack_name}\n"));
    out.push_str(&format!(
        "retransmissions: {} -> {} (rate {:.4}/s -> {:.4}/s)\n",
        baseline.overall_retransmission.count,
        attack.overall_retransmission.count,
        rate(baseline),
        rate(attack),
    ));
    out.push_str(&format!(
        "rtt mean: {:.3}ms -> {:.3}ms (delta {:+.3}ms)\n",
        baseline.overall_rtt.mean_ms,
        attack.overall_rtt.mean_ms,
        attack.overall_rtt.mean_ms - baseline.overall_rtt.mean_ms,
    ));
    out.push_str(&format!(
        "rtt over timeout: {} -> {}\n",
        baseline.overall_rtt.over_rto, attack.overall_rtt.over_rto,
    ));
    out.push_str(&format!(
        "compromised minutes: {} -> {}\n",
        baseline.correlation.iter().filter(|b| b.compromised).count(),
        attack.correlation.iter().filter(|b| b.compromised).count(),
    ));
    out
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub capture_path: PathBuf,
    pub alerts_path: PathBuf,
    pub metrics_path: PathBuf,
    pub metrics_json_path: PathBuf,
    pub manifest_path: PathBuf,
}

#[derive(Serialize)]
struct CaptureHeader<'a> {
    schema: &'a str,
    name: &'a str,
    seed: u64,
    nodes: Vec<NodeEntry>,
}

#[derive(Serialize)]
struct NodeEntry {
    node: String,
    medium: String,
    mac: String,
    ip: String,
}

/// Serializes the capture log: a schema/roster header line followed by one
/// JSON record per line.
pub fn render_capture_file(outcome: &RunOutcome) -> String {
    let header = CaptureHeader {
        schema: CAPTURE_SCHEMA,
        name: &outcome.name,
        seed: outcome.seed,
        nodes: outcome
            .roster
            .iter()
            .map(|(node, medium, mac, ip)| NodeEntry {
                node: node.clone(),
                medium: medium.clone(),
                mac: mac.to_string(),
                ip: ip.to_string(),
            })
            .collect(),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for record in &outcome.captures {
        out.push_str(&serde_json::to_string(record).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Reads a capture file back into records, skipping the header line.
pub fn parse_capture_file(text: &str) -> Result<Vec<CaptureRecord>, ScenarioError> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.is_empty() {
            continue;
        }
        records.push(
            serde_json::from_str(line)
                .map_err(|e| ScenarioError::Parse(format!("capture line {}: {e}", i + 1)))?,
        );
    }
    Ok(records)
}

#[derive(Serialize)]
struct Manifest<'a> {
    schema: &'a str,
    name: &'a str,
    seed: u64,
    use_case: u8,
    config_sha256: String,
    version: &'a str,
    files: BTreeMap<&'a str, String>,
}

/// Writes every artifact of a finished run into `out_dir`.
pub fn write_artifacts(
    cfg: &ScenarioConfig,
    outcome: &RunOutcome,
    out_dir: &Path,
) -> Result<RunArtifacts, ScenarioError> {
    std::fs::create_dir_all(out_dir)?;
    let base = |suffix: &str| out_dir.join(format!("{}.{suffix}", outcome.name));
    let artifacts = RunArtifacts {
        dir: out_dir.to_path_buf(),
        capture_path: base("capture.jsonl"),
        alerts_path: base("alerts.log"),
        metrics_path: base("metrics.txt"),
        metrics_json_path: base("metrics.json"),
        manifest_path: base("manifest.json"),
    };

    std::fs::write(&artifacts.capture_path, render_capture_file(outcome))?;
    std::fs::write(&artifacts.alerts_path, render_alert_log(&outcome.alerts))?;

    let bundle = build_metrics(outcome);
    std::fs::write(
        &artifacts.metrics_path,
        render_metrics_text(&outcome.name, outcome.seed, &bundle),
    )?;
    let mut json = serde_json::to_string_pretty(&bundle).expect("metrics serialize");
    json.push('\n');
    std::fs::write(&artifacts.metrics_json_path, json)?;

    let config_text = cfg.to_toml();
    let manifest = Manifest {
        schema: MANIFEST_SCHEMA,
        name: &outcome.name,
        seed: outcome.seed,
        use_case: outcome.use_case,
        config_sha256: hex_digest(config_text.as_bytes()),
        version: env!("CARGO_PKG_VERSION"),
        files: [
            ("capture", file_name(&artifacts.capture_path)),
            ("alerts", file_name(&artifacts.alerts_path)),
            ("metrics", file_name(&artifacts.metrics_path)),
            ("metrics_json", file_name(&artifacts.metrics_json_path)),
        ]
        .into_iter()
        .collect(),
    };
    let mut manifest_json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    manifest_json.push('\n');
    std::fs::write(&artifacts.manifest_path, manifest_json)?;
    // The scenario itself is stored alongside so a run can be reproduced.
    std::fs::write(out_dir.join(format!("{}.scenario.toml", outcome.name)), config_text)?;

    Ok(artifacts)
}

fn file_name(path: &Path) -> String {
    path.file_name().unwrap_or_default().to_string_lossy().into_owned()
}

pub fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// One-line run summary for CLI output.
pub fn summarize_run(outcome: &RunOutcome) -> String {
    let bundle = build_metrics(outcome);
    format!(
        "{}: {} captures, {} alerts, {} verdicts ({} mismatches), R_R {}, attack RTT {:.1}ms (baseline {:.1}ms), ran {}s",
        outcome.name,
        outcome.captures.len(),
        outcome.alerts.len(),
        outcome.verdicts.len(),
        outcome
            .verdicts
            .iter()
            .filter(|v| v.verdict == crate::endpoints::MatchVerdict::Mismatch)
            .count(),
        rate_text(&bundle.overall_retransmission),
        bundle.attack_rtt.mean_ms,
        bundle.baseline_rtt.mean_ms,
        outcome.run_end_us / 1_000_000,
    )
}
