//! End-to-end CLI checks through the compiled binary.

use std::path::Path;
use std::process::{Command, Output};

fn sublab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sublab"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write_scenario(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("small.toml");
    std::fs::write(
        &path,
        r#"
schema = "sublab-scenario/1"
name = "small"
seed = 5
use_case = 1
outstations = 2
polling_interval_s = 30.0
run_duration_s = 200.0
attack_start_s = 60.0
attack_stop_s = 150.0

[adversary]
use_case = 1
mask_acks = true
recompute_crc = true
sniff_stride = 5
queue_bound = 6
forged_analog = 20.0

[adversary.delay]
bypass_ms = 22.775
analog_do_ms = 27.693
binary_do_ms = 30.217
read_response_ms = 35.415
jitter_frac = 0.1

[[operator.rules]]
trigger = { at = { t_s = 90.0 } }
action = { binary = { outstation = 1, index = 7, control = "close" } }
"#,
    )
    .unwrap();
    path
}

#[test]
fn run_writes_artifacts_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path());
    let out = sublab(&["run", scenario.to_str().unwrap(), "--out-dir", "artifacts"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("small:"), "{stdout}");
    for suffix in ["capture.jsonl", "alerts.log", "metrics.txt", "metrics.json", "manifest.json"] {
        let path = dir.path().join("artifacts").join(format!("small.{suffix}"));
        assert!(path.is_file(), "missing {}", path.display());
    }
}

#[test]
fn seed_override_changes_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path());
    let out = sublab(
        &["run", scenario.to_str().unwrap(), "--out-dir", "a", "--seed", "99"],
        dir.path(),
    );
    assert!(out.status.success());
    let manifest = std::fs::read_to_string(dir.path().join("a/small.manifest.json")).unwrap();
    assert!(manifest.contains("\"seed\": 99"), "{manifest}");
}

#[test]
fn invalid_config_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path());
    // attack window inverted via override
    let out = sublab(
        &[
            "run",
            scenario.to_str().unwrap(),
            "--override",
            "attack_stop_s=10.0",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("attack_stop_s"));
}

#[test]
fn inspect_decodes_hex_and_flags_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let frame = sublab_core::dnp3::encode_frame(
        &sublab_core::dnp3::build_direct_operate_binary(4, 1, 7, 0x41).unwrap(),
    )
    .unwrap();
    let hex = sublab_core::dnp3::to_compact_hex(&frame);
    let out = sublab(&["inspect", &hex], dir.path());
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("DIRECT OPERATE"), "{stdout}");
    assert!(stdout.contains("BO start 7 count 1"), "{stdout}");
    assert!(stdout.contains("payload 41"), "{stdout}");

    let mut corrupted = frame.clone();
    corrupted[12] ^= 0xFF;
    let out = sublab(&["inspect", &sublab_core::dnp3::to_compact_hex(&corrupted)], dir.path());
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("CRC MISMATCH at chunk 0"), "{stdout}");

    let out = sublab(&["inspect", "not-hex-at-all"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn inspect_summarizes_capture_files() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path());
    let out = sublab(&["run", scenario.to_str().unwrap(), "--out-dir", "c"], dir.path());
    assert!(out.status.success());
    let capture = dir.path().join("c/small.capture.jsonl");
    let out = sublab(&["inspect", capture.to_str().unwrap()], dir.path());
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("records"), "{stdout}");
    assert!(stdout.contains("READ"), "{stdout}");
}

#[test]
fn sweep_runs_a_single_cell_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let matrix = dir.path().join("one.toml");
    std::fs::write(
        &matrix,
        r#"
schema = "sublab-sweep/1"
use_cases = [2]
outstations = [5]
polling_intervals_s = [30]
seed = 7
"#,
    )
    .unwrap();
    let out = sublab(&["sweep", matrix.to_str().unwrap(), "--out-dir", "s"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let rows: Vec<&str> = stdout.lines().filter(|l| l.starts_with("UC")).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("UC2_5OS_30"));
    assert!(dir.path().join("s/UC2_5OS_30.metrics.txt").is_file());
}
