//! End-to-end tests of the `fedsim` binary: exit codes, determinism of the
//! emitted files, config-file precedence, and the verify subcommand.

use std::path::Path;
use std::process::{Command, Output};

fn fedsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedsim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn read_dir_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|entry| {
            let entry = entry.unwrap();
            (
                entry.file_name().to_string_lossy().into_owned(),
                std::fs::read(entry.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn missing_subcommand_prints_usage_and_exits_2() {
    let output = fedsim(&[]);
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("Usage"), "stderr: {stderr}");
}

#[test]
fn invalid_scenario_values_exit_2() {
    let output = fedsim(&[
        "regression",
        "--agents",
        "5",
        "--participants",
        "9",
        "--runs",
        "1",
        "--iters",
        "2",
    ]);
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("configuration error"), "stderr: {stderr}");
}

#[test]
fn unknown_flag_exits_2() {
    let output = fedsim(&["regression", "--no-such-flag"]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn reruns_with_the_same_seed_emit_identical_bytes() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    for dir in [dir_a.path(), dir_b.path()] {
        let output = fedsim(&[
            "regression",
            "--agents",
            "8",
            "--samples-per-agent",
            "12",
            "--dim",
            "3",
            "--participants",
            "2",
            "--batch-max",
            "4",
            "--runs",
            "2",
            "--iters",
            "6",
            "--seed",
            "7",
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert!(
            output.status.success(),
            "stderr: {}",
            String::from_utf8_lossy(&output.stderr)
        );
    }
    let files_a = read_dir_files(dir_a.path());
    let files_b = read_dir_files(dir_b.path());
    assert_eq!(files_a.len(), 4, "three variant CSVs plus metadata");
    assert_eq!(files_a, files_b);
}

#[test]
fn flags_override_config_file_and_provenance_records_it() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("run.toml");
    std::fs::write(
        &config_path,
        r#"
[regression]
agents = 10
samples-per-agent = 15
dim = 3
participants = 2
batch-max = 5
noise-var = 0.25
runs = 1
iters = 4
seed = 3
variant = "fedavg"
"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let output = fedsim(&[
        "regression",
        "--config",
        config_path.to_str().unwrap(),
        "--agents",
        "12",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );

    let metadata = std::fs::read_to_string(out.join("metadata.toml")).unwrap();
    assert!(metadata.contains("agents = 12"), "flag wins over file");
    assert!(
        metadata.contains("noise_var = 0.25"),
        "file wins over default"
    );
    assert!(metadata.contains(r#"agents = "flag""#), "{metadata}");
    assert!(metadata.contains(r#"noise-var = "file""#), "{metadata}");
    assert!(metadata.contains(r#"ridge = "default""#), "{metadata}");
    // Only the requested variant ran.
    assert!(out.join("fedavg.csv").exists());
    assert!(!out.join("is-true.csv").exists());
}

#[test]
fn malformed_config_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("bad.toml");
    std::fs::write(&config_path, "[regression]\nnot-a-field = 3\n").unwrap();
    let output = fedsim(&["regression", "--config", config_path.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn missing_config_file_exits_4() {
    let output = fedsim(&["regression", "--config", "/nonexistent/nowhere.toml"]);
    assert_eq!(output.status.code(), Some(4));
}

#[test]
fn verify_passes_and_prints_pass_lines() {
    let output = fedsim(&[
        "verify",
        "--trials",
        "100000",
        "--noise-draws",
        "4000",
        "--seed",
        "1",
    ]);
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("sampler inclusion"), "{stdout}");
    assert!(stdout.contains("gradient noise (uniform)"), "{stdout}");
    assert!(stdout.contains("gradient noise (optimal)"), "{stdout}");
    assert!(stdout.contains("verify: PASS"), "{stdout}");
}

#[test]
fn classification_subcommand_runs_small() {
    let dir = tempfile::tempdir().unwrap();
    let output = fedsim(&[
        "classification",
        "--agents",
        "6",
        "--samples-min",
        "8",
        "--samples-max",
        "15",
        "--participants",
        "2",
        "--batch-max",
        "5",
        "--test-samples",
        "20",
        "--runs",
        "1",
        "--iters",
        "5",
        "--seed",
        "2",
        "--variant",
        "is-approx",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    assert!(dir.path().join("is-approx.csv").exists());
    assert!(dir.path().join("metadata.toml").exists());
}
