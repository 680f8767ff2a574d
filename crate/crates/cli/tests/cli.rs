use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
rounds = 2
clients = 6
c_frac = 0.5
local_epochs = 1

[dataset]
counts = [40, 30, 12]
dim = 8

[classifier]
hidden_width = 8
"#;

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("feddpgan-cli-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn feddpgan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_feddpgan"))
        .args(args)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

#[test]
fn run_sweep_and_compare() {
    let dir = scratch("flow");
    let cfg = write_config(&dir, TINY);

    let out = feddpgan(&["run", &cfg, "--seed", "3", "--out", &s(&dir.join("run"))]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let metrics = std::fs::read_to_string(dir.join("run/metrics.csv")).unwrap();
    assert!(metrics.starts_with("round,mode,accuracy,mean_loss\n"));
    assert!(String::from_utf8_lossy(&out.stdout).contains("seed=3"));

    let sweep = dir.join("sweep");
    let out = feddpgan(&[
        "sweep",
        &cfg,
        "--param",
        "partition.mode",
        "--values",
        "\"iid\",\"noniid\"",
        "--out",
        &s(&sweep),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let runs: Vec<PathBuf> = ["0-_iid_", "1-_noniid_"]
        .iter()
        .map(|d| sweep.join(d))
        .collect();
    assert!(runs.iter().all(|r| r.join("summary.json").exists()));

    let table = dir.join("table.csv");
    let out = feddpgan(&[
        "compare",
        &s(&runs[0]),
        &s(&runs[1].join("summary.json")),
        "--out",
        &s(&table),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(table).unwrap();
    assert_eq!(
        csv.lines().next(),
        Some("round,federated-iid,federated-noniid")
    );
    assert_eq!(csv.lines().count(), 3);
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn same_seed_prints_identical_metrics() {
    let dir = scratch("det");
    let cfg = write_config(&dir, TINY);
    let a = feddpgan(&["run", &cfg]);
    let b = feddpgan(&["run", &cfg]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn config_errors_exit_nonzero_with_key_path() {
    let dir = scratch("bad");
    let cfg = write_config(&dir, "[privacy]\ndelta = 2.0\n");
    let out = feddpgan(&["run", &cfg]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("privacy.delta"), "{err}");
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn pipeline_errors_name_their_stage() {
    let dir = scratch("stage");
    let cfg = write_config(&dir, &TINY.replace("clients = 6", "clients = 500"));
    let out = feddpgan(&["run", &cfg]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error: data:"), "{err}");
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn missing_config_is_reported() {
    let out = feddpgan(&["run", "/nonexistent/feddpgan.toml"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("reading config"));
}
