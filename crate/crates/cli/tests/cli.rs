//! Exit codes and artifacts of the installed binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_superfractal"));
    c.env_remove("SUPERFRACTAL_OUT").env("RUST_LOG", "error");
    c
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn heat_flow_simulate_passes() {
    let out = tempfile::tempdir().unwrap();
    let o = bin()
        .args(["--config"])
        .arg(config("heat.json"))
        .arg("--out")
        .arg(out.path())
        .arg("simulate")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("PASS heat_flow"), "{stdout}");
    for f in [
        "density.csv",
        "jumps.csv",
        "diagnostics.json",
        "manifest.json",
    ] {
        assert!(out.path().join(f).is_file(), "{f}");
    }
}

#[test]
fn bad_value_reports_line_and_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(config("smoke.json")).unwrap();
    let bad = text.replacen("\"beta\": 0.4", "\"beta\": 1.4", 1);
    assert_ne!(bad, text);
    let path = dir.path().join("bad.json");
    std::fs::write(&path, bad).unwrap();
    let o = bin()
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(dir.path().join("out"))
        .arg("simulate")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bad.json:") && err.contains("beta"), "{err}");
}

#[test]
fn malformed_json_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.json");
    std::fs::write(&path, "{\n  \"params\": \n").unwrap();
    let o = bin()
        .arg("--config")
        .arg(&path)
        .arg("simulate")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn plots_without_spectrum_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .arg("--config")
        .arg(config("smoke.json"))
        .arg("plots")
        .arg("--dir")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("spectrum.csv"));
}

#[test]
fn verify_smoke_passes() {
    let out = tempfile::tempdir().unwrap();
    let o = bin()
        .arg("--config")
        .arg(config("smoke.json"))
        .arg("--out")
        .arg(out.path())
        .args(["verify", "--kernel-table"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(out.path().join("verify.json").is_file());
    assert!(out.path().join("kernel_table.csv").is_file());
}
