//! End-to-end runs of the `rnnal` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn rnnal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rnnal")).args(args).output().expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("rnnal-cli-{}-{name}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Generates a BIQ instance, solves it with a certificate and returns the
/// instance and certificate paths.
fn solved_instance(dir: &Path) -> (PathBuf, PathBuf) {
    let inst = dir.join("biq.txt");
    let cert = dir.join("biq.cert");
    let gen = rnnal(&["gen", "--family", "biq", "--n", "12", "--density", "0.5", "--seed", "7", "--out", path(&inst)]);
    assert!(gen.status.success(), "gen: {}", String::from_utf8_lossy(&gen.stderr));
    let solve = rnnal(&["solve", "--family", "generic", "--input", path(&inst), "--cert", path(&cert)]);
    assert!(solve.status.success(), "solve: {}", String::from_utf8_lossy(&solve.stderr));
    (inst, cert)
}

#[test]
fn gen_solve_check_round_trip() {
    let dir = scratch("roundtrip");
    let (inst, cert) = solved_instance(&dir);
    let check = rnnal(&["check", "--family", "generic", "--input", path(&inst), "--cert", path(&cert)]);
    let stdout = String::from_utf8_lossy(&check.stdout);
    assert!(check.status.success(), "check: {stdout}");
    assert!(stdout.contains("certificate OK"));
}

#[test]
fn tampered_certificate_is_rejected() {
    let dir = scratch("tampered");
    let (inst, cert) = solved_instance(&dir);
    let text = fs::read_to_string(&cert).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let mu = lines.iter().position(|l| l.starts_with("mu ")).expect("mu section");
    let shifted: Vec<String> = lines[mu + 1]
        .split_whitespace()
        .map(|v| format!("{:e}", v.parse::<f64>().unwrap() + 1e-2))
        .collect();
    lines[mu + 1] = shifted.join(" ");
    let bad = dir.join("tampered.cert");
    fs::write(&bad, lines.join("\n") + "\n").unwrap();
    let check = rnnal(&["check", "--family", "generic", "--input", path(&inst), "--cert", path(&bad)]);
    assert!(!check.status.success());
    assert!(String::from_utf8_lossy(&check.stdout).contains("certificate FAILED"));
}

#[test]
fn primal_only_certificate_reports_rp_and_fails() {
    let dir = scratch("primal");
    let (inst, cert) = solved_instance(&dir);
    let text = fs::read_to_string(&cert).unwrap();
    let primal: String = text.lines().take_while(|l| !l.starts_with("W ")).map(|l| format!("{l}\n")).collect();
    let only = dir.join("primal.cert");
    fs::write(&only, primal).unwrap();
    let check = rnnal(&["check", "--family", "generic", "--input", path(&inst), "--cert", path(&only)]);
    let stdout = String::from_utf8_lossy(&check.stdout);
    assert!(!check.status.success());
    assert!(stdout.contains("Rp ="), "{stdout}");
    assert!(stdout.contains("missing dual certificate"));
}

#[test]
fn empty_manifest_exits_with_usage_error() {
    let dir = scratch("manifest");
    let manifest = dir.join("empty.txt");
    fs::write(&manifest, "# nothing here\n\n").unwrap();
    let bench = rnnal(&["bench", "--manifest", path(&manifest)]);
    assert_eq!(bench.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bench.stderr).contains("no entries"));
}

#[test]
fn bench_runs_generated_entries() {
    let dir = scratch("bench");
    let manifest = dir.join("small.txt");
    fs::write(&manifest, "gen biq n=10 density=0.5 seed=1\ngen theta n=8 p=0.3 seed=2\n").unwrap();
    let out = dir.join("summary.json");
    let bench = rnnal(&["bench", "--manifest", path(&manifest), "--out", path(&out)]);
    let stdout = String::from_utf8_lossy(&bench.stdout);
    assert!(bench.status.success(), "{stdout}");
    assert!(stdout.contains("2 of 2 entries converged"));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(summary["rows"].as_array().unwrap().len(), 2);
}

#[test]
fn omit_time_reports_are_reproducible() {
    let dir = scratch("repro");
    let (inst, _) = solved_instance(&dir);
    let run = |name: &str| {
        let out = dir.join(name);
        let solve = rnnal(&["solve", "--family", "generic", "--input", path(&inst), "--omit-time", "--out", path(&out)]);
        assert!(solve.status.success());
        fs::read_to_string(out).unwrap()
    };
    assert_eq!(run("a.json"), run("b.json"));
}
