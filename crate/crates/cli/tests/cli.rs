// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ccxtrust(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccxtrust"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn json(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("results.json")).unwrap()).unwrap()
}

#[test]
fn attest_then_check_trace_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = ccxtrust(dir.path(), &["attest", "--nodes", "2", "--seed", "5", "--direction", "tee-tpm"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(dir.path());
    assert_eq!(r["tokens"], 2);
    assert_eq!(r["properties"]["cert_issuance"], "pass");

    let trace = dir.path().join("trace.txt");
    let o = ccxtrust(dir.path(), &["check-trace", trace.to_str().unwrap()]);
    assert!(o.status.success());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("certificate-issuance pass") && stdout.contains("token-issuance pass") && stdout.contains("report-order pass"));
}

#[test]
fn same_seed_gives_same_trace_file() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        assert!(ccxtrust(d.path(), &["attest", "--nodes", "2", "--seed", "11"]).status.success());
    }
    let read = |d: &tempfile::TempDir| fs::read(d.path().join("trace.txt")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn tampered_trace_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    assert!(ccxtrust(dir.path(), &["init", "--nodes", "1"]).status.success());
    let path = dir.path().join("trace.txt");
    // Drop every OCA Sign so certificate receipt has no issuing event.
    let kept: String = fs::read_to_string(&path)
        .unwrap()
        .lines()
        .filter(|l| !l.contains("\tOCA\tSign\t"))
        .enumerate()
        .map(|(i, l)| format!("{i}\t{}\n", l.split_once('\t').unwrap().1))
        .collect();
    fs::write(&path, kept).unwrap();
    let o = ccxtrust(dir.path(), &["check-trace", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("certificate-issuance counterexample"));
}

#[test]
fn attacks_exit_zero_when_all_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = ccxtrust(dir.path(), &["attack", "--nodes", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(dir.path());
    let reports = r["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 6);
    assert!(reports.iter().all(|x| x["accepted"] == 0));
}

#[test]
fn bench_writes_table_and_records() {
    let dir = tempfile::tempdir().unwrap();
    let o = ccxtrust(dir.path(), &["bench", "--nodes", "8", "--concurrency", "4"]);
    assert!(o.status.success());
    let table = fs::read_to_string(dir.path().join("bench.txt")).unwrap();
    assert!(table.contains("end-to-end"));
    let r = json(dir.path());
    assert_eq!(r["bench"]["successes"], 8);
    assert_eq!(r["bench"]["unique_serials"], 8);
    assert_eq!(r["bench"]["verifier_messages"], 24);
}

#[test]
fn bad_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "seed = \"not a number\"\n").unwrap();
    let o = ccxtrust(dir.path(), &["attest", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("config"));

    fs::write(&cfg, "name = \"x\"\nseed = 4\n[topology]\ncomposite = 1\n").unwrap();
    assert!(ccxtrust(dir.path(), &["init", "--config", cfg.to_str().unwrap()]).status.success());
}
