// SPDX-License-Identifier: Apache-2.0

mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::*;

fn secforge(out: &Path, args: &[&str]) -> Output {
    let f = |n: &str| fixture(n).display().to_string();
    Command::new(env!("CARGO_BIN_EXE_secforge"))
        .args(["--ir", &f("mini-libc.gcfg"), "--apis", &f("mini-libc.apis")])
        .args([
            "--wrappers",
            &f("mini-libc.wrappers"),
            "--aliases",
            &f("mini-libc.aliases"),
        ])
        .args(["--domains", &f("mini-libc.domains.json"), "--out"])
        .arg(out)
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn staged_run_matches_pipeline() {
    let staged = tempfile::tempdir().unwrap();
    let dis = fixture("fileprog.dis").display().to_string();
    ok(&secforge(staged.path(), &["analyze-lib"]));
    assert!(staged.path().join("mapping.json").exists());
    ok(&secforge(staged.path(), &["--bin-dis", &dis, "scan-bin"]));
    assert!(staged.path().join("callsites.json").exists());
    ok(&secforge(staged.path(), &["gen-profile"]));

    let whole = tempfile::tempdir().unwrap();
    ok(&secforge(whole.path(), &["--bin-dis", &dis, "--jobs", "2", "pipeline"]));
    let a = std::fs::read(staged.path().join("profile.json")).unwrap();
    let b = std::fs::read(whole.path().join("profile.json")).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, std::fs::read(fixture("fileprog.seccomp.json")).unwrap());
}

#[test]
fn missing_ir_is_a_config_error() {
    let out = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_secforge"))
        .args([
            "--ir",
            "/does/not/exist.gcfg",
            "--apis",
            "/does/not/exist.apis",
            "--out",
        ])
        .arg(out.path())
        .arg("analyze-lib")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(o.stderr.trim_ascii()).expect("JSON diagnostic");
    assert_eq!(err["kind"], "config");
    assert_eq!(err["stage"], "analyze-lib");
}

#[test]
fn simulate_score_and_reorder() {
    let out = tempfile::tempdir().unwrap();
    let profile = fixture("netprog.seccomp.json").display().to_string();
    let trace = fixture("netprog.trace.jsonl").display().to_string();

    let o = secforge(out.path(), &["--profile", &profile, "--trace", &trace, "simulate"]);
    ok(&o);
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["allowed"], 5);
    assert_eq!(report["denied"], 0);

    let o = secforge(out.path(), &["--profile", &profile, "score-cve"]);
    ok(&o);
    let score: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(score["mitigated"]
        .as_array()
        .unwrap()
        .iter()
        .any(|m| m["id"] == "CVE-2017-7308"));

    let o = secforge(
        out.path(),
        &["--profile", &profile, "--trace", &trace, "optimize-order"],
    );
    ok(&o);
    assert!(out.path().join("profile.optimized.json").exists());
}

#[test]
fn trace_subcommand_reproduces_stored_trace() {
    let out = tempfile::tempdir().unwrap();
    let run = fixture("logprog.run.json").display().to_string();
    ok(&secforge(out.path(), &["trace", "--run", &run]));
    let got = std::fs::read_to_string(out.path().join("trace.jsonl")).unwrap();
    assert_eq!(got, read_fixture("logprog.trace.jsonl"));
}

#[test]
fn table_lookup() {
    let out = tempfile::tempdir().unwrap();
    let o = secforge(out.path(), &["table", "read"]);
    ok(&o);
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "read 63");
    let o = secforge(out.path(), &["--arch", "x86_64", "table", "0"]);
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "read 0");
    assert!(!secforge(out.path(), &["table", "no_such_call"]).status.success());
}

#[test]
fn arch_mismatch_is_reported() {
    let out = tempfile::tempdir().unwrap();
    let dis = fixture("armprog.dis").display().to_string();
    let o = secforge(out.path(), &["--arch", "a64", "--bin-dis", &dis, "pipeline"]);
    assert!(!o.status.success());
    let err: serde_json::Value = serde_json::from_slice(o.stderr.trim_ascii()).expect("JSON diagnostic");
    assert_eq!(err["stage"], "scan-bin");
}
