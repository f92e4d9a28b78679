use std::path::Path;
use std::process::{Command, Output};

fn qeloop(workspace: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qeloop"))
        .current_dir(workspace)
        .arg("--workspace")
        .arg(workspace)
        .args(args)
        .env("QELOOP_FIXED_CLOCK", "2026-01-01T00:00:00Z")
        .output()
        .expect("qeloop runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn malformed_ingest_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.feature"), "Feature: x\n\nGiven a step\n").unwrap();
    let out = qeloop(dir.path(), &["ingest", "--kind", "bdd", "bad.feature"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));

    std::fs::write(dir.path().join("dup.txt"), "REQ-1: A.\nREQ-1: B.\n").unwrap();
    let out = qeloop(dir.path(), &["ingest", "--kind", "requirement", "dup.txt"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("duplicate"));
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = qeloop(dir.path(), &["ingest", "--kind", "requirement", "nope.txt"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn report_on_fresh_project() {
    let dir = tempfile::tempdir().unwrap();
    let out = qeloop(dir.path(), &["report", "--project", "banking"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("no cycles completed"));
}

#[test]
fn sample_run_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    assert!(qeloop(dir.path(), &["init-sample"]).status.success());
    let out = qeloop(dir.path(), &["run", "--project", "banking", "--provider", "mock", "--degrade", "0.6"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let table = String::from_utf8(out.stdout).unwrap();
    assert_eq!(table.lines().count(), 3, "{table}");
    let project = dir.path().join("banking");
    for cycle in ["cycle-1", "cycle-2"] {
        for file in ["semantic_results", "impact_analysis", "updated_requirements"] {
            assert!(project.join(cycle).join(format!("{file}.csv")).is_file());
            assert!(project.join(cycle).join(format!("{file}.json")).is_file());
        }
    }
    assert!(project.join("energy.json").is_file());
    assert!(project.join("overall_summary.csv").is_file());

    let out = qeloop(dir.path(), &["report", "--project", "banking", "--cycle", "1", "--json"]);
    assert!(out.status.success());
    let bundle: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(bundle["cycle"], 1);
    assert_eq!(bundle["semantic_results"]["schema"], "semantic_results");

    let out = qeloop(dir.path(), &["report", "--project", "banking", "--cycle", "3"]);
    assert_eq!(out.status.code(), Some(1));

    let out = qeloop(dir.path(), &["negative-validate", "--project", "banking", "--level", "0.8", "--inject-ambiguity"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["pass"], true);
    assert!(project.join("negative_validation.json").is_file());
}

#[test]
fn rerun_replaces_previous_outputs() {
    let dir = tempfile::tempdir().unwrap();
    assert!(qeloop(dir.path(), &["init-sample"]).status.success());
    assert!(qeloop(dir.path(), &["run", "--project", "banking", "--degrade", "0.6"]).status.success());
    let out = qeloop(dir.path(), &["run", "--project", "banking"]);
    assert!(out.status.success());
    let project = dir.path().join("banking");
    assert!(project.join("cycle-1").is_dir());
    assert!(!project.join("cycle-2").exists(), "pristine input converges in one cycle");
}

#[test]
fn ingested_test_cases_feed_the_first_cycle() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("reqs.txt"),
        "REQ-1: The system shall lock the account after 3 failed login attempts.\n",
    )
    .unwrap();
    std::fs::write(
        dir.path().join("tcs.txt"),
        "TC-1-1: Lockout\nStep: Fail login 3 times\nExpect: Account is locked\n",
    )
    .unwrap();
    for args in [
        &["ingest", "--kind", "requirement", "--project", "p", "reqs.txt"][..],
        &["ingest", "--kind", "testcase", "--project", "p", "tcs.txt"][..],
    ] {
        let out = qeloop(dir.path(), args);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let out = qeloop(dir.path(), &["run", "--project", "p", "--from-ingested", "--review"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.path().join("p/session.json").is_file());
}

#[test]
fn bad_config_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("qeloop.toml"), "[energy]\nenergy_per_op_kwh = -1.0\n").unwrap();
    let out = qeloop(dir.path(), &["report", "--project", "x"]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
}
