use std::path::Path;
use std::process::{Command, Output};

fn hbci(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hbci"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn simulate_decode_evaluate_replay() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&hbci(
        &[
            "simulate",
            "--seed",
            "5",
            "--sessions",
            "2",
            "--out-edf",
            "s.edf",
            "--report",
            "s.json",
            "--command-log",
            "cmd.jsonl",
        ],
        d,
    ));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("s.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 5);
    assert_eq!(report["windows"].as_array().unwrap().len(), 8);
    assert!(report.get("timing").is_none());

    let decoded = ok(&hbci(
        &["decode", "--in-edf", "s.edf", "--window", "0:3", "--window", "8:11"],
        d,
    ));
    let decoded: serde_json::Value = serde_json::from_str(&decoded).unwrap();
    assert_eq!(decoded["windows"].as_array().unwrap().len(), 2);
    assert!(decoded.get("accuracy").is_none());
    for (a, b) in decoded["windows"]
        .as_array()
        .unwrap()
        .iter()
        .zip(report["windows"].as_array().unwrap())
    {
        assert_eq!(a["decision"]["fused"], b["decision"]["fused"]);
    }

    let table = ok(&hbci(&["evaluate", "--report", "s.json"], d));
    assert!(
        table.lines().any(|l| l.starts_with("s.json") && l.contains("fused")),
        "{table}"
    );

    let pose: serde_json::Value =
        serde_json::from_str(&ok(&hbci(&["replay", "--command-log", "cmd.jsonl"], d))).unwrap();
    assert_eq!(pose["x"], report["robot"]["x"]);
    assert_eq!(pose["y"], report["robot"]["y"]);
    assert_eq!(pose["heading"], report["robot"]["heading"]);
}

#[test]
fn config_round_trips_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("c.json"), ok(&hbci(&["config"], d))).unwrap();
    ok(&hbci(
        &[
            "simulate",
            "--config",
            "c.json",
            "--sessions",
            "1",
            "--report",
            "r.json",
        ],
        d,
    ));
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.json"), r#"{"stimuli": [], "colour": 1}"#).unwrap();
    std::fs::write(d.join("junk.edf"), b"not an edf file").unwrap();
    std::fs::write(d.join("log.jsonl"), "{\"t\": 1.0, \"command\": \"Jump\"}\n").unwrap();
    for args in [
        &["simulate", "--config", "bad.json"][..],
        &["simulate", "--config", "missing.json"],
        &["decode", "--in-edf", "missing.edf"],
        &["decode", "--in-edf", "junk.edf"],
        &["decode", "--in-edf", "junk.edf", "--window", "3:1"],
        &["evaluate", "--report", "missing.json"],
        &["replay", "--command-log", "log.jsonl"],
        &["bogus"],
    ] {
        let out = hbci(args, d);
        assert!(!out.status.success(), "{args:?} succeeded");
        assert!(!out.stderr.is_empty(), "{args:?} printed no error");
    }
}

#[test]
fn evaluate_refuses_reports_without_truth() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&hbci(
        &[
            "simulate",
            "--sessions",
            "1",
            "--out-edf",
            "s.edf",
            "--report",
            "s.json",
        ],
        d,
    ));
    ok(&hbci(&["decode", "--in-edf", "s.edf", "--report", "d.json"], d));
    assert!(!hbci(&["evaluate", "--report", "d.json"], d).status.success());
    let both = ok(&hbci(&["evaluate", "--report", "s.json", "d.json"], d));
    assert!(both.contains("no ground truth"));
    assert!(both.contains("(all)"));
}
