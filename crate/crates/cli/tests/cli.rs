use std::path::Path;
use std::process::{Command, Output};

const GRID: [&str; 6] = ["--learning-rates", "0.1", "--critic-seeds", "0", "--epochs", "8"];

fn dis2(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dis2")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn synth(dir: &Path, extra: &[&str]) {
    let out = dir.to_str().unwrap();
    let mut args = vec!["synth", "--out", out, "--classes", "3", "--dim", "5", "--source-count", "1200", "--target-count", "1200"];
    args.extend_from_slice(extra);
    let o = dis2(&args);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.join("manifest.json").exists() && dir.join("head.bin").exists());
}

#[test]
fn bound_estimate_and_sweep_on_a_synthetic_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let shift = tmp.path().join("shift");
    synth(&shift, &["--shift-scale", "1.5"]);
    let manifest = shift.join("manifest.json");
    let head = shift.join("head.bin");
    let (m, h) = (manifest.to_str().unwrap(), head.to_str().unwrap());
    let out = tmp.path().join("out");

    let mut args = vec!["bound", m, "--head", h, "--out", out.to_str().unwrap(), "--delta", "0.05"];
    args.extend_from_slice(&GRID);
    let o = dis2(&args);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("synthetic: bound "));
    let line = std::fs::read_to_string(out.join("bounds.jsonl")).unwrap();
    let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(v["bound"]["delta"], 0.05);
    assert_eq!(v["bound"]["n_s"], 240);
    let b = &v["bound"];
    let sum = b["source_error"].as_f64().unwrap() + b["discrepancy"].as_f64().unwrap() + b["concentration"].as_f64().unwrap();
    assert!((sum - b["bound_with_delta"].as_f64().unwrap()).abs() < 1e-12);
    assert!(out.join("critic-synthetic.json").exists());

    let mut args = vec!["estimate", m, "--head", h, "--methods", "AC,DoC,COT,DIS2", "--input-space", "features"];
    args.extend_from_slice(&GRID);
    let o = dis2(&args);
    assert_eq!(o.status.code(), Some(0));
    let methods: Vec<String> = stdout(&o)
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["method"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(methods, ["AC", "DoC", "COT", "DIS2"]);

    let mut args = vec!["sweep-pcs", m, "--head", h, "--k-list", "1,5", "--score-threshold", "0.5"];
    args.extend_from_slice(&GRID);
    let o = dis2(&args);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("k=1 p=5") && text.contains("k=5 p=1") && text.contains("selected"));
}

#[test]
fn suite_evaluation_then_calibration() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("suite");
    let run = |dir: &Path| {
        let mut args = vec![
            "evaluate", "--shifts", "6", "--groups", "3", "--dim", "4", "--samples", "600", "--truth-samples", "1000",
            "--seed", "7", "--out", dir.to_str().unwrap(),
        ];
        args.extend_from_slice(&GRID);
        dis2(&args)
    };
    let o = run(&out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("6 shifts evaluated, 0 failed"));
    let again = tmp.path().join("again");
    run(&again);
    let records = std::fs::read(out.join("records.jsonl")).unwrap();
    assert_eq!(records, std::fs::read(again.join("records.jsonl")).unwrap());

    let path = out.join("records.jsonl");
    let o = dis2(&["calibrate", path.to_str().unwrap(), "--methods", "ATC_MC", "--alpha", "0.8", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().filter(|l| l.contains("held out group-")).count(), 3);
    let reports: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("loocv.json")).unwrap()).unwrap();
    for fold in reports[0]["folds"].as_array().unwrap() {
        assert!(fold["training_coverage"].as_f64().unwrap() >= 0.8);
    }
}

#[test]
fn partial_failure_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let shift = tmp.path().join("shift");
    synth(&shift, &[]);
    let text = std::fs::read_to_string(shift.join("manifest.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["name"] = "unlabeled".into();
    for s in v["splits"].as_array_mut().unwrap() {
        if s["role"] == "target_train" {
            s.as_object_mut().unwrap().remove("labels_path");
        }
    }
    std::fs::write(shift.join("unlabeled.json"), v.to_string()).unwrap();

    let (a, b, h) = (shift.join("manifest.json"), shift.join("unlabeled.json"), shift.join("head.bin"));
    let mut args = vec!["evaluate", a.to_str().unwrap(), b.to_str().unwrap(), "--head", h.to_str().unwrap()];
    args.extend_from_slice(&GRID);
    let o = dis2(&args);
    assert_eq!(o.status.code(), Some(2));
    let text = stdout(&o);
    assert!(text.contains("1 shifts evaluated, 1 failed") && text.contains("failed unlabeled"));
}

#[test]
fn validation_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let shift = tmp.path().join("shift");
    synth(&shift, &[]);
    let m = shift.join("manifest.json");
    let m = m.to_str().unwrap();
    let missing = tmp.path().join("missing.json");

    for args in [
        vec!["bound", missing.to_str().unwrap()],
        vec!["bound", m],
        vec!["--delta", "0", "bound", m],
        vec!["--holdout-fraction", "1.5", "bound", m],
        vec!["bound", m, "--head", m],
        vec!["estimate", m, "--methods", "NOPE"],
        vec!["evaluate", "--shifts", "0"],
        vec!["synth"],
        vec!["frobnicate"],
    ] {
        let o = dis2(&args);
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!o.stderr.is_empty());
    }
    assert_eq!(dis2(&["--help"]).status.code(), Some(0));
}
