use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn valley(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_valley")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, config: &Value) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_vec(config).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

fn report(dir: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn list_protocols_is_sorted() {
    let out = valley(&["list-protocols"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let ids: Vec<&str> = text
        .lines()
        .filter(|l| !l.starts_with(' '))
        .filter_map(|l| l.split_whitespace().next())
        .collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
    for id in ["theorem1-verify", "theorem2-verify", "swa-direction", "probe.slice", "train"] {
        assert!(ids.contains(&id), "{id} missing");
    }
}

#[test]
fn theorem1_config_gives_exact_gap() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    let cfg = write_config(
        tmp.path(),
        &json!({"protocol": "theorem1-verify", "params": {}, "seed": 3, "output_dir": out_dir}),
    );
    let out = valley(&["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&out_dir);
    assert!((r["metrics"]["gap"].as_f64().unwrap() - 0.2).abs() < 1e-10);
    assert_eq!(r["verdicts"]["bound_holds"], "pass");
    assert_eq!(r["config"]["seed"], 3);
    assert!(r["provenance"]["timestamp_unix"].as_u64().unwrap() > 0);
}

#[test]
fn failing_verdict_exits_one() {
    // a shift scan whose true shift lies outside the scanned range cannot
    // recover it
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    let out = valley(&[
        "shift-scan",
        "--shift",
        "0.9",
        "--from",
        "-0.5",
        "--to",
        "0.5",
        "--resolution",
        "0.05",
        "-o",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(report(&out_dir)["verdicts"]["shift_recovered"], "fail");
}

#[test]
fn malformed_config_exits_two_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    let cases = [
        json!({"protocol": "theorem1-verify", "params": {"k": 1, "bogus": true}, "output_dir": out_dir}),
        json!({"protocol": "no-such-protocol", "output_dir": out_dir}),
        json!({"protocol": "theorem1-verify", "output_dir": out_dir, "extra": 1}),
        json!({"protocol": "theorem1-verify", "params": {"delta_bar": [9.0]}, "output_dir": out_dir}),
    ];
    for c in cases {
        let cfg = write_config(tmp.path(), &c);
        let out = valley(&["run", "--config", &cfg]);
        assert_eq!(out.status.code(), Some(2), "{c}");
        assert!(!out_dir.exists(), "{c} left output behind");
    }
    let missing = valley(&["run", "--config", tmp.path().join("absent.json").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn same_config_same_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out_dir = tmp.path().join(name);
        let cfg = write_config(
            tmp.path(),
            &json!({
                "protocol": "simulate-1d",
                "params": {"steps": 3000, "rounds": true},
                "seed": 11,
                "output_dir": out_dir,
            }),
        );
        assert!(valley(&["run", "--config", &cfg]).status.success());
        let traj = std::fs::read(out_dir.join("trajectory.csv")).unwrap();
        (report(&out_dir)["metrics"].clone(), traj)
    };
    let (a, ta) = run("a");
    let (b, tb) = run("b");
    assert_eq!(a, b);
    assert_eq!(ta, tb);
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    let cfg = write_config(
        tmp.path(),
        &json!({"protocol": "report-constants", "seed": 1, "output_dir": out_dir}),
    );
    assert!(valley(&["run", "--config", &cfg, "--seed", "42"]).status.success());
    assert_eq!(report(&out_dir)["config"]["seed"], 42);
}

#[test]
fn train_then_probe_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let train_dir = tmp.path().join("train");
    let out = valley(&[
        "train",
        "--epochs",
        "6",
        "--swa-start",
        "4",
        "--eta-swa",
        "0.02",
        "--n-train",
        "64",
        "--n-heldout",
        "200",
        "-o",
        train_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["history.csv", "final/layout.json", "final/params.bin", "swa/params.bin", "report.json"] {
        assert!(train_dir.join(f).exists(), "{f}");
    }
    let probe_dir = tmp.path().join("probe");
    let out = valley(&[
        "probe",
        "interpolate",
        "--source",
        "checkpoint",
        "--checkpoint",
        train_dir.join("swa").to_str().unwrap(),
        "--other",
        train_dir.join("final").to_str().unwrap(),
        "--n-train",
        "64",
        "--n-heldout",
        "200",
        "-o",
        probe_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(probe_dir.join("interpolation.csv").exists());
    assert_eq!(report(&probe_dir)["verdicts"]["interpolate"], "recorded-only");
}

#[test]
fn clap_errors_exit_two() {
    assert_eq!(valley(&["theorem1-verify"]).status.code(), Some(2));
    assert_eq!(valley(&["no-such-command"]).status.code(), Some(2));
}
