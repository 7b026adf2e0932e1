use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn loadrank(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_loadrank"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn rank_dominance_instance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("b.json");
    let instance = json!({
        "alternatives": [
            {"name": "A", "scores": [1.0, 1.0]},
            {"name": "B", "scores": [0.5, 0.5]},
            {"name": "C", "scores": [[{"value": 0.0, "prob": 1.0}], 0.0]}
        ]
    });
    fs::write(&cfg, instance.to_string()).unwrap();
    // Listed out of order to check the order is by fitness, not input.
    let shuffled = json!({
        "alternatives": [
            {"name": "C", "scores": [0.0, 0.0]},
            {"name": "A", "scores": [1.0, 1.0]},
            {"name": "B", "scores": [0.5, 0.5]}
        ]
    });
    let cfg2 = dir.path().join("b2.json");
    fs::write(&cfg2, shuffled.to_string()).unwrap();
    for c in [&cfg, &cfg2] {
        let out = loadrank(&["rank", "--config", path(c), "--weights", "0.6,0.4"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let v: Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(v["order"], json!(["A", "B", "C"]));
        let f: Vec<f64> = serde_json::from_value(v["fitness"].clone()).unwrap();
        for (got, want) in f.iter().zip([1.0, 0.5, 0.0]) {
            assert!((got - want).abs() < 1e-12, "{f:?}");
        }
    }
    let bad = loadrank(&["rank", "--config", path(&cfg), "--weights", "0.7,0.4"]);
    assert!(!bad.status.success());
    let bad = loadrank(&["rank", "--config", path(&cfg), "--nu", "0.4"]);
    assert!(!bad.status.success());
}

#[test]
fn generate_data_rejects_zero_days() {
    let dir = tempfile::tempdir().unwrap();
    let out = loadrank(&["generate-data", "--days", "0", "--out", path(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("days"));
    assert!(!dir.path().join("history.csv").exists());
}

#[test]
fn generate_fit_rank_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let out = loadrank(&["generate-data", "--days", "7", "--seed", "5", "--out", path(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let history = dir.path().join("history.csv");
    let text = fs::read_to_string(&history).unwrap();
    assert_eq!(text.lines().count(), 1 + 7 * 288 + 1);
    assert!(text.starts_with("timestamp,chiller_power_W,outdoor_temp_C"));
    assert!(dir.path().join("occupancy.csv").exists());

    let models = dir.path().join("models.json");
    let out = loadrank(&["fit", "--data", path(&history), "--out", path(&models)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m: Value = serde_json::from_str(&fs::read_to_string(&models).unwrap()).unwrap();
    assert_eq!(m["occupancy"].as_array().unwrap().len(), 5);

    let out = loadrank(&["rank", "--models", path(&models), "--at", "2024-07-01T11:00:00", "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["timestamp"], json!(11 * 3600));
    assert_eq!(v["rows"].as_array().unwrap().len(), 5 * 16);

    let missing = loadrank(&["rank"]);
    assert!(!missing.status.success());
}

#[test]
fn run_event_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let args = |out: &Path| {
        vec![
            "run-event".to_string(),
            "--seed".into(),
            "11".into(),
            "--train-days".into(),
            "7".into(),
            "--window".into(),
            "08:00-09:00".into(),
            "--target".into(),
            "3000".into(),
            "--out".into(),
            out.to_str().unwrap().into(),
        ]
    };
    for out in [&a, &b] {
        let o = Command::new(env!("CARGO_BIN_EXE_loadrank")).args(args(out)).output().unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (ra, rb) = (fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(ra, rb);
    let v: Value = serde_json::from_slice(&ra).unwrap();
    assert_eq!(v["event"]["target_reduction_w"], json!(3000.0));
    assert_eq!(v["plans"].as_array().unwrap().len(), 12);

    let bad = loadrank(&["run-event", "--window", "09:00-08:00", "--train-days", "1"]);
    assert!(!bad.status.success());
}
