use std::fs;
use std::process::Command;

use dss_core::layer::{init_layer, LayerParams};
use dss_core::Variant;

fn dss(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_dss")).args(args).output().expect("binary runs")
}

#[test]
fn kernel_single_mode_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("k.csv");
    let o = dss(&[
        "kernel", "--variant", "exp", "--n", "1", "--l", "8", "--lambda-re", "0", "--lambda-im", "0", "--w", "1,0",
        "--delta", "1", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "k0,k1,k2,k3,k4,k5,k6,k7");
    let row: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(row.len(), 8);
    for (k, v) in row.iter().enumerate() {
        let expect = (1.0 - (-1.0f64).exp()) * (-(k as f64)).exp();
        assert!((v - expect).abs() < 1e-15, "k={k}");
    }
}

#[test]
fn kernel_default_init_has_requested_width() {
    let o = dss(&["kernel", "--variant", "softmax", "--l", "1024"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1].split(',').count(), 1024);
}

#[test]
fn exit_codes() {
    assert_eq!(dss(&["kernel", "--variant", "nope", "--l", "4"]).status.code(), Some(1));
    assert_eq!(dss(&["bench", "--l", "0"]).status.code(), Some(1));
    assert_eq!(dss(&["train-toy", "--lag", "2048", "--l", "1024"]).status.code(), Some(1));
    assert_eq!(dss(&["kernel", "--variant", "exp", "--l", "4", "--out", "/nonexistent/dir/k.csv"]).status.code(), Some(2));
    let help = dss(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    let bad = dss(&["kernel", "--variant", "exp", "--n", "2", "--l", "4", "--w", "1,0"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("Usage"));
}

#[test]
fn check_suite_passes_and_reports() {
    let o = dss(&["check", "--suite", "prop1", "--trials", "5", "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.ends_with("PASS")).count(), 5);
}

#[test]
fn heatmap_writes_profiles_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let params = dir.path().join("p.json");
    let out = dir.path().join("heat.csv");
    fs::write(&params, init_layer(6, 8, Variant::Softmax, 9).unwrap().to_json()).unwrap();
    let o = dss(&["heatmap", "--params", params.to_str().unwrap(), "--l", "128", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(&out).unwrap();
    assert_eq!(csv.lines().count(), 7);
    for row in csv.lines().skip(1) {
        let vals: Vec<f64> = row.split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(vals.len(), 128);
        assert!(vals.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(vals.contains(&1.0));
    }
    let side: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("heat.stats.json")).unwrap()).unwrap();
    assert_eq!(side["argmax"].as_array().unwrap().len(), 6);

    fs::write(&params, "{ not json").unwrap();
    let o = dss(&["heatmap", "--params", params.to_str().unwrap(), "--l", "8", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn params_file_round_trips_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a.json");
    let o = dss(&["init", "--variant", "exp", "--h", "4", "--n", "8", "--seed", "5", "--out", first.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = fs::read_to_string(&first).unwrap();
    let again = LayerParams::from_json(&text).unwrap().to_json() + "\n";
    assert_eq!(text, again);
}

#[test]
fn short_toy_training_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let o = dss(&["train-toy", "--lag", "3", "--l", "16", "--n", "4", "--steps", "300", "--lr", "0.05", "--out", out.to_str().unwrap()]);
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("final_mse=") && stdout.contains("final_argmax="));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    let argmax = report["final_argmax"].as_u64().unwrap();
    assert_eq!(o.status.code(), Some(if argmax == 3 { 0 } else { 5 }));
    assert!(report["final_mse"].as_f64().unwrap() < report["initial_mse"].as_f64().unwrap());
}
