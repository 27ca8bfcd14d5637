use std::path::Path;
use std::process::{Command, Output};

use regulab::io::Table;
use serde_json::{json, Value};

fn regulab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_regulab")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn small_config(out: &Path) -> Value {
    json!({
        "output": out,
        "seed": 3,
        "path": { "kind": "fbm", "hurst": 0.3, "steps": 1024 },
        "local_time": { "bins": 64, "stride": 16 },
        "potential": { "kind": "zero" },
        "solver": { "p": 2.0, "interior": 16, "initial": { "kind": "sine", "amplitude": 1.0, "mode": 1 } },
        "checks": []
    })
}

fn write_config(dir: &Path, cfg: &Value) -> std::path::PathBuf {
    let f = dir.join("config.json");
    std::fs::write(&f, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    f
}

#[test]
fn corrupted_config_exits_2_before_creating_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = tmp.path().join("config.json");
    std::fs::write(&cfg, "{ \"output\": \"x\", \"path\": ").unwrap();
    let r = regulab(&["run", "--config", cfg.to_str().unwrap(), "--output", out.to_str().unwrap()]);
    assert_eq!(code(&r), 2);
    assert!(!out.exists());
}

#[test]
fn unknown_fields_are_schema_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    for (section, key) in [("solver", "tolerance"), ("potential", "width"), ("path", "hurts")] {
        let mut cfg = small_config(&out);
        cfg[section][key] = json!(1.0);
        let f = write_config(tmp.path(), &cfg);
        let r = regulab(&["run", "--config", f.to_str().unwrap()]);
        assert_eq!(code(&r), 2, "{section}.{key}: {}", String::from_utf8_lossy(&r.stderr));
        assert!(!out.exists());
    }
}

#[test]
fn invalid_values_are_schema_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let mut cfg = small_config(&out);
    cfg["local_time"]["stride"] = json!(24);
    let f = write_config(tmp.path(), &cfg);
    assert_eq!(code(&regulab(&["run", "--config", f.to_str().unwrap()])), 2);
    let mut cfg = small_config(&out);
    cfg["checks"] = json!(["sweep"]);
    let f = write_config(tmp.path(), &cfg);
    assert_eq!(code(&regulab(&["run", "--config", f.to_str().unwrap()])), 2);
    assert!(!out.exists());
}

#[test]
fn zero_drift_run_passes_with_decaying_energy() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let f = write_config(tmp.path(), &small_config(&out));
    let r = regulab(&["run", "--config", f.to_str().unwrap()]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    for name in ["path.csv", "localtime.csv", "trajectory.csv", "energy.csv", "energy.svg", "report.json", "manifest.json"] {
        assert!(out.join(name).exists(), "{name} missing");
    }
    let energy = Table::read(&out.join("energy.csv")).unwrap();
    let grad = energy.column("grad_lp").unwrap();
    let l2 = energy.column("l2").unwrap();
    assert!(grad.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    assert!(l2.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    let drift = energy.column("cum_drift_sq").unwrap();
    assert!(drift.iter().all(|&d| d == 0.0));

    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let sums = manifest["checksums"].as_object().unwrap();
    assert!(sums.contains_key("path.csv") && !sums.contains_key("manifest.json"));
    assert_eq!(manifest["seeds"], json!([3]));
}

#[test]
fn failing_check_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let mut cfg = small_config(&out);
    cfg["path"]["kind"] = json!("zero");
    cfg["potential"] = json!({ "kind": "example1", "eta": -1.0, "K": 1.0, "eps": 0.05 });
    cfg["solver"]["initial"] = json!({ "kind": "zero" });
    cfg["checks"] = json!(["sweep"]);
    cfg["sweep"] = json!({ "eps": [0.05, 0.025, 0.0125, 0.00625], "zero_path": true });
    let f = write_config(tmp.path(), &cfg);
    let r = regulab(&["run", "--config", f.to_str().unwrap()]);
    assert_eq!(code(&r), 1, "{}", String::from_utf8_lossy(&r.stderr));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], json!(false));
}

#[test]
fn plot_rejects_missing_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("t.csv");
    std::fs::write(&csv, "a,b\n1,2\n2,4\n").unwrap();
    let svg = tmp.path().join("t.svg");
    let r = regulab(&["plot", "--csv", csv.to_str().unwrap(), "--x", "a", "--y", "c", "--out", svg.to_str().unwrap()]);
    assert_eq!(code(&r), 2);
    assert!(!svg.exists());
    let r = regulab(&["plot", "--csv", csv.to_str().unwrap(), "--x", "a", "--y", "b", "--out", svg.to_str().unwrap()]);
    assert_eq!(code(&r), 0);
    assert!(std::fs::read_to_string(&svg).unwrap().contains("<polyline"));
}

#[test]
fn bad_arguments_exit_2() {
    assert_eq!(code(&regulab(&["fbm", "--H", "0.3"])), 2);
    assert_eq!(code(&regulab(&["frobnicate"])), 2);
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("p.csv");
    assert_eq!(code(&regulab(&["fbm", "--H", "1.5", "--steps", "64", "--out", p.to_str().unwrap()])), 2);
}

#[test]
fn path_local_time_and_average_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("path.csv");
    let lt = tmp.path().join("lt.csv");
    let avg = tmp.path().join("avg.csv");
    let s = |q: &Path| q.to_str().unwrap().to_string();
    assert_eq!(code(&regulab(&["fbm", "--H", "0.3", "--steps", "1024", "--seed", "5", "--out", &s(&p)])), 0);
    let r = regulab(&["localtime", "--in", &s(&p), "--bins", "128", "--times", "4", "--out", &s(&lt)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let side: Value = serde_json::from_str(&std::fs::read_to_string(lt.with_extension("json")).unwrap()).unwrap();
    assert!(side["max_mass_residual"].as_f64().unwrap() < 1e-12);

    let spec = r#"{"kind":"constant","value":2.0}"#;
    let r = regulab(&["average", "--b", spec, "--lt", &s(&lt), "--interval", "0.25,0.75", "--out", &s(&avg)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let table = Table::read(&avg).unwrap();
    let d = table.column("d_1").unwrap();
    let peak = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!((peak - 1.0).abs() < 1e-9, "constant 2 over half the horizon, got {peak}");

    let r = regulab(&["average", "--b", spec, "--lt", &s(&lt), "--interval", "0.3,0.75", "--out", &s(&avg)]);
    assert_eq!(code(&r), 2);
}

#[test]
fn fbm_output_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a.csv");
    let b = tmp.path().join("b.csv");
    for f in [&a, &b] {
        assert_eq!(code(&regulab(&["fbm", "--H", "0.2", "--N", "2", "--steps", "256", "--seed", "9", "--out", f.to_str().unwrap()])), 0);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let t = Table::read(&a).unwrap();
    assert_eq!(t.column("w_2").unwrap().len(), 257);
}
