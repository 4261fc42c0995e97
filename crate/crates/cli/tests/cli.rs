use std::path::Path;
use std::process::Command;

use satwave::io::{self, write_trace};
use satwave::{analyze, simulate, sweep, AnalyzeOptions, ExperimentConfig, SweepConfig};
use satwave_core::StepRecord;
use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_satwave"))
}

fn square(n: usize, t_end: f64) -> Value {
    json!({
        "mesh": {"type": "unit_square", "n": n},
        "nonlinearity": {"type": "saturation", "S": 1.0},
        "initial": {"type": "eigenfunction", "m": 1, "n": 1, "amplitude": 1.0},
        "dt": 0.02,
        "t_end": t_end
    })
}

fn annulus() -> Value {
    json!({
        "mesh": {"type": "annulus", "r_inner": 0.5, "r_outer": 1.0, "resolution": 0.15},
        "nonlinearity": {"type": "saturation", "S": 1.0},
        "initial": {"type": "annulus_mode", "radial": 1, "angular": 2, "amplitude": 1.0},
        "t_end": 1.0
    })
}

fn write(dir: &Path, name: &str, v: &Value) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, v.to_string()).unwrap();
    p
}

fn status(cmd: &mut Command) -> i32 {
    cmd.output().unwrap().status.code().unwrap()
}

#[test]
fn validate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ok = write(dir.path(), "ok.json", &annulus());
    assert_eq!(status(bin().args(["validate", "--config"]).arg(&ok)), 0);

    let mut far = annulus();
    far["x0"] = json!([2.0, 0.0]);
    let far = write(dir.path(), "far.json", &far);
    let out = bin().args(["validate", "--config"]).arg(&far).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    let failed: Vec<&str> = report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["passed"] == false)
        .map(|c| c["assumption"].as_str().unwrap())
        .collect();
    assert_eq!(failed, ["Assumption 3"]);

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    assert_eq!(status(bin().args(["validate", "--config"]).arg(&bad)), 2);
    assert_eq!(status(bin().args(["validate", "--config"]).arg(dir.path().join("missing.json"))), 2);
    assert_eq!(status(bin().args(["frobnicate"])), 2);
}

#[test]
fn zero_data_has_zero_energy() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = square(6, 1.0);
    v["initial"] = json!({"type": "zero"});
    let cfg = ExperimentConfig::from_json(&v.to_string()).unwrap();
    let m = simulate(&cfg, dir.path()).unwrap();
    assert!(m.succeeded());
    let trace = io::read_trace(&dir.path().join(io::TRACE_FILE)).unwrap();
    assert!(trace.len() > 2);
    assert!(trace.iter().all(|r| r.energy == 0.0));
}

#[test]
fn eigenfunction_energy_is_nonincreasing() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = square(8, 1.0);
    v["dt"] = json!(0.005);
    let cfg = ExperimentConfig::from_json(&v.to_string()).unwrap();
    let m = simulate(&cfg, dir.path()).unwrap();
    assert_eq!(m.summary.as_ref().unwrap().steps, 200);
    let trace = io::read_trace(&dir.path().join(io::TRACE_FILE)).unwrap();
    for w in trace.windows(2) {
        assert!(w[1].energy < w[0].energy);
    }
}

#[test]
fn simulate_writes_a_complete_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write(dir.path(), "cfg.json", &square(6, 1.0));
    let run = dir.path().join("run");
    let out = bin().args(["simulate", "--config"]).arg(&cfg_path).arg("--out").arg(&run).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(run.join(io::MANIFEST_FILE)).unwrap()).unwrap();
    for f in manifest["files"].as_array().unwrap() {
        assert!(run.join(f.as_str().unwrap()).is_file(), "{f}");
    }
    assert_eq!(manifest["status"], "ok");
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);

    let a = bin().arg("analyze").arg(&run).arg("--svg").output().unwrap();
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    for f in [io::ANALYSIS_FILE, io::BOUND_MONITOR_FILE, io::ENERGY_PLOT_FILE] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let report: Value = serde_json::from_str(&std::fs::read_to_string(run.join(io::ANALYSIS_FILE)).unwrap()).unwrap();
    assert!(report["fit"]["alpha"].is_number());
    assert!(report["multiplier_residual"].is_number());
    assert!(report["komornik"].is_object());
    assert!(report["bound_monitor"]["ratio"].is_number());

    assert_eq!(status(bin().arg("analyze").arg(dir.path().join("nope"))), 1);
    assert_eq!(status(bin().arg("analyze").arg(&run).args(["--window", "3"])), 2);
}

#[test]
fn repeated_runs_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = annulus();
    v["initial"] = json!({"type": "random_strong", "seed": 7, "amplitude": 0.5});
    let cfg = ExperimentConfig::from_json(&v.to_string()).unwrap();
    simulate(&cfg, &dir.path().join("a")).unwrap();
    simulate(&cfg, &dir.path().join("b")).unwrap();
    let a = std::fs::read(dir.path().join("a").join(io::TRACE_FILE)).unwrap();
    let b = std::fs::read(dir.path().join("b").join(io::TRACE_FILE)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn synthetic_power_law_fits_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let recs: Vec<StepRecord> = (0..400)
        .map(|k| {
            let t = 1.0 + 0.25 * k as f64;
            StepRecord { t, energy: 4.0 / (t * t), dissipation: 0.0, kato_norm: 0.0, resolvent_iters: 0, resolvent_residual: 0.0 }
        })
        .collect();
    write_trace(&dir.path().join(io::TRACE_FILE), &recs).unwrap();
    let report = analyze(dir.path(), &AnalyzeOptions::default()).unwrap();
    let alpha = report["fit"]["alpha"].as_f64().unwrap();
    assert!((alpha - 2.0).abs() <= 1e-6, "alpha {alpha}");
    assert!((report["fit"]["c"].as_f64().unwrap() - 4.0).abs() < 1e-6);
    assert!(report["multiplier"]["error"].is_string());
}

#[test]
fn conservative_run_is_flagged_as_not_decaying() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = square(8, 4.0);
    v["partition"] = json!("none");
    v["nonlinearity"] = json!({"type": "identity"});
    v["scheme"] = json!("midpoint");
    let cfg = ExperimentConfig::from_json(&v.to_string()).unwrap();
    simulate(&cfg, dir.path()).unwrap();
    let report = analyze(dir.path(), &AnalyzeOptions::default()).unwrap();
    assert_eq!(report["fit"]["no_decay"], true, "{}", report["fit"]);
}

#[test]
fn failed_manifest_blocks_analysis() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_json(&square(4, 0.5).to_string()).unwrap();
    let mut m = simulate(&cfg, dir.path()).unwrap();
    m.status = satwave::RunStatus::Failed;
    io::write_json(&dir.path().join(io::MANIFEST_FILE), &m).unwrap();
    assert!(analyze(dir.path(), &AnalyzeOptions::default()).is_err());
}

fn sweep_summary(jobs: usize, spec: &Value) -> String {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "sweep.json", spec);
    let (s, base) = SweepConfig::load(&path).unwrap();
    let rows = sweep(&s, &base, &dir.path().join("out"), jobs).unwrap();
    assert!(rows.iter().all(|r| r.ok), "{rows:?}");
    std::fs::read_to_string(dir.path().join("out").join("summary.csv")).unwrap()
}

#[test]
fn sweep_is_independent_of_parallelism() {
    let spec = json!({"base": square(6, 1.0), "grid": {"nonlinearity.S": [0.1, 1.0, 10.0]}});
    let serial = sweep_summary(1, &spec);
    let parallel = sweep_summary(4, &spec);
    assert_eq!(serial, parallel);
    assert_eq!(serial.lines().count(), 4);
    assert!(serial.starts_with("index,config_hash,status,final_energy,alpha,"));
}

#[test]
fn empty_sweep_runs_the_base() {
    let summary = sweep_summary(2, &json!({"base": square(4, 0.5)}));
    assert_eq!(summary.lines().count(), 2);
}

#[test]
fn sweep_records_failures_and_continues() {
    let dir = tempfile::tempdir().unwrap();
    let spec = json!({"base": square(4, 0.5), "grid": {"nonlinearity.S": [1.0, -1.0]}});
    let path = write(dir.path(), "sweep.json", &spec);
    let out = bin().args(["sweep", "--jobs", "2", "--config"]).arg(&path).arg("--out").arg(dir.path().join("o")).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let summary = std::fs::read_to_string(dir.path().join("o").join("summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].contains(",ok,"));
    assert!(rows[1].contains(",failed,"));
}
