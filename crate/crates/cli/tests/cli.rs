use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn repo_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn case_study() -> Value {
    serde_json::from_str(&std::fs::read_to_string(repo_file("configs/case_study.json")).unwrap()).unwrap()
}

/// A lighter case study for tests that run the simulator or sweeps.
fn quick_case() -> Value {
    let mut c = case_study();
    c["grid"]["intervals"] = json!(1000);
    c["optimizer"]["obs_cost_sweep"] = json!([]);
    c["optimizer"]["omega_a_sweep"] = json!([]);
    c["optimizer"]["count_range"] = json!([1, 3]);
    c["simulation"]["trials"] = json!(200);
    c["simulation"]["dt"] = json!(0.05);
    c["simulation"]["traces"] = json!(0);
    c
}

fn write_config(dir: &TempDir, name: &str, cfg: &Value) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn dadg(verb: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dadg"))
        .arg(verb)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let header = rdr.headers().unwrap().iter().map(String::from).collect();
    let rows = rdr.records().map(|r| r.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    let (header, rows) = read_csv(path);
    let i = header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name} in {header:?}"));
    rows.iter().map(|r| r[i].parse().unwrap()).collect()
}

#[test]
fn riccati_writes_path_and_closed_form_check() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "c.json", &case_study());
    let out = dir.path().join("out");
    let o = dadg("riccati", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let k2 = column(&out.join("riccati_path.csv"), "k2");
    assert_eq!(k2.len(), 2001);
    assert!(k2.iter().all(|v| v.is_finite() && *v > 0.0));
    let rel = column(&out.join("closed_form_check.csv"), "rel_error");
    assert!(rel.iter().all(|e| *e <= 1e-6));
    let text = std::fs::read_to_string(out.join("riccati_path.csv")).unwrap();
    assert!(!text.contains('\r'));
}

#[test]
fn zero_weights_give_zero_k11() {
    let dir = TempDir::new().unwrap();
    let mut c = quick_case();
    c["game"]["omega_a"] = json!(0.0);
    c["game"]["omega_d"] = json!(0.0);
    let cfg = write_config(&dir, "c.json", &c);
    let out = dir.path().join("out");
    let o = dadg("riccati", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(!out.join("closed_form_check.csv").exists());
    let (header, rows) = read_csv(&out.join("riccati_path.csv"));
    let k_cols: Vec<usize> = header.iter().enumerate().filter(|(_, h)| h.starts_with("k11_")).map(|(i, _)| i).collect();
    assert_eq!(k_cols.len(), 16);
    for row in &rows {
        assert!(k_cols.iter().all(|&i| row[i].parse::<f64>().unwrap() == 0.0));
    }
}

#[test]
fn malformed_json_exits_2_with_path() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");

    let mut c = quick_case();
    c["game"]["omega_a"] = json!("two");
    let o = dadg("riccati", &write_config(&dir, "a.json", &c), &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("game.omega_a"), "{}", stderr(&o));

    let mut c = quick_case();
    c["simulation"]["trails"] = json!(10);
    let o = dadg("simulate", &write_config(&dir, "b.json", &c), &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("trails"), "{}", stderr(&o));

    let path = dir.path().join("broken.json");
    std::fs::write(&path, "{\"game\": {\"n\": 2,").unwrap();
    let o = dadg("riccati", &path, &out, &[]);
    assert_eq!(o.status.code(), Some(2));

    let mut c = quick_case();
    c["game"]["c_a"] = json!([[1.0, 0.0]]);
    let o = dadg("riccati", &write_config(&dir, "c.json", &c), &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("c_a"), "{}", stderr(&o));
}

#[test]
fn trials_zero_is_a_validation_error() {
    let dir = TempDir::new().unwrap();
    let mut c = quick_case();
    c["simulation"]["trials"] = json!(0);
    let o = dadg("simulate", &write_config(&dir, "c.json", &c), &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("simulation.trials"));
}

#[test]
fn finite_escape_exits_3_with_time() {
    let dir = TempDir::new().unwrap();
    let mut c = quick_case();
    c["game"]["omega_a"] = json!(1.0);
    c["game"]["omega_d"] = json!(100.0);
    c["game"]["b_a"] = json!([[1.0, 0.0], [0.0, 1.0]]);
    c["game"]["b_d"] = json!([[0.01, 0.0], [0.0, 0.01]]);
    let o = dadg("riccati", &write_config(&dir, "c.json", &c), &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("finite escape at t ="), "{}", stderr(&o));
}

#[test]
fn simulate_is_byte_identical_for_a_fixed_seed() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "c.json", &quick_case());
    let (o1, o2, o3) = (dir.path().join("o1"), dir.path().join("o2"), dir.path().join("o3"));
    for out in [&o1, &o2] {
        let o = dadg("simulate", &cfg, out, &["--seed", "17"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = std::fs::read(o1.join("mc_summary.json")).unwrap();
    assert_eq!(a, std::fs::read(o2.join("mc_summary.json")).unwrap());
    assert!(dadg("simulate", &cfg, &o3, &["--seed", "18"]).status.success());
    assert_ne!(a, std::fs::read(o3.join("mc_summary.json")).unwrap());
    let summary: Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(summary["seed"], json!(17));
    assert_eq!(summary["config"]["simulation"]["seed"], json!(17));
}

#[test]
fn optimize_reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "c.json", &quick_case());
    let (o1, o2) = (dir.path().join("o1"), dir.path().join("o2"));
    assert!(dadg("optimize", &cfg, &o1, &[]).status.success());
    assert!(dadg("optimize", &cfg, &o2, &[]).status.success());
    for name in ["schedule_optimal.csv", "schedule_periodic.csv", "residuals.csv", "cost_vs_N.csv"] {
        assert_eq!(std::fs::read(o1.join(name)).unwrap(), std::fs::read(o2.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn zero_noise_has_zero_stderr() {
    let dir = TempDir::new().unwrap();
    let mut c = quick_case();
    c["game"]["c_a"] = json!([[0.0, 0.0], [0.0, 0.0]]);
    c["game"]["c_d"] = json!([[0.0, 0.0], [0.0, 0.0]]);
    c["simulation"]["schedule"] = json!("empty");
    let out = dir.path().join("out");
    let o = dadg("simulate", &write_config(&dir, "c.json", &c), &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s: Value = serde_json::from_slice(&std::fs::read(out.join("mc_summary.json")).unwrap()).unwrap();
    assert_eq!(s["monte_carlo"]["stderr"], json!(0.0));
}

#[test]
fn schedule_file_round_trips_through_simulate() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(&dir, "c.json", &quick_case());
    assert!(dadg("optimize", &cfg, &out, &[]).status.success());
    std::fs::copy(out.join("schedule_optimal.csv"), dir.path().join("sched.csv")).unwrap();

    let mut c = quick_case();
    c["simulation"]["schedule"] = json!("file");
    c["simulation"]["schedule_file"] = json!("sched.csv");
    let from_file = dir.path().join("from_file");
    let o = dadg("simulate", &write_config(&dir, "f.json", &c), &from_file, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let direct = dir.path().join("direct");
    assert!(dadg("simulate", &cfg, &direct, &[]).status.success());

    let a: Value = serde_json::from_slice(&std::fs::read(from_file.join("mc_summary.json")).unwrap()).unwrap();
    let b: Value = serde_json::from_slice(&std::fs::read(direct.join("mc_summary.json")).unwrap()).unwrap();
    assert_eq!(a["schedules"], b["schedules"]);
    assert_eq!(a["monte_carlo"], b["monte_carlo"]);
}

#[test]
fn traces_are_written_per_trial() {
    let dir = TempDir::new().unwrap();
    let mut c = quick_case();
    c["simulation"]["traces"] = json!(3);
    let out = dir.path().join("out");
    assert!(dadg("simulate", &write_config(&dir, "c.json", &c), &out, &[]).status.success());
    for i in 0..3 {
        let (header, rows) = read_csv(&out.join(format!("traces/trial_{i}.csv")));
        assert_eq!(header[0], "t");
        assert_eq!(rows.len(), 201);
    }
    assert!(!out.join("traces/trial_3.csv").exists());
}

#[test]
fn formats_filter_outputs() {
    let dir = TempDir::new().unwrap();
    let mut c = quick_case();
    c["output"]["formats"] = json!(["json"]);
    let out = dir.path().join("out");
    assert!(dadg("riccati", &write_config(&dir, "c.json", &c), &out, &[]).status.success());
    assert!(!out.join("riccati_path.csv").exists());
}

#[test]
fn compare_reports_reduction_and_flags() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let o = dadg("compare", &write_config(&dir, "c.json", &quick_case()), &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r: Value = serde_json::from_slice(&std::fs::read(out.join("compare_report.json")).unwrap()).unwrap();
    let attacker = &r["players"][0];
    assert_eq!(attacker["player"], json!("attacker"));
    assert!(attacker["reduction_percent"].as_f64().unwrap() >= 30.0);
    assert_eq!(attacker["pass_residuals"], json!(true));
    let arms: Vec<&str> = r["arms"].as_array().unwrap().iter().map(|a| a["arm"].as_str().unwrap()).collect();
    assert_eq!(arms, ["empty", "optimal", "periodic"]);
    assert!(r["pass"].is_boolean());
}

#[test]
fn identical_arms_have_zero_reduction() {
    let dir = TempDir::new().unwrap();
    let mut c = quick_case();
    c["optimizer"]["count"] = json!(0);
    let out = dir.path().join("out");
    let o = dadg("compare", &write_config(&dir, "c.json", &c), &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r: Value = serde_json::from_slice(&std::fs::read(out.join("compare_report.json")).unwrap()).unwrap();
    for p in r["players"].as_array().unwrap() {
        assert_eq!(p["reduction_percent"], json!(0.0));
    }
}

#[test]
fn auto_count_without_price_needs_a_cap() {
    let dir = TempDir::new().unwrap();
    let mut c = quick_case();
    c["optimizer"]["count"] = json!("auto");
    c["game"]["obs_cost"] = json!(0.0);
    let o = dadg("optimize", &write_config(&dir, "c.json", &c), &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    c["optimizer"]["n_cap"] = json!(3);
    let out = dir.path().join("capped");
    let o = dadg("optimize", &write_config(&dir, "d.json", &c), &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (_, rows) = read_csv(&out.join("schedule_optimal.csv"));
    assert_eq!(rows.len(), 6);
}

#[test]
fn asset_swap_leaves_schedules_unchanged() {
    let dir = TempDir::new().unwrap();
    let mut moving = quick_case();
    moving["asset"] = json!({"kind": "linear", "generator": [[0.0, 0.2], [-0.2, 0.0]], "initial": [4.0, 1.0]});
    let mut sampled = quick_case();
    sampled["asset"] =
        json!({"kind": "sampled", "times": [0.0, 5.0, 10.0], "states": [[0.0, 0.0], [3.0, -1.0], [6.0, 2.0]]});
    let outs: Vec<PathBuf> = [("a.json", quick_case()), ("b.json", moving), ("c.json", sampled)]
        .iter()
        .map(|(name, c)| {
            let out = dir.path().join(name.replace(".json", ""));
            let o = dadg("optimize", &write_config(&dir, name, c), &out, &[]);
            assert!(o.status.success(), "{}", stderr(&o));
            out
        })
        .collect();
    for name in ["schedule_optimal.csv", "schedule_periodic.csv"] {
        let base = std::fs::read(outs[0].join(name)).unwrap();
        for out in &outs[1..] {
            assert_eq!(base, std::fs::read(out.join(name)).unwrap(), "{name}");
        }
    }
}

#[test]
fn missing_config_file_is_exit_2() {
    let dir = TempDir::new().unwrap();
    let o = dadg("riccati", &dir.path().join("nope.json"), &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
}
