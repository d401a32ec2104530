use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn radiocast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_radiocast"))
        .args(args)
        .output()
        .expect("spawn radiocast")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stderr).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stderr)))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_scenario(dir: &Path, seeds: Value) -> std::path::PathBuf {
    let s = json!({
        "schema_version": 1,
        "instance": {"kind": "line", "n": 8, "spacing": 0.7, "zeta": 5.0},
        "config": {
            "model": {"kind": "sinr"},
            "protocol": {"kind": "local_bcast"},
            "horizon": 64,
            "seed": 0
        },
        "sweep": {"seeds": seeds}
    });
    let path = dir.join("scenario.json");
    fs::write(&path, s.to_string()).unwrap();
    path
}

fn rows(csv: &Path) -> Vec<String> {
    fs::read_to_string(csv).unwrap().lines().map(str::to_owned).collect()
}

#[test]
fn gen_grid_reports_hop_diameter() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("grid.json");
    let o = radiocast(&["gen", "grid", "--w", "5", "--h", "5", "--out", p(&out)]);
    assert_eq!(code(&o), 0);
    let summary = stderr_json(&o);
    assert_eq!(summary["n"], 25);
    assert_eq!(summary["hop_diameter"], 8);
    assert_eq!(summary["pass"], true);
    assert_eq!(code(&radiocast(&["validate", p(&out)])), 0);
}

#[test]
fn gen_single_node() {
    let o = radiocast(&["gen", "euclidean", "--n", "1"]);
    assert_eq!(code(&o), 0);
    let inst: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(inst["nodes"].as_array().unwrap().len(), 1);
    assert_eq!(stderr_json(&o)["hop_diameter"], 0);
}

#[test]
fn gen_without_size_is_a_usage_error() {
    assert_eq!(code(&radiocast(&["gen", "line"])), 2);
    assert_eq!(code(&radiocast(&["gen", "grid", "--w", "3"])), 2);
}

#[test]
fn zero_loss_instance_is_rejected() {
    let dir = TempDir::new().unwrap();
    let o = radiocast(&["gen", "line", "--n", "3"]);
    let mut inst: Value = serde_json::from_slice(&o.stdout).unwrap();
    inst["losses"][0][2] = json!(0.0);
    let path = dir.path().join("bad.json");
    fs::write(&path, inst.to_string()).unwrap();
    assert_eq!(code(&radiocast(&["validate", p(&path)])), 2);
}

#[test]
fn empty_sweep_writes_header_only() {
    let dir = TempDir::new().unwrap();
    let scen = write_scenario(dir.path(), json!([]));
    let out = dir.path().join("out");
    let o = radiocast(&["run", p(&scen), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let agg = rows(&out.join("aggregate.csv"));
    assert_eq!(agg.len(), 1);
    assert!(agg[0].starts_with("key,n,model,seed"));
}

#[test]
fn sweep_has_one_row_per_seed_and_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let scen = write_scenario(dir.path(), json!({"start": 0, "end": 20}));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(code(&radiocast(&["run", p(&scen), "--out", p(&a), "--jobs", "4"])), 0);
    assert_eq!(code(&radiocast(&["run", p(&scen), "--out", p(&b), "--jobs", "1"])), 0);
    let agg = rows(&a.join("aggregate.csv"));
    assert_eq!(agg.len(), 21);
    assert!(agg[1..].iter().all(|r| r.ends_with(',')), "no error column set");
    assert_eq!(fs::read(a.join("aggregate.csv")).unwrap(), fs::read(b.join("aggregate.csv")).unwrap());
    assert_eq!(fs::read(a.join("groups.csv")).unwrap(), fs::read(b.join("groups.csv")).unwrap());
    assert_eq!(fs::read_dir(a.join("traces")).unwrap().count(), 20);
}

#[test]
fn report_replays_and_rejects_tampering() {
    let dir = TempDir::new().unwrap();
    let scen = write_scenario(dir.path(), json!([3]));
    let out = dir.path().join("out");
    assert_eq!(code(&radiocast(&["run", p(&scen), "--out", p(&out)])), 0);
    let trace = out.join("traces/sinr_s3.jsonl");
    let inst = out.join("instances/sinr_s3.json");
    let summary = dir.path().join("summary.csv");

    let o = radiocast(&["report", p(&trace), "--instance", p(&inst), "--replay", "--out", p(&summary)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["replayed"], true);
    assert_eq!(rows(&summary).len(), 9);

    let text = fs::read_to_string(&trace).unwrap();
    let tampered = text.replacen("\"round\":1,", "\"round\":9,", 1);
    assert_ne!(text, tampered);
    fs::write(&trace, tampered).unwrap();
    assert_eq!(code(&radiocast(&["report", p(&trace), "--instance", p(&inst)])), 3);
}

#[test]
fn schedule_over_budget_fails_validation() {
    let dir = TempDir::new().unwrap();
    let inst = dir.path().join("line.json");
    assert_eq!(code(&radiocast(&["gen", "line", "--n", "3", "--out", p(&inst)])), 0);
    let near = 0.05;
    let far = 2.744;
    let events: Vec<Value> = (1..=8)
        .map(|r| {
            let loss = if r % 2 == 1 { near } else { far };
            json!({"round": r, "type": "retune", "from": 0, "to": 2, "loss": loss})
        })
        .collect();
    let sched = json!({
        "events": events,
        "budget": {"tau": 0.1, "k": 8.0, "window": 8},
        "horizon": 16
    });
    let path = dir.path().join("sched.json");
    fs::write(&path, sched.to_string()).unwrap();

    assert_eq!(code(&radiocast(&["validate", p(&path)])), 2, "schedule needs --instance");
    let o = radiocast(&["validate", p(&path), "--instance", p(&inst)]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stdout));
    let rep: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(!rep["tau_violations"].as_array().unwrap().is_empty());
    assert!(rep["metricity_failures"].as_array().unwrap().is_empty());

    let calm = json!({"events": [], "horizon": 16});
    fs::write(&path, calm.to_string()).unwrap();
    assert_eq!(code(&radiocast(&["validate", p(&path), "--instance", p(&inst)])), 0);
}
