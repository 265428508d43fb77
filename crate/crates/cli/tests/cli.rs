use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use stlbnn::experiments::{build_experiment, ExperimentConfig, ImmunePlantParams};

fn stlbnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stlbnn"))
        .args(args)
        .env("STLBNN_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// Static config shrunk to a 2×2 grid and a couple of iterations.
fn tiny_static(dir: &Path) -> PathBuf {
    let text = fs::read_to_string(configs_dir().join("static.toml")).unwrap();
    let text = text
        .replace("count = 11", "count = 2")
        .replace("iterations = 3000", "iterations = 3");
    let path = dir.join("tiny.toml");
    fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn monitor_prints_robustness() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.csv");
    fs::write(&trace, "t,s1\n0,3\n1,1\n2,2\n").unwrap();
    let grad = dir.path().join("g.csv");
    let out = stlbnn(&["monitor", "--formula", "G[0,2] s1 > 0", "--trace", s(&trace), "--gradient", s(&grad)]);
    assert!(out.status.success());
    assert_eq!(stdout(&out).trim(), "rho=1 satisfied=true");
    let g = fs::read_to_string(&grad).unwrap();
    assert_eq!(g.lines().collect::<Vec<_>>(), ["t,s1", "0,0", "1,1", "2,0"]);
}

#[test]
fn monitor_reads_formula_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.csv");
    fs::write(&trace, "t,s1\n0,3\n1,1\n2,2\n").unwrap();
    let f = dir.path().join("phi.stl");
    fs::write(&f, "F[0,2] s1 > 2.5\n").unwrap();
    let out = stlbnn(&["monitor", "--formula", s(&f), "--trace", s(&trace)]);
    assert_eq!(stdout(&out).trim(), "rho=0.5 satisfied=true");
}

#[test]
fn exit_codes_follow_failure_class() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.csv");
    fs::write(&trace, "t,s1\n0,3\n").unwrap();
    let bad_formula = stlbnn(&["monitor", "--formula", "G[0,2 s1 > 0", "--trace", s(&trace)]);
    assert_eq!(bad_formula.status.code(), Some(1));
    let missing = stlbnn(&["monitor", "--formula", "s1 > 0", "--trace", s(&dir.path().join("none.csv"))]);
    assert_eq!(missing.status.code(), Some(3));
    assert_eq!(stlbnn(&["train", "--bogus"]).status.code(), Some(1));

    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "name = 3\n").unwrap();
    let malformed = stlbnn(&["eval", "--config", s(&cfg), "--params", "p.json"]);
    assert_eq!(malformed.status.code(), Some(1));

    // A step budget of one cannot cover the horizon.
    let text = fs::read_to_string(tiny_static(dir.path())).unwrap();
    let starved = dir.path().join("starved.toml");
    fs::write(&starved, text.replace("max_steps = 200000", "max_steps = 1")).unwrap();
    let out = stlbnn(&["simulate", "--config", s(&starved), "--out", s(&dir.path().join("x.csv"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn shipped_configs_match_builtins() {
    for id in ["static", "dynamic", "control"] {
        let cfg = ExperimentConfig::load(&configs_dir().join(format!("{id}.toml"))).unwrap();
        assert_eq!(cfg, build_experiment(id).unwrap(), "{id}");
    }
    let text = fs::read_to_string(configs_dir().join("immune_plant.json")).unwrap();
    let plant: ImmunePlantParams = serde_json::from_str(&text).unwrap();
    assert_eq!(plant, ImmunePlantParams::default());
}

#[test]
fn gen_data_writes_condition_sets() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("static");
    assert!(stlbnn(&["gen-data", "--experiment", "static", "--out", s(&out)]).status.success());
    let train = fs::read_to_string(out.join("train.csv")).unwrap();
    assert_eq!(train.lines().count(), 122);
    assert!(train.starts_with("condition,x_P,x_M,r\n"));
    assert!(fs::read_to_string(out.join("test.csv")).unwrap().contains("0.05"));
    assert!(out.join("manifest.json").is_file());

    let out = dir.path().join("control");
    let run = stlbnn(&["gen-data", "--experiment", "control", "--split", "test", "--out", s(&out)]);
    assert!(run.status.success());
    let test = fs::read_to_string(out.join("test.csv")).unwrap();
    assert_eq!(test.lines().count(), 401);
    assert!(test.lines().any(|l| l.ends_with(",12.5,25")));

    let a = dir.path().join("dyn_a");
    let b = dir.path().join("dyn_b");
    for d in [&a, &b] {
        let run = stlbnn(&["gen-data", "--experiment", "dynamic", "--split", "train", "--seed", "7", "--out", s(d)]);
        assert!(run.status.success());
    }
    let index = fs::read_to_string(a.join("train_index.csv")).unwrap();
    assert_eq!(index.lines().count(), 151);
    let first = fs::read_to_string(a.join("train/trajectory_000.csv")).unwrap();
    assert_eq!(first.lines().next(), Some("t,x_P,x_M,r"));
    assert_eq!(first.lines().count(), 82);
    assert_eq!(first, fs::read_to_string(b.join("train/trajectory_000.csv")).unwrap());
}

fn without_clock(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("wall_clock_s");
    v
}

#[test]
fn train_writes_reproducible_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_static(dir.path());
    let runs: Vec<PathBuf> = ["a", "b"].iter().map(|n| dir.path().join(n)).collect();
    for run in &runs {
        let out = stlbnn(&["train", "--config", s(&cfg), "--seed", "3", "--out", s(run)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        for f in ["manifest.json", "report.json", "params.json", "loss.csv"] {
            assert!(run.join(f).is_file(), "{f}");
        }
    }
    let report = |d: &Path| -> Value { serde_json::from_str(&fs::read_to_string(d.join("report.json")).unwrap()).unwrap() };
    assert_eq!(without_clock(report(&runs[0])), without_clock(report(&runs[1])));
    let loss = fs::read_to_string(runs[0].join("loss.csv")).unwrap();
    assert_eq!(loss.lines().next(), Some("iteration,loss,satisfaction"));
    let manifest: Value = serde_json::from_str(&fs::read_to_string(runs[0].join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["config"]["task"]["axis"]["count"], 2);

    let params = runs[0].join("params.json");
    let eval_dir = dir.path().join("eval");
    let out = stlbnn(&["eval", "--config", s(&cfg), "--params", s(&params), "--split", "train", "--out", s(&eval_dir)]);
    assert!(out.status.success());
    let line = stdout(&out);
    let sat: f64 = line.trim().strip_prefix("satisfaction=").unwrap().parse().unwrap();
    assert_eq!(sat, report(&runs[0])["train_satisfaction"].as_f64().unwrap());
    assert_eq!(fs::read_to_string(eval_dir.join("conditions.csv")).unwrap().lines().count(), 5);

    let trace = dir.path().join("trace.csv");
    let out = stlbnn(&["simulate", "--config", s(&cfg), "--params", s(&params), "--condition", "3", "--out", s(&trace)]);
    assert!(out.status.success());
    let text = fs::read_to_string(&trace).unwrap();
    assert_eq!(text.lines().next(), Some("t,x_P,x_M,y,g,r"));
    assert_eq!(text.lines().count(), 22);
}

#[test]
fn gradcheck_reports_agreement() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_static(dir.path());
    let out = stlbnn(&["gradcheck", "--config", s(&cfg), "--seed", "2", "--eps", "1e-4"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let last = text.lines().last().unwrap();
    assert!(last.contains("passed="), "{last}");
    assert_eq!(text.lines().count(), 2 + 18);
}
