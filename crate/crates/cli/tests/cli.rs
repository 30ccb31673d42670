use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use detprep::protocol::DetFtProtocol;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_detprep")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn synth_into(dir: &Path, name: &str, extra: &[&str]) -> Output {
    let mut args = vec!["synth", name, "--out", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args)
}

fn metrics_row(dir: &Path, name: &str) -> String {
    let s = fs::read_to_string(dir.join(format!("{name}.metrics.csv"))).unwrap();
    s.lines().nth(1).unwrap().to_string()
}

#[test]
fn codes_list_and_show() {
    let o = run(&["codes", "list"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).lines().any(|l| l == "steane [[7,1,3]]"));
    let o = run(&["codes", "show", "steane"]);
    assert_eq!(code(&o), 0);
    let gens: Vec<String> = stdout(&o).lines().filter(|l| l.len() == 7 && l.chars().all(|c| "IXZ".contains(c))).map(String::from).collect();
    assert_eq!(gens, ["XXIIXXI", "XIXIXIX", "IIIXXXX", "ZZIIZZI", "ZIZIZIZ", "IIIZZZZ"]);
    assert_eq!(code(&run(&["codes", "show", "nosuch"])), 1);
}

#[test]
fn synth_steane_then_check() {
    let dir = tempfile::tempdir().unwrap();
    let o = synth_into(dir.path(), "steane", &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("total ancillas 1, total CNOTs 3"));
    assert!(metrics_row(dir.path(), "steane").starts_with("steane,7,1,3,1,,3,,[1],,[3],"));
    assert!(fs::read_to_string(dir.path().join("steane.circuit.txt")).unwrap().lines().count() > 10);
    let json = dir.path().join("steane.json");
    assert_eq!(code(&run(&["check", json.to_str().unwrap()])), 0);
}

#[test]
fn global_surface_matches_default() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(code(&synth_into(a.path(), "surface9", &[])), 0);
    assert_eq!(code(&synth_into(b.path(), "surface9", &["--global"])), 0);
    assert_eq!(metrics_row(a.path(), "surface9"), metrics_row(b.path(), "surface9"));
}

#[test]
fn zero_budget_is_partial() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&synth_into(dir.path(), "steane", &["--global", "--budget", "0"])), 3);
    let p = DetFtProtocol::from_json_str(&fs::read_to_string(dir.path().join("steane.json")).unwrap()).unwrap();
    assert!(p.truncated);
    assert_eq!(p.metrics().unwrap().sum_cnot, 3);
}

#[test]
fn code_reduction_is_infeasible_for_steane() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&synth_into(dir.path(), "steane", &["--reduction", "code"])), 2);
}

#[test]
fn input_and_output_errors() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let locked = blocker.join("out");
    assert_eq!(code(&synth_into(&locked, "steane", &[])), 1);
    assert_eq!(code(&synth_into(dir.path(), "nosuch", &[])), 1);
    let missing = dir.path().join("missing.json");
    assert_eq!(code(&run(&["check", missing.to_str().unwrap()])), 1);
    assert_eq!(code(&run(&["simulate", missing.to_str().unwrap()])), 1);
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"code\": 3").unwrap();
    assert_eq!(code(&run(&["check", bad.to_str().unwrap()])), 1);
}

#[test]
fn corrupted_recovery_fails_check() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&synth_into(dir.path(), "steane", &[])), 0);
    let path = dir.path().join("steane.json");
    let mut p = DetFtProtocol::from_json_str(&fs::read_to_string(&path).unwrap()).unwrap();
    for b in p.layers.iter_mut().flat_map(|l| l.branches.iter_mut()) {
        for v in b.recovery.values_mut() {
            v.clear();
        }
    }
    fs::write(&path, p.to_json_string().unwrap()).unwrap();
    let o = run(&["check", path.to_str().unwrap()]);
    assert_eq!(code(&o), 4);
    assert!(stdout(&o).contains("violations"));
}

#[test]
fn simulate_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(code(&synth_into(dir.path(), "steane", &[])), 0);
    let json = dir.path().join("steane.json");
    let j = json.to_str().unwrap();

    let o = run(&["simulate", j, "--p", "0,0", "--shots", "5000", "--out", d]);
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(dir.path().join("steane.sim.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "p,shots,errors,ler,ci");
    for line in csv.lines().skip(1) {
        assert_eq!(line.split(',').nth(3).unwrap(), "0");
    }

    let args = ["simulate", j, "--p", "0.001,0.003,0.01", "--shots", "2000000", "--seed", "11", "--out", d];
    let first = run(&args);
    assert_eq!(code(&first), 0);
    let csv1 = fs::read_to_string(dir.path().join("steane.sim.csv")).unwrap();
    let out = stdout(&first);
    let slope: f64 = out.lines().find_map(|l| l.strip_prefix("slope ")).unwrap().parse().unwrap();
    assert!((1.7..=2.3).contains(&slope), "slope {slope}");
    let sim: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("steane.sim.json")).unwrap()).unwrap();
    assert_eq!(sim["results"].as_array().unwrap().len(), 3);
    assert!(sim["slope"].is_number());
    assert_eq!(code(&run(&args)), 0);
    assert_eq!(fs::read_to_string(dir.path().join("steane.sim.csv")).unwrap(), csv1);
}
