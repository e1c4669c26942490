use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn data(name: &str) -> String {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "data", name].iter().collect();
    p.to_string_lossy().into_owned()
}

fn sosrelax(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sosrelax")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn strip_timing(v: &mut Value) {
    match v {
        Value::Object(map) => {
            map.remove("wall_ms");
            map.values_mut().for_each(strip_timing);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

#[test]
fn help_exits_zero() {
    let out = sosrelax(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["sphere-min", "stable-set", "stable-set-rdsos", "partition", "pop-polya", "dcd", "solve-conic"] {
        assert!(text.contains(sub), "help lists {sub}");
    }
}

#[test]
fn stable_set_base_bound() {
    let g = data("petersen_complement.dimacs");
    let out = sosrelax(&["stable-set", "--graph", &g, "--cone", "sdsos", "--iters", "7"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    let bounds = v["bounds"].as_array().unwrap();
    assert!((bounds[0].as_f64().unwrap() - 4.0).abs() < 0.01);
    for key in ["instance", "params", "wall_ms"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn partition_is_refuted() {
    let out = sosrelax(&["partition", "1", "2", "2", "1", "1", "--cone", "dsos", "--iters", "10", "--verify"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert_eq!(v["refuted"], Value::Bool(true));
    assert_eq!(v["nonhomogeneous_feasible"], Value::Bool(false));
}

#[test]
fn dcd_certificates_replay() {
    let out = sosrelax(&["dcd", "--poly", &data("quartic.json"), "--verify"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(&out)["certificates"].as_array().unwrap().len(), 2);
}

#[test]
fn identical_runs_give_identical_json() {
    let args = ["stable-set", "--graph", &data("petersen_complement.dimacs"), "--mode", "lp-triples", "--iters", "3"];
    let mut a = json(&sosrelax(&args));
    let mut b = json(&sosrelax(&args));
    strip_timing(&mut a);
    strip_timing(&mut b);
    assert_eq!(a, b);
}

#[test]
fn malformed_input_reports_line_and_exits_two() {
    let dir = std::env::temp_dir().join(format!("sosrelax-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let bad = dir.join("bad.dimacs");
    std::fs::write(&bad, "c header\np edge 3 1\ne 1 x\n").unwrap();
    let out = sosrelax(&["stable-set", "--graph", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    let missing = sosrelax(&["dcd", "--poly", dir.join("missing.json").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));
    let zero = sosrelax(&["partition", "1", "0"]);
    assert_eq!(zero.status.code(), Some(2));
}

#[test]
fn infeasible_program_exits_three() {
    let dir = std::env::temp_dir().join(format!("sosrelax-cli-inf-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    // x ≥ 1 and x ≤ 0 as  x − s1 = 1,  x + s2 = 0
    let prog = r#"{"nrows": 2, "c": [0.0, 0.0, 0.0], "cols": [[[0, 1.0], [1, 1.0]], [[0, -1.0]], [[1, 1.0]]], "b": [1.0, 0.0], "cones": [{"NonNeg": 3}]}"#;
    let path = dir.join("inf.json");
    std::fs::write(&path, prog).unwrap();
    let out = sosrelax(&["solve-conic", "--program", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(json(&out)["solution"]["status"], Value::String("PrimalInfeasible".into()));
}

#[test]
fn solve_conic_and_dump() {
    let dir = std::env::temp_dir().join(format!("sosrelax-cli-dump-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let dump = dir.join("dump.txt");
    let res = dir.join("res.json");
    let out = sosrelax(&[
        "solve-conic",
        "--program",
        &data("small_lp.json"),
        "--verify",
        "--dump-conic",
        dump.to_str().unwrap(),
        "--out",
        res.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&res).unwrap()).unwrap();
    assert!((v["bounds"][0].as_f64().unwrap() - 1.0).abs() < 1e-7);
    assert!(v["verify"]["gap"].as_f64().unwrap() < 1e-7);
    assert!(std::fs::read_to_string(&dump).unwrap().starts_with("# program 0\nrows 1 cols 2"));
}

#[test]
fn pop_levels_and_sphere_bound() {
    let out = sosrelax(&["pop-polya", "--pop", &data("toy_pop.json"), "--rmax", "2", "--verify"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert_eq!(v["levels"].as_array().unwrap().len(), 2);

    let out = sosrelax(&["sphere-min", "--poly", &data("sum_of_fourth_powers.json"), "--iters", "2", "--verify"]);
    assert_eq!(out.status.code(), Some(0));
    assert!((json(&out)["bounds"][0].as_f64().unwrap() - 0.5).abs() < 1e-6);
}
