use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn netgame(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_netgame")).args(args).env_remove("NETGAME_MAX_ITER").output().unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const PAIR: &str = r#"{
  "n": 2, "b": [0.2, 0.3], "c": [1.0, 1.0], "rho": 0.3,
  "s": [[0.0, -0.004], [-0.004, 0.0]], "f": [[0.0, 1.0], [1.0, 0.0]],
  "budget": 0.05,
  "welfare": {"kind": "weighted-action-sum", "weights": [1.0, 1.0]}
}"#;

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn solve_reports_the_equilibrium() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "pair.json", PAIR);
    let out = netgame(&["solve", "--instance", &path]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert_eq!(v["exists"], true);
    assert!(v["foc_residual_max"].as_f64().unwrap() < 1e-8);
    // rho a_1 a_2 outweighs the negative link incentive, so links form and lift actions above b / c
    let a = v["profile"]["a"].as_array().unwrap();
    assert!(a[0].as_f64().unwrap() > 0.2 && a[1].as_f64().unwrap() > 0.3);
    assert!(v["profile"]["g"][0][1].as_f64().unwrap() > 0.0);
}

#[test]
fn solve_with_an_intervention_and_power_family() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"{
      "n": 2, "b": [0.2, 0.3], "c": [1.0, 1.0], "rho": 0.3,
      "s": [[0.0, 0.1], [0.1, 0.0]], "f": [[0.0, 0.5], [0.5, 0.0]],
      "intervention": {"beta": [0.1, 0.0], "sigma": [[0.0, 0.02], [0.02, 0.0]]},
      "general": {"eta": [2.0, 2.0], "gamma": [[0.0, 2.0], [2.0, 0.0]], "kappa": [[0.0, 1.0], [1.0, 0.0]], "omega": [[0.0, 1.0], [1.0, 0.0]]}
    }"#;
    let path = write(dir.path(), "general.json", body);
    let general = json(&netgame(&["solve", "--instance", &path]));
    let quad_body = body.replace("[[0.0, 0.5], [0.5, 0.0]]", "[[0.0, 1.0], [1.0, 0.0]]");
    let quad_body = quad_body.split(",\n      \"general\"").next().unwrap().to_string() + "}";
    let qpath = write(dir.path(), "quad.json", &quad_body);
    let quad = json(&netgame(&["solve", "--instance", &qpath]));
    for k in 0..2 {
        let x = general["profile"]["a"][k].as_f64().unwrap();
        let y = quad["profile"]["a"][k].as_f64().unwrap();
        assert!((x - y).abs() < 1e-10);
    }
}

#[test]
fn optimize_emits_the_intervention_and_structure() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "pair.json", PAIR);
    let out = netgame(&["optimize", "--instance", &path, "--budget", "0.05", "--starts", "4"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert!((v["payment"].as_f64().unwrap() - 0.05).abs() < 1e-9);
    assert_eq!(v["kkt"]["clean"], true);
    assert_eq!(v["structure"]["pairs"][0]["verdict"], "pass");
    let sigma = v["intervention"]["sigma"][0][1].as_f64().unwrap();
    assert!((sigma - 0.002).abs() < 1e-4);

    let out = netgame(&["optimize", "--instance", &path, "--mode", "links", "--benchmark", "--starts", "2"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["mode"], "links-only");
}

#[test]
fn usage_and_input_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "pair.json", PAIR);
    assert_eq!(netgame(&["optimize", "--instance", &path, "--mode", "sideways"]).status.code(), Some(1));
    assert_eq!(netgame(&["solve", "--instance", "/nonexistent.json"]).status.code(), Some(1));
    assert_eq!(netgame(&["campaign", "--theorem", "4", "--out", "x.json"]).status.code(), Some(1));
    let bad = write(dir.path(), "bad.json", &PAIR.replace("0.3,\n", "-0.3,\n"));
    assert_eq!(netgame(&["solve", "--instance", &bad]).status.code(), Some(1));
    let unbudgeted = write(dir.path(), "nobudget.json", &PAIR.replace("\"budget\": 0.05,", ""));
    assert_eq!(netgame(&["optimize", "--instance", &unbudgeted]).status.code(), Some(1));
}

#[test]
fn iteration_cap_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let body = PAIR.replace("-0.004", "0.3");
    let path = write(dir.path(), "linked.json", &body);
    let out = Command::new(env!("CARGO_BIN_EXE_netgame"))
        .args(["solve", "--instance", &path])
        .env("NETGAME_MAX_ITER", "1")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("converge"));
    let out = Command::new(env!("CARGO_BIN_EXE_netgame"))
        .args(["solve", "--instance", &path])
        .env("NETGAME_MAX_ITER", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn example1_csv_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = netgame(&[
            "example1", "--n-min", "2", "--n-max", "3", "--reps", "2", "--seed", "5", "--starts", "4", "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(out).unwrap()
    };
    let first = run("a.csv");
    assert_eq!(first, run("b.csv"));
    let text = String::from_utf8(first).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("n,rep,seed,w_opt,w_linkonly,ratio,kkt_clean"));
    assert_eq!(lines.count(), 4);
}

#[test]
fn campaign_writes_a_verdict_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("thm1.json");
    let o = netgame(&["campaign", "--theorem", "1", "--reps", "2", "--seed", "3", "--starts", "2", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&std::fs::read(out).unwrap()).unwrap();
    assert_eq!(v["blocks"].as_array().unwrap().len(), 2);
    assert_eq!(v["records"].as_array().unwrap().len(), 4);
    assert_eq!(v["config"]["theorem"], 1);
}
