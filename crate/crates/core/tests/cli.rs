use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_integrability"))
}

fn spec(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn run(field: &Path, out: &Path, args: &[&str]) -> i32 {
    let status = bin()
        .arg("--field")
        .arg(field)
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .unwrap();
    status.status.code().unwrap()
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const CD: &str = r#"{"n": 2, "kind": "builtin", "family": "cobb_douglas", "params": [0.5, 0.5]}"#;
const ID: &str = r#"{"n": 2, "kind": "builtin", "family": "identity"}"#;
const NI: &str = r#"{"n": 3, "kind": "builtin", "family": "noninteg3"}"#;

#[test]
fn malformed_spec_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = spec(dir.path(), "bad.json", r#"{"n": 2, "kind": "expr", "components": ["x1 +", "x2"]}"#);
    let out = bin().arg("--field").arg(&bad).arg("--out").arg(dir.path()).arg("axioms").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("syntax error"));
    let not_json = spec(dir.path(), "nope.json", "{ n: ");
    assert_eq!(run(&not_json, dir.path(), &["axioms"]), 2);
    assert_eq!(run(&dir.path().join("missing.json"), dir.path(), &["axioms"]), 2);
    let field = spec(dir.path(), "cd.json", CD);
    assert_eq!(run(&field, dir.path(), &["--region", "2,1", "axioms"]), 2);
    assert_eq!(run(&field, dir.path(), &["prefer", "--x", "1,2,3", "--y", "1,1"]), 2);
}

#[test]
fn axiom_verdicts_are_data() {
    let dir = tempfile::tempdir().unwrap();
    let ni = spec(dir.path(), "ni.json", NI);
    assert_eq!(run(&ni, &dir.path().join("ni"), &["axioms", "--pairs", "200", "--points", "20"]), 0);
    let report = json(dir.path().join("ni/axioms.json"));
    let ville = report["verdicts"].as_array().unwrap().iter().find(|v| v["axiom"] == "Ville").unwrap();
    assert_eq!(ville["status"], "violated");

    let cd = spec(dir.path(), "cd.json", CD);
    assert_eq!(run(&cd, &dir.path().join("cd"), &["axioms", "--pairs", "200", "--points", "20"]), 0);
    let report = json(dir.path().join("cd/axioms.json"));
    for v in report["verdicts"].as_array().unwrap() {
        assert_eq!(v["status"], "no_violation_found", "{v}");
    }
}

#[test]
fn utility_grid_and_arcs_parse_back() {
    let dir = tempfile::tempdir().unwrap();
    let cd = spec(dir.path(), "cd.json", CD);
    let code = run(&cd, dir.path(), &["utility", "--point", "4,1", "--point", "2,2", "--grid", "50", "--trace", "2,0.5"]);
    assert_eq!(code, 0);
    let report = json(dir.path().join("utility.json"));
    assert!((report["values"][0]["u"].as_f64().unwrap() - 2.0).abs() < 1e-6);
    assert_eq!(report["values"][1]["u"].as_f64().unwrap(), 2.0);

    let mut grid = csv::Reader::from_path(dir.path().join("utility_grid.csv")).unwrap();
    assert_eq!(grid.headers().unwrap(), vec!["x1", "x2", "u"]);
    let rows: Vec<Vec<f64>> = grid
        .records()
        .map(|r| r.unwrap().iter().map(|c| c.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 2500);
    let diagonal: Vec<f64> = rows.iter().filter(|r| r[0] == r[1]).map(|r| r[2]).collect();
    assert_eq!(diagonal.len(), 50);
    assert!(diagonal.windows(2).all(|w| w[1] > w[0]));
    for r in &rows {
        assert!((r[2] - (r[0] * r[1]).sqrt()).abs() <= 1e-6 * r[2]);
    }

    let mut arc = csv::Reader::from_path(dir.path().join("indifference_0_0.csv")).unwrap();
    assert_eq!(arc.headers().unwrap(), vec!["t", "x1", "x2"]);
    let mut last_t = -1.0;
    for r in arc.records() {
        let r: Vec<f64> = r.unwrap().iter().map(|c| c.parse().unwrap()).collect();
        assert!(r[0] > last_t);
        last_t = r[0];
        assert!((r[1] * r[2] - 1.0).abs() < 1e-6);
    }
}

#[test]
fn prefer_reports_both_directions() {
    let dir = tempfile::tempdir().unwrap();
    let cd = spec(dir.path(), "cd.json", CD);
    assert_eq!(run(&cd, dir.path(), &["prefer", "--x", "4,1", "--y", "1,1"]), 0);
    let r = json(dir.path().join("prefer.json"));
    assert_eq!(r["report"]["verdict"], "strictly_preferred");
    let (f, b) = (r["report"]["u_forward"].as_f64().unwrap(), r["report"]["u_backward"].as_f64().unwrap());
    assert!((f - 2.0).abs() < 1e-6 && (b - 0.5).abs() < 1e-6);
}

#[test]
fn demand_over_a_budget_file() {
    let dir = tempfile::tempdir().unwrap();
    let cd = spec(dir.path(), "cd.json", CD);
    let budgets = spec(dir.path(), "budgets.json", r#"[{"p": [1, 1], "m": 2}, {"p": [1, 0.5], "m": 2}]"#);
    assert_eq!(run(&cd, dir.path(), &["demand", "--budgets", budgets.to_str().unwrap()]), 0);
    let r = json(dir.path().join("demand.json"));
    let expect = [[1.0, 1.0], [1.0, 2.0]];
    for (d, e) in r["demands"].as_array().unwrap().iter().zip(expect) {
        for i in 0..2 {
            assert!((d["x_star"][i].as_f64().unwrap() - e[i]).abs() < 1e-8);
        }
        assert_eq!(d["n_roots"], 1);
    }
    assert_eq!(r["warp"]["status"], "no_violation_found");
}

#[test]
fn pathological_dynamics_leave_the_domain() {
    let dir = tempfile::tempdir().unwrap();
    let id = spec(dir.path(), "id.json", ID);
    let args = ["dynamics", "--direction", "pathological", "--start", "0.5,1.5", "--local", "5", "--compact", "5"];
    assert_eq!(run(&id, dir.path(), &args), 0);
    let r = json(dir.path().join("dynamics.json"));
    assert_eq!(r["simulation"]["classification"], "left_domain");
    assert!(r["report"]["local"]["failures"].as_array().unwrap().iter().all(|f| f[1] == "left_domain"));
    let mut rdr = csv::Reader::from_path(dir.path().join("dynamics_trajectory.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap().get(0), Some("t"));
    assert!(rdr.records().count() > 1);
}

#[test]
fn cheat_records_absence_and_presence() {
    let dir = tempfile::tempdir().unwrap();
    let cd = spec(dir.path(), "cd.json", CD);
    assert_eq!(run(&cd, &dir.path().join("cd"), &["cheat"]), 0);
    assert_eq!(json(dir.path().join("cd/cheat.json"))["found"], false);

    let ni = spec(dir.path(), "ni.json", NI);
    assert_eq!(run(&ni, &dir.path().join("ni"), &["cheat"]), 0);
    let r = json(dir.path().join("ni/cheat.json"));
    assert_eq!(r["found"], true);
    assert_eq!(r["check"]["ok"], true);
    let mut curve = csv::Reader::from_path(dir.path().join("ni/ville_curve.csv")).unwrap();
    assert_eq!(curve.headers().unwrap(), vec!["t", "x1", "x2", "x3", "g_dot_xdot"]);
    let rows: Vec<Vec<f64>> = curve
        .records()
        .map(|r| r.unwrap().iter().map(|c| c.parse().unwrap()).collect())
        .collect();
    assert!(rows.len() >= 1000);
    assert!(rows.iter().all(|r| r[4] > 0.0));
    for leg in 1..=4 {
        let mut rdr = csv::Reader::from_path(dir.path().join(format!("ni/cheat_leg{leg}.csv"))).unwrap();
        assert_eq!(rdr.headers().unwrap().get(0), Some("t"));
        assert!(rdr.records().all(|r| r.unwrap().iter().all(|c| c.parse::<f64>().is_ok())));
    }
}

#[test]
fn field_eval_prints_value_and_jacobian() {
    let dir = tempfile::tempdir().unwrap();
    let ni = spec(dir.path(), "ni.json", NI);
    let out = bin().arg("--field").arg(&ni).arg("--out").arg(dir.path()).args(["field", "eval", "--point", "1,2,3"]).output().unwrap();
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["value"], serde_json::json!([2.0, 1.0, 1.0]));
    assert_eq!(v["jacobian"]["matrix"][0], serde_json::json!([0.0, 1.0, 0.0]));
}

#[test]
fn repeated_runs_write_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let ni = spec(dir.path(), "ni.json", NI);
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        assert_eq!(run(&ni, &out, &["axioms", "--pairs", "300", "--points", "30"]), 0);
        assert_eq!(run(&ni, &out, &["cheat", "--budget", "100"]), 0);
    }
    for file in ["axioms.json", "cheat.json", "ville_curve.csv"] {
        let a = std::fs::read(dir.path().join("a").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs");
    }
}
