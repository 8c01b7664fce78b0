use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ravenlet::driver::{build_plan, load_catalog, load_model, read_text};
use ravenlet::fixtures::covid_pipeline;
use ravenlet::pipeline::{save_pipeline, DecisionTree, MlOperator, TreeNode};

fn demo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demo/covid")
}

fn raven(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_raven"))
        .args(args)
        .output()
        .expect("raven runs")
}

fn covid_args<'a>(cmd: &'a str, d: &'a Path, extra: &[&'a str]) -> Vec<String> {
    let mut v: Vec<String> = vec![
        cmd.into(),
        "--query".into(),
        d.join("query.sql").display().to_string(),
        "--model".into(),
        d.join("covid_risk.json").display().to_string(),
        "--catalog".into(),
        d.join("catalog.json").display().to_string(),
        "--data".into(),
        d.display().to_string(),
    ];
    v.extend(extra.iter().map(|s| s.to_string()));
    v
}

fn run_covid(cmd: &str, extra: &[&str]) -> Output {
    let d = demo();
    let args = covid_args(cmd, &d, extra);
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    raven(&refs)
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

const EXPECTED: &str = "pi.pid,risk_of_covid\n1,1\n4,1\n7,1\n";

#[test]
fn run_prints_the_predicted_rows() {
    let stats = demo().join("stats.json").display().to_string();
    for extra in [vec![], vec!["--passes", "none"], vec!["--stats", stats.as_str()]] {
        let o = run_covid("run", &extra);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(stdout(&o), EXPECTED, "{extra:?}");
    }
}

#[test]
fn every_pass_list_gives_the_same_result() {
    let stats = demo().join("stats.json").display().to_string();
    for passes in [
        "pred_prune",
        "proj_pushdown",
        "data_induced",
        "pred_prune,proj_pushdown",
        "all",
        "pred_prune,ml2sql",
        "ml2dnn",
    ] {
        let o = run_covid("run", &["--passes", passes, "--stats", &stats, "--strategy", "none"]);
        assert_eq!(o.status.code(), Some(0), "{passes}: {}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(stdout(&o), EXPECTED, "{passes}");
    }
}

#[test]
fn passes_none_emits_the_unoptimized_plan() {
    let o = run_covid("optimize", &["--passes", "none", "--strategy", "none"]);
    assert_eq!(o.status.code(), Some(0));
    let mut doc: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    // The strategy's note is the only addition.
    let notes = doc[0]["plan"].as_object_mut().unwrap().remove("notes").unwrap();
    assert_eq!(notes, serde_json::json!(["strategy chose NoTransform: strategy disabled"]));
    let d = demo();
    let plan = build_plan(
        &read_text(&d.join("query.sql")).unwrap(),
        &load_model(&d.join("covid_risk.json")).unwrap(),
        &load_catalog(&d.join("catalog.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(doc[0]["plan"], serde_json::to_value(&plan).unwrap());
    assert_eq!(doc.as_array().unwrap().len(), 1);
}

#[test]
fn emit_formats() {
    let sql = stdout(&run_covid("optimize", &["--emit", "sql"]));
    assert!(sql.contains("CASE WHEN pi.age > 60"), "{sql}");
    assert!(!sql.contains("bpm"), "{sql}");
    let dot = stdout(&run_covid("optimize", &["--emit", "dot"]));
    assert!(dot.starts_with("digraph"), "{dot}");
    let tensor: serde_json::Value = serde_json::from_str(&stdout(&run_covid("optimize", &["--emit", "tensor"]))).unwrap();
    assert_eq!(tensor.as_array().unwrap().len(), 1);
    let explain = stdout(&run_covid("optimize", &["--emit", "explain"]));
    assert!(explain.contains("f0 > 60"), "{explain}");
}

#[test]
fn out_writes_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.csv");
    let o = run_covid("run", &["--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());
    assert_eq!(fs::read_to_string(out).unwrap(), EXPECTED);
}

#[test]
fn compare_reports_full_agreement() {
    let o = run_covid("compare", &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report = stdout(&o);
    assert!(report.contains("label agreement: 100.000%"), "{report}");
    assert!(report.contains("scanned columns: 7 -> 6"), "{report}");
}

fn flip_leaves(t: &DecisionTree) -> DecisionTree {
    let mut t = t.clone();
    for n in &mut t.nodes {
        if let TreeNode::Leaf { value } = n {
            value[0] = 1.0 - value[0];
        }
    }
    t
}

#[test]
fn compare_fails_against_a_different_model() {
    let mut p = covid_pipeline();
    for n in &mut p.nodes {
        if let MlOperator::TreeEnsemble { trees, .. } = &mut n.op {
            *trees = trees.iter().map(flip_leaves).collect();
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let baseline = dir.path().join("flipped.json");
    fs::write(&baseline, save_pipeline(&p).unwrap()).unwrap();
    let o = run_covid("compare", &["--baseline-model", baseline.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
}

#[test]
fn empty_tables_give_a_header_only_result() {
    let dir = tempfile::tempdir().unwrap();
    for (t, header) in [
        ("patient_info", "pid,age,gender,asthma"),
        ("blood_test", "pid,glucose"),
        ("pulmonary_test", "pid,bpm"),
    ] {
        fs::write(dir.path().join(format!("{t}.csv")), format!("{header}\n")).unwrap();
    }
    let d = demo();
    let mut args = covid_args("run", &d, &[]);
    let data_at = args.iter().position(|a| a == "--data").unwrap() + 1;
    args[data_at] = dir.path().display().to_string();
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let o = raven(&refs);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o), "pi.pid,risk_of_covid\n");
}

#[test]
fn stats_prints_pipeline_statistics() {
    let model = demo().join("covid_risk.json");
    let o = raven(&["stats", "--model", model.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["n_pipeline_inputs"], 4.0);
    assert_eq!(v["n_model_features"], 6.0);
    assert_eq!(v["n_trees"], 1.0);
}

#[test]
fn user_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad_query = dir.path().join("q.sql");
    fs::write(&bad_query, "SELECT PREDICT(m, *) AS p FROM patient_info WHERE age = 1 OR age = 2").unwrap();
    let missing = dir.path().join("nope.json");
    let to_dnn = dir.path().join("dnn.json");
    fs::write(&to_dnn, r#"{"choice": "MLtoDNN"}"#).unwrap();
    let force_dnn = format!("table:{}", to_dnn.display());
    let d = demo();
    let cases: Vec<Vec<String>> = vec![
        vec!["run".into()],
        covid_args("run", &d, &["--passes", "warp_speed"]),
        covid_args("run", &d, &["--strategy", "coin_flip"]),
        covid_args("run", &d, &["--stats", missing.to_str().unwrap()]),
        {
            let mut a = covid_args("run", &d, &[]);
            a[2] = bad_query.display().to_string();
            a
        },
        covid_args("frobnicate", &d, &[]),
        covid_args("optimize", &d, &["--strategy", &force_dnn, "--emit", "sql"]),
    ];
    for args in cases {
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let o = raven(&refs);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!o.stderr.is_empty());
    }
}
