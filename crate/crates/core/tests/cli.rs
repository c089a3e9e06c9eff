use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn probdmp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_probdmp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = probdmp(args);
    assert!(
        out.status.success(),
        "{args:?} failed with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    probdmp(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A dataset with `n_test` test demos per letter and a trained `c` model.
fn setup(n_test: usize) -> (tempfile::TempDir, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&[
        "gen-dataset",
        "--out",
        s(&data),
        "--seed",
        "42",
        "--n-train",
        "10",
        "--n-test",
        &n_test.to_string(),
    ]);
    let model = dir.path().join("c.json");
    ok(&[
        "train",
        "--demos",
        s(&data.join("letters/c/train")),
        "--out",
        s(&model),
    ]);
    (dir, data, model)
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines
        .next()
        .unwrap()
        .split(',')
        .map(str::to_string)
        .collect();
    let rows = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

#[test]
fn gen_dataset_and_train_are_reproducible() {
    let (dir, data, model) = setup(1);
    assert!(data.join("dataset.json").is_file());
    assert!(data.join("letters/z/test").is_dir());
    let again = dir.path().join("again.json");
    ok(&[
        "train",
        "--demos",
        s(&data.join("letters/c/train")),
        "--out",
        s(&again),
    ]);
    assert_eq!(fs::read(&model).unwrap(), fs::read(&again).unwrap());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("c.report.json")).unwrap())
            .unwrap();
    assert_eq!(report["n_demos"], 10);
}

#[test]
fn train_rejects_an_empty_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.json");
    assert_eq!(
        code(&["train", "--demos", s(dir.path()), "--out", s(&out)]),
        2
    );
    assert_eq!(
        code(&[
            "train",
            "--demos",
            s(&dir.path().join("nope")),
            "--out",
            s(&out)
        ]),
        2
    );
    assert!(!out.exists());
}

#[test]
fn rollout_writes_mean_and_std_columns() {
    let (dir, _, model) = setup(0);
    let out = dir.path().join("roll.csv");
    ok(&["rollout", "--model", s(&model), "--out", s(&out)]);
    let (header, rows) = read_csv(&out);
    assert_eq!(header, ["t", "x", "y", "x_std", "y_std"]);
    assert_eq!(rows.len(), 101);
    assert!(rows.iter().all(|r| r[3] >= 0.0 && r[4] >= 0.0));

    ok(&[
        "rollout",
        "--model",
        s(&model),
        "--out",
        s(&out),
        "--n-steps",
        "1",
        "--start",
        "-1,2",
        "--goal",
        "3,4",
    ]);
    let (_, rows) = read_csv(&out);
    // the first row carries only the start uncertainty
    let q0_std = 1e-8f64.sqrt();
    assert_eq!(rows, vec![vec![0.0, -1.0, 2.0, q0_std, q0_std]]);

    assert_eq!(
        code(&[
            "rollout",
            "--model",
            s(&model),
            "--out",
            s(&out),
            "--goal",
            "1,2,3"
        ]),
        2
    );
    assert_eq!(
        code(&[
            "rollout",
            "--model",
            s(&dir.path().join("missing.json")),
            "--out",
            s(&out)
        ]),
        2
    );
}

#[test]
fn deterministic_model_rolls_out_without_spread() {
    let (dir, _, model) = setup(0);
    let mut doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&model).unwrap()).unwrap();
    for dof in doc["dofs"].as_array_mut().unwrap() {
        let nb = dof["mean_w"].as_array().unwrap().len();
        dof["cov_w"] = serde_json::json!(vec![0.0; nb * nb]);
        dof["noise_var"] = serde_json::json!(0.0);
    }
    doc["q0"] = serde_json::json!(vec![0.0; 9]);
    let det = dir.path().join("det.json");
    fs::write(&det, doc.to_string()).unwrap();
    let out = dir.path().join("roll.csv");
    ok(&["rollout", "--model", s(&det), "--out", s(&out)]);
    let (_, rows) = read_csv(&out);
    assert!(rows.iter().all(|r| r[3] == 0.0 && r[4] == 0.0));
}

#[test]
fn monitor_classifies_nominal_and_held_executions() {
    let (dir, data, model) = setup(1);
    let demo = data.join("letters/c/test/c_test_00.csv");
    let report = dir.path().join("mon.json");
    let out = ok(&[
        "monitor",
        "--model",
        s(&model),
        "--observations",
        s(&demo),
        "--out",
        s(&report),
    ]);
    assert_eq!(out.trim(), "Nominal");
    let (header, rows) = read_csv(&dir.path().join("mon.loglik.csv"));
    assert_eq!(header, ["t", "loglik"]);
    assert_eq!(rows.len(), 101);

    let out = ok(&[
        "monitor",
        "--model",
        s(&model),
        "--observations",
        s(&demo),
        "--out",
        s(&report),
        "--hold",
        "0.5,0.5",
    ]);
    assert!(out.starts_with("Failed at step"), "{out}");
    let doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert!(doc["failure_step"].as_u64().unwrap() >= 50);
}

#[test]
fn monitor_needs_a_calibrated_model() {
    let (dir, data, model) = setup(1);
    let mut doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&model).unwrap()).unwrap();
    doc["train_loglik_min"] = serde_json::Value::Null;
    doc["monitor"] = serde_json::Value::Null;
    let raw = dir.path().join("raw.json");
    fs::write(&raw, doc.to_string()).unwrap();
    let demo = data.join("letters/c/test/c_test_00.csv");
    let out = dir.path().join("mon.json");
    assert_eq!(
        code(&[
            "monitor",
            "--model",
            s(&raw),
            "--observations",
            s(&demo),
            "--out",
            s(&out)
        ]),
        3
    );
    // a trajectory of another length is an input error
    let short = dir.path().join("short.csv");
    fs::write(&short, "t,x,y\n0,0,0\n0.01,1,1\n0.02,2,2\n").unwrap();
    assert_eq!(
        code(&[
            "monitor",
            "--model",
            s(&model),
            "--observations",
            s(&short),
            "--out",
            s(&out)
        ]),
        2
    );
    assert_eq!(
        code(&[
            "monitor",
            "--model",
            s(&model),
            "--observations",
            s(&demo),
            "--out",
            s(&out),
            "--hold",
            "0.5"
        ]),
        2
    );
}

#[test]
fn eval_reports_missing_models() {
    let (dir, data, _) = setup(1);
    let models = dir.path().join("models");
    fs::create_dir(&models).unwrap();
    fs::copy(dir.path().join("c.json"), models.join("c.json")).unwrap();
    let out = dir.path().join("eval.json");
    let res = probdmp(&[
        "eval",
        "--dataset",
        s(&data),
        "--models",
        s(&models),
        "--out",
        s(&out),
    ]);
    assert_eq!(res.status.code(), Some(3));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("a, b, d"), "{err}");
    assert!(!err.contains(" c,"), "{err}");
    assert_eq!(
        code(&[
            "eval",
            "--dataset",
            s(&dir.path().join("none")),
            "--out",
            s(&out)
        ]),
        3
    );
}

#[test]
fn eval_without_test_cases_is_an_empty_summary() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&[
        "gen-dataset",
        "--out",
        s(&data),
        "--n-train",
        "3",
        "--n-test",
        "0",
    ]);
    let out = dir.path().join("eval.json");
    let stdout = ok(&["eval", "--dataset", s(&data), "--out", s(&out)]);
    assert!(
        stdout.contains("false positives 0/0, detections 0/0"),
        "{stdout}"
    );
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(doc["n_test_cases"], 0);
}

#[test]
fn bad_arguments_exit_with_an_input_error() {
    assert_eq!(code(&["train"]), 2);
    assert_eq!(code(&["frobnicate"]), 2);
    assert_eq!(code(&["--help"]), 0);
}
