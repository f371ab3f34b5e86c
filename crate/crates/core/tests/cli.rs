use std::path::Path;
use std::process::{Command, Output};

fn scis(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scis"))
        .args(args)
        .current_dir(dir)
        .env_remove("SCIS_THREADS")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = scis(dir, args);
    assert!(out.status.success(), "`{}`: {}", args.join(" "), String::from_utf8_lossy(&out.stderr));
    out
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Small datasets, a baseline, a dictionary and a causal model in `dir`.
fn artifacts(dir: &Path) {
    ok(dir, &["--seed", "5", "--out", "train.jsonl", "generate", "--n", "60"]);
    ok(dir, &["--seed", "5", "--out", "val.jsonl", "generate", "--n", "30", "--split", "val"]);
    ok(dir, &["--seed", "5", "--out", "base.json", "pretrain", "--data", "train.jsonl", "--epochs", "1"]);
    ok(dir, &["--seed", "5", "--out", "dict.json", "build-dict", "--model", "base.json", "--data", "train.jsonl"]);
    ok(dir, &["--seed", "5", "--out", "full.json", "train", "--data", "train.jsonl", "--dict", "dict.json", "--pdm", "--idm", "--epochs", "1"]);
}

#[test]
fn exit_codes_for_help_version_and_usage() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(scis(dir.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(scis(dir.path(), &["--version"]).status.code(), Some(0));
    assert_eq!(scis(dir.path(), &[]).status.code(), Some(1));
    assert_eq!(scis(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(scis(dir.path(), &["--format", "xml", "scm", "backdoor", "--s", "O", "--y", "A"]).status.code(), Some(1));
    assert_eq!(scis(dir.path(), &["generate", "--n", "3"]).status.code(), Some(1), "--out is required");
    let missing = scis(dir.path(), &["--out", "r.json", "eval", "--model", "nope.json", "--data", "nope.jsonl"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(stderr(&missing).contains("does not exist"));
}

#[test]
fn bad_thread_count_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_scis"))
        .args(["scm", "backdoor", "--s", "O", "--y", "A"])
        .env("SCIS_THREADS", "0")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("SCIS_THREADS"));
}

#[test]
fn scm_queries() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let json = |o: Output| -> serde_json::Value { serde_json::from_slice(&o.stdout).unwrap() };

    let v = json(ok(d, &["scm", "backdoor", "--s", "O", "--y", "Y_o"]));
    assert!(v["paths"].as_array().unwrap().iter().any(|p| p == "O <- Z_o -> Y_o"));

    let v = json(ok(d, &["scm", "dsep", "--x", "O", "--y", "M", "--z", "B"]));
    assert_eq!(v["d_separated"], true);
    let v = json(ok(d, &["scm", "dsep", "--x", "O", "--y", "M", "--z", "B,A"]));
    assert_eq!(v["d_separated"], false);

    let p1 = |v: &serde_json::Value| v["probs"][1].as_f64().unwrap();
    assert!((p1(&json(ok(d, &["scm", "interventional", "--y", "Y", "--do", "S=1"]))) - 0.8).abs() < 1e-12);
    assert!((p1(&json(ok(d, &["scm", "observational", "--y", "Y", "--given", "S=1"]))) - 0.88).abs() < 1e-12);
    assert!((p1(&json(ok(d, &["scm", "adjust", "--y", "Y", "--s", "S=1", "--z", "Z"]))) - 0.8).abs() < 1e-12);

    // A file-backed model and its backdoor graph.
    let file = serde_json::to_string(&scis::causal::confounded_triple().to_file()).unwrap();
    std::fs::write(d.join("m.json"), file).unwrap();
    let v = json(ok(d, &["scm", "--file", "m.json", "backdoor", "--s", "S", "--y", "Y"]));
    assert_eq!(v["paths"], serde_json::json!(["S <- Z -> Y"]));

    let bad = scis(d, &["scm", "observational", "--y", "Y", "--given", "S"]);
    assert_eq!(bad.status.code(), Some(1));
    let unknown = scis(d, &["scm", "observational", "--y", "Q"]);
    assert_eq!(unknown.status.code(), Some(1));
    assert!(stderr(&unknown).contains("unknown node"));
}

#[test]
fn pipeline_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    artifacts(d);

    ok(d, &["--format", "csv", "--out", "eval.csv", "eval", "--model", "full.json", "--dict", "dict.json", "--data", "val.jsonl", "--name", "full"]);
    let csv = std::fs::read_to_string(d.join("eval.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), scis::harness::CSV_COLUMNS.join(","));
    assert!(lines.next().unwrap().starts_with("eval,full,true,none,val,0,30,"));
    assert!(d.join("eval.scenes.csv").exists());

    // A causal checkpoint cannot be read without its dictionary.
    let out = scis(d, &["--out", "e.json", "eval", "--model", "full.json", "--data", "val.jsonl"]);
    assert_eq!(out.status.code(), Some(1));

    ok(d, &["--out", "pca.csv", "project-pca", "--model", "base.json", "--data", "val.jsonl"]);
    let pca = std::fs::read_to_string(d.join("pca.csv")).unwrap();
    assert_eq!(pca.lines().next().unwrap(), "index,context,pc1,pc2");
    assert_eq!(pca.lines().count(), 31);

    let out = scis(d, &["--out", "x.json", "build-dict", "--model", "full.json", "--data", "train.jsonl"]);
    assert_eq!(out.status.code(), Some(1), "needs a dictionary to even load");
}

#[test]
fn sweep_check_sets_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    artifacts(d);
    for kind in ["ego-noise", "context-noise", "split"] {
        let out = scis(
            d,
            &["--out", "s.json", "sweep", kind, "--data", "val.jsonl", "--baseline", "base.json", "--causal", "full.json", "--dict", "dict.json", "--check"],
        );
        let err = stderr(&out);
        let failed = err.lines().any(|l| l.starts_with("FAIL"));
        assert!(err.lines().any(|l| l.starts_with("PASS") || l.starts_with("FAIL")), "{kind}: {err}");
        assert_eq!(out.status.code(), Some(if failed { 2 } else { 0 }), "{kind}: {err}");

        // Without --check the same sweep succeeds.
        ok(d, &["--out", "s.json", "sweep", kind, "--data", "val.jsonl", "--baseline", "base.json", "--causal", "full.json", "--dict", "dict.json"]);
    }
    let grid = scis(
        d,
        &["--out", "s.json", "sweep", "ego-noise", "--data", "val.jsonl", "--baseline", "base.json", "--causal", "full.json", "--dict", "dict.json", "--grid", "none,x2,7 m/s"],
    );
    assert!(grid.status.success(), "{}", stderr(&grid));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("s.json")).unwrap()).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 6);
    let bad = scis(
        d,
        &["--out", "s.json", "sweep", "ego-noise", "--data", "val.jsonl", "--baseline", "base.json", "--causal", "full.json", "--dict", "dict.json", "--grid", "fast"],
    );
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn training_experiments_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    artifacts(d);
    ok(d, &["--seed", "5", "--out", "ab.json", "ablate", "--train-data", "train.jsonl", "--data", "val.jsonl", "--dict", "dict.json", "--epochs", "1"]);
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("ab.json")).unwrap()).unwrap();
    let models: Vec<&str> = v["rows"].as_array().unwrap().iter().map(|r| r["report"]["model"].as_str().unwrap()).collect();
    assert_eq!(models, ["ID-1", "ID-2", "ID-3", "ID-4"]);

    ok(d, &["--seed", "5", "--out", "ds.json", "dict-sweep", "--train-data", "train.jsonl", "--data", "val.jsonl", "--baseline", "base.json", "--epochs", "1", "--grid", "5,2,3"]);
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("ds.json")).unwrap()).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 2);

    ok(d, &["--seed", "5", "--format", "csv", "--out", "cc.csv", "cluster-compare", "--train-data", "train.jsonl", "--data", "val.jsonl", "--baseline", "base.json", "--sizes", "5,2,3", "--epochs", "1"]);
    let csv = std::fs::read_to_string(d.join("cc.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 1 + 3);

    let out = scis(d, &["--out", "x.json", "dict-sweep", "--train-data", "train.jsonl", "--data", "val.jsonl", "--baseline", "full.json", "--epochs", "1"]);
    assert_eq!(out.status.code(), Some(1));
}
