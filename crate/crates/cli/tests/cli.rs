use std::path::Path;
use std::process::{Command, Output};

fn qkern(args: &[&str], paths: &[&Path]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_qkern"));
    cmd.args(args);
    for p in paths {
        cmd.arg(p);
    }
    cmd.output().unwrap()
}

const CONFIG: &str = r#"{
  "embedding": {"n": 4, "bandwidth": 0.3},
  "kernel": {"preset": "h-body", "H": 2},
  "estimator": {"kind": "shadows", "snapshots": 200},
  "dataset": {"source": "synthetic", "per_class": 40, "pca": 4, "train": 24, "test": 8},
  "seed": 5
}"#;

#[test]
fn gram_is_reproducible_from_its_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, CONFIG).unwrap();
    let out = dir.path().join("g.csv");
    assert!(qkern(&["gram", "--config"], &[&cfg]).status.code() == Some(2), "missing --out");
    let run = Command::new(env!("CARGO_BIN_EXE_qkern"))
        .args(["gram", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("g.csv.manifest.json")).unwrap()).unwrap();
    let replay = dir.path().join("replay.json");
    std::fs::write(&replay, manifest["config"].to_string()).unwrap();
    let again = dir.path().join("again.csv");
    let status = Command::new(env!("CARGO_BIN_EXE_qkern"))
        .args(["gram", "--config"])
        .arg(&replay)
        .arg("--out")
        .arg(&again)
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&again).unwrap());
    let outputs = manifest["outputs"].as_array().unwrap();
    assert_eq!(outputs.len(), 2);

    let trained = Command::new(env!("CARGO_BIN_EXE_qkern"))
        .args(["train", "--cv", "0.5,5,50", "--folds", "4", "--gram"])
        .arg(&out)
        .arg("--labels")
        .arg(dir.path().join("g.csv.labels"))
        .arg("--out")
        .arg(dir.path().join("model.json"))
        .output()
        .unwrap();
    assert!(trained.status.success(), "{}", String::from_utf8_lossy(&trained.stderr));
    let report: serde_json::Value = serde_json::from_slice(&trained.stdout).unwrap();
    assert!(report["train_accuracy"].as_f64().unwrap() > 0.5);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    let out = dir.path().join("m.json");
    std::fs::write(&cfg, CONFIG.replace("\"n\": 4", "\"n\": 8").replace("\"pca\": 4", "\"pca\": 8")).unwrap();
    let code = |args: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_qkern"))
            .args(args)
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap()
            .code()
    };
    assert_eq!(code(&["mercer"]), Some(3));
    std::fs::write(&cfg, "{ not json").unwrap();
    assert_eq!(code(&["gram"]), Some(2));
    std::fs::write(&cfg, CONFIG.replace("\"pca\": 4", "\"pca\": 6")).unwrap();
    assert_eq!(code(&["sweep-bandwidth"]), Some(2));
    let bad = qkern(&["shots", "--n", "20", "--H", "2", "--eps", "0", "--N-max", "5", "--out"], &[&out]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn thread_cap_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, CONFIG).unwrap();
    let run = |threads: &str, name: &str| {
        let out = dir.path().join(name);
        let ok = Command::new(env!("CARGO_BIN_EXE_qkern"))
            .env("QKERN_THREADS", threads)
            .args(["gram", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap()
            .success();
        assert!(ok);
        std::fs::read(out).unwrap()
    };
    assert_eq!(run("1", "a.csv"), run("0", "b.csv"));
}
