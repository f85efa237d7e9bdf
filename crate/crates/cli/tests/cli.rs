use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_arsivae"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).env("RUST_LOG", "error").output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tiny_config(latent_dim: usize) -> Value {
    json!({
        "data": {
            "phantom": {
                "image_size": 16,
                "lv_radius_range": [2.0, 3.5],
                "myo_thickness_range": [1.0, 2.0],
                "rv_scale_range": [0.6, 1.0],
                "center_jitter": 1.0
            },
            "n_samples": 80
        },
        "train": {
            "model": {"latent_dim": latent_dim, "regularized_dims": [0, 1, 2], "channels": [4, 8], "image_size": 16},
            "batch_size": 16,
            "epochs": 1
        },
        "classifier": {"hidden": [8], "epochs": 5, "task": "binary"}
    })
}

fn write_config(dir: &Path, cfg: &Value) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

struct Fixture {
    _tmp: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
    data: PathBuf,
}

fn fixture(latent_dim: usize) -> Fixture {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().to_path_buf();
    let config = write_config(&root, &tiny_config(latent_dim));
    let data = root.join("data");
    let o = run(&["gen-data", "--config", s(&config), "--out", s(&data)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    Fixture {
        _tmp: tmp,
        root,
        config,
        data,
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn train(f: &Fixture, method: &str, out: &str) -> PathBuf {
    let out = f.root.join(out);
    let o = run(&[
        "train",
        "--config",
        s(&f.config),
        "--method",
        method,
        "--data",
        s(&f.data),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn gen_data_writes_manifest_and_reports_spread() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(4);
    cfg["data"]["n_samples"] = json!(1000);
    let config = write_config(tmp.path(), &cfg);
    let out = tmp.path().join("data");
    let o = run(&["gen-data", "--config", s(&config), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(out.join("manifest.json").is_file());
    let summary: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["n_samples"], 1000);
    for sd in summary["std"].as_array().unwrap() {
        assert!(sd.as_f64().unwrap() > 0.0);
    }
}

#[test]
fn config_errors_exit_2_and_name_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(4);
    cfg.as_object_mut().unwrap().remove("classifier");
    let config = write_config(tmp.path(), &cfg);
    let o = run(&["gen-data", "--config", s(&config), "--out", s(&tmp.path().join("d"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("classifier"), "{}", stderr(&o));

    let config = write_config(tmp.path(), &tiny_config(4));
    let o = run(&[
        "gen-data",
        "--config",
        s(&config),
        "--out",
        s(&tmp.path().join("d")),
        "--set",
        "train.epochz=2",
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("epochz"), "{}", stderr(&o));
}

#[test]
fn train_is_repeatable_and_evaluates() {
    let f = fixture(4);
    let a = train(&f, "ar-sivae", "a");
    let b = train(&f, "ar-sivae", "b");
    assert!(a.join("ckpt/final/manifest.json").is_file());
    let log_a = std::fs::read(a.join("train_log.csv")).unwrap();
    assert_eq!(log_a, std::fs::read(b.join("train_log.csv")).unwrap());

    let recon = f.root.join("recon");
    let o = run(&["eval-recon", "--ckpt", s(&a), "--data", s(&f.data), "--out", s(&recon)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = read_json(&recon.join("metrics.json"));
    assert_eq!(m["reconstruction"]["lpips"], "unavailable");
    assert!(m["reconstruction"]["ssim"].as_f64().is_some());

    let dis = f.root.join("dis");
    let o = run(&["eval-disentangle", "--ckpt", s(&a), "--data", s(&f.data), "--out", s(&dis)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = read_json(&dis.join("metrics.json"));
    for key in ["interpretability", "scc", "sap", "modularity"] {
        assert!(m["disentanglement"][key]["mean"].as_f64().is_some(), "{key}");
    }
    assert!(dis.join("metrics.csv").is_file());
}

#[test]
fn missing_or_mismatched_artifacts_exit_4() {
    let f = fixture(4);
    let nowhere = f.root.join("nowhere");
    let o = run(&["eval-recon", "--ckpt", s(&nowhere), "--data", s(&f.data), "--out", s(&f.root.join("o"))]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));

    // a dataset is not a model checkpoint
    let o = run(&["eval-recon", "--ckpt", s(&f.data), "--data", s(&f.data), "--out", s(&f.root.join("o"))]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

#[test]
fn divergent_training_exits_3_with_diagnostics() {
    let f = fixture(4);
    let out = f.root.join("nan");
    let o = run(&[
        "train",
        "--config",
        s(&f.config),
        "--method",
        "beta-vae",
        "--data",
        s(&f.data),
        "--out",
        s(&out),
        "--set",
        "train.optimizer.learning_rate=1e30",
        "--set",
        "train.epochs=3",
    ]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("diagnostics.json"));
    assert!(out.join("diagnostics.json").is_file());
}

#[test]
fn classify_explain_and_traverse() {
    let f = fixture(8);
    let model = train(&f, "ar-sivae", "model");
    let clf = f.root.join("clf");
    let o = run(&[
        "classify",
        "--ckpt",
        s(&model),
        "--data",
        s(&f.data),
        "--task",
        "binary",
        "--out",
        s(&clf),
        "--config",
        s(&f.config),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = read_json(&clf.join("classification_report.json"));
    assert!(report["attribute_baseline"]["accuracy"].as_f64().is_some());
    assert!(clf.join("metrics.json").is_file());

    let mut summaries = Vec::new();
    for mode in ["exact", "sampled"] {
        let out = f.root.join(format!("shap_{mode}"));
        let o = run(&[
            "explain",
            "--clf",
            s(&clf.join("clf")),
            "--ckpt",
            s(&model),
            "--data",
            s(&f.data),
            "--out",
            s(&out),
            "--mode",
            mode,
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert!(out.join("shap_summary.csv").is_file());
        assert!(out.join("shap_summary.png").is_file());
        summaries.push(read_json(&out.join("shap_report.json"))["per_dimension"].clone());
    }
    let flat = |v: &Value| -> Vec<f64> {
        v.as_array().unwrap().iter().flat_map(|r| r.as_array().unwrap().iter().map(|x| x.as_f64().unwrap())).collect()
    };
    for (e, p) in flat(&summaries[0]).iter().zip(flat(&summaries[1])) {
        assert!((e - p).abs() < 0.05, "exact {e} vs sampled {p}");
    }

    let trav = f.root.join("trav");
    let o = run(&[
        "traverse",
        "--ckpt",
        s(&model),
        "--data",
        s(&f.data),
        "--dim",
        "1",
        "--span",
        "0",
        "--out",
        s(&trav),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(trav.join("traversal_dim1.png").is_file());
    let csv = std::fs::read_to_string(trav.join("traversal_dim1.csv")).unwrap();
    let frames: Vec<&str> = csv.lines().skip(1).map(|l| l.split_once(',').unwrap().1).collect();
    assert_eq!(frames.len(), 9);
    assert!(frames.iter().all(|f| *f == frames[0]));
}

#[test]
fn published_schema_matches_the_binary() {
    let o = run(&["schema"]);
    assert_eq!(code(&o), 0);
    let printed: Value = serde_json::from_slice(&o.stdout).unwrap();
    let docs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/config.schema.json");
    let published: Value = serde_json::from_str(&std::fs::read_to_string(docs).unwrap()).unwrap();
    assert_eq!(printed, published, "docs/config.schema.json is stale; regenerate with `arsivae schema`");
}
