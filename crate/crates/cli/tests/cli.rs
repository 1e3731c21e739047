use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn jtve(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jtve"))
        .args(args)
        .env("JTVE_LOG", "error")
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write_config(dir: &Path, steps: u64, extra: &str) -> PathBuf {
    let path = dir.join("ring8.json");
    let text = format!(
        r#"{{
  "trainer": {{"steps": {steps}, "batch_size": 32, "synth_batch_size": 32, "lr_alpha": 1e-3, "lr_theta": 1e-3, "lr_phi": 1e-3, "seed": 3{extra}}},
  "model": {{"hidden_width": 32, "energy_encoding_dim": 16}},
  "data": {{"train": "synthetic:ring8:2000"}},
  "output": {{"dir": "{}"}}
}}"#,
        dir.join("run").display()
    );
    std::fs::write(&path, text).unwrap();
    path
}

fn train(dir: &Path, steps: u64, sets: &[&str]) -> Value {
    let cfg = write_config(dir, steps, "");
    let mut args = vec!["train", "--config", cfg.to_str().unwrap()];
    for s in sets {
        args.extend(["--set", s]);
    }
    stdout_json(&jtve(&args))
}

#[test]
fn train_writes_metrics_manifest_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let summary = train(dir.path(), 7, &["trainer.seed=7"]);
    assert_eq!(summary["steps"], 7);
    let metrics = std::fs::read_to_string(summary["metrics"].as_str().unwrap()).unwrap();
    assert_eq!(metrics.lines().count(), 8);
    assert!(metrics.starts_with("step,loss_ebm,loss_gen_recon,loss_inf,energy_pos,energy_neg,"));
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(summary["manifest"].as_str().unwrap()).unwrap()).unwrap();
    assert_eq!(manifest["config"]["trainer"]["seed"], 7);
    assert_eq!(manifest["run_id"], summary["run_id"]);
    assert_eq!(manifest["run_id"].as_str().unwrap().len(), 64);
    // Defaults are materialized.
    assert_eq!(manifest["config"]["model"]["sigma"], 0.3);
    assert!(Path::new(summary["final_checkpoint"].as_str().unwrap()).exists());
}

#[test]
fn run_id_depends_on_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = train(a.path(), 1, &["trainer.seed=1", "output.dir=x"]);
    let rb = train(b.path(), 1, &["trainer.seed=2", "output.dir=x"]);
    assert_ne!(ra["run_id"], rb["run_id"]);
    let _ = std::fs::remove_dir_all("x");
}

#[test]
fn manifest_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let first = train(dir.path(), 4, &[]);
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(first["manifest"].as_str().unwrap()).unwrap()).unwrap();
    let replay = dir.path().join("replay.json");
    let mut cfg = manifest["config"].clone();
    cfg["output"]["dir"] = Value::String(dir.path().join("replay").display().to_string());
    std::fs::write(&replay, cfg.to_string()).unwrap();
    let second = stdout_json(&jtve(&["train", "--config", replay.to_str().unwrap()]));
    let strip = |p: &str| -> Vec<String> {
        std::fs::read_to_string(p).unwrap().lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect()
    };
    assert_eq!(strip(first["metrics"].as_str().unwrap()), strip(second["metrics"].as_str().unwrap()));
}

#[test]
fn unknown_config_key_exits_2_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 1, r#", "lr_typo": 1"#);
    let out = jtve(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("lr_typo"));
    assert!(out.stdout.is_empty());

    let out = jtve(&["train", "--set", "trainer.lr_typo=1"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("lr_typo"));
}

#[test]
fn missing_config_file_exits_4() {
    assert_eq!(code(&jtve(&["train", "--config", "/nonexistent/cfg.json"])), 4);
}

#[test]
fn bad_usage_exits_2() {
    assert_eq!(code(&jtve(&["frobnicate"])), 2);
    assert_eq!(code(&jtve(&["eval"])), 2);
}

#[test]
fn eval_sample_and_score() {
    let dir = tempfile::tempdir().unwrap();
    let summary = train(dir.path(), 3, &[]);
    let ckpt = summary["final_checkpoint"].as_str().unwrap();

    let out = jtve(&["eval", ckpt, "--data", "synthetic:ring8:300", "--ood", "uniform:200", "--metrics", "rmse,auroc,auprc,mmd,histogram"]);
    let v = stdout_json(&out);
    let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    keys.sort();
    assert_eq!(keys, ["auprc", "auroc", "histogram", "mmd", "rmse"]);
    let auroc = v["auroc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&auroc));
    let counted: u64 = v["histogram"].as_array().unwrap().iter().map(|r| r["count"].as_u64().unwrap()).sum();
    assert_eq!(counted, 500);

    let v = stdout_json(&jtve(&["eval", ckpt, "--data", "synthetic:ring8:100", "--metrics", "rmse"]));
    assert_eq!(v.as_object().unwrap().len(), 1);

    let out = jtve(&["eval", ckpt, "--data", "synthetic:ring8:100", "--metrics", "auroc"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("need both classes"));

    let csv = dir.path().join("bad.csv");
    std::fs::write(&csv, "1,2,3\n4,5,6\n").unwrap();
    let spec = format!("csv:{}", csv.display());
    assert_eq!(code(&jtve(&["eval", ckpt, "--data", &spec, "--metrics", "rmse"])), 2);

    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        let v = stdout_json(&jtve(&["sample", ckpt, "--rows", "3", "--cols", "4", "--out", p.to_str().unwrap(), "--seed", "9"]));
        assert_eq!(v["format"], "csv");
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    assert!(text.starts_with("x1,x2\n"));
    assert_eq!(text.lines().count(), 13);
    assert_eq!(code(&jtve(&["sample", ckpt, "--rows", "0", "--cols", "4", "--out", a.to_str().unwrap()])), 2);
    assert_eq!(code(&jtve(&["sample", ckpt, "--rows", "1", "--cols", "1", "--out", "/nonexistent/dir/x.csv"])), 4);

    let v = stdout_json(&jtve(&["score", ckpt, "--data", "uniform:25"]));
    assert_eq!(v["scores"].as_array().unwrap().len(), 25);
    let v = stdout_json(&jtve(&["score", ckpt, "--data", "uniform:25", "--score", "elbo"]));
    assert_eq!(v["scores"].as_array().unwrap().len(), 25);
}

#[test]
fn resume_finishes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let summary = train(dir.path(), 6, &["output.checkpoint_every=2"]);
    let run = Path::new(summary["final_checkpoint"].as_str().unwrap()).parent().unwrap().to_path_buf();
    let full = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    let step2 = run.join("step_00000002.jtve");
    let v = stdout_json(&jtve(&["train", "--resume", step2.to_str().unwrap()]));
    assert_eq!(v["steps"], 6);
    let resumed = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    let strip = |s: &str| -> Vec<String> { s.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect() };
    assert_eq!(strip(&full), strip(&resumed));
}

#[test]
fn trained_model_reconstructs_better_than_untrained() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let untrained = train(a.path(), 1, &[]);
    let trained = train(b.path(), 1500, &[]);
    let rmse = |s: &Value| {
        let v = stdout_json(&jtve(&["eval", s["final_checkpoint"].as_str().unwrap(), "--data", "synthetic:ring8:2000", "--metrics", "rmse", "--seed", "3"]));
        v["rmse"].as_f64().unwrap()
    };
    let (u, t) = (rmse(&untrained), rmse(&trained));
    assert!(t < u, "trained {t} vs untrained {u}");
}
