use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::{json, Value};
use tempfile::TempDir;

fn acdc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_acdc"))
        .args(args)
        .env("ACDC_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn generator() -> Value {
    json!({ "image_size": 32, "markups": [12, 8, 3], "markup_3d": 6 })
}

fn dataset(name: &str, size: usize, seed: u64, markups: &[&str], pose: bool) -> Value {
    json!({ "name": name, "size": size, "seed": seed, "markups": markups, "pose": pose, "generator": generator() })
}

fn base_config(out: &Path) -> Value {
    json!({
        "model": {
            "image_size": 32,
            "widths": [8, 8, 16, 16, 32, 32],
            "markups": [12, 8, 3],
            "markup_3d": 6,
            "variant": "acdc"
        },
        "train": { "updates": 10, "batch_size": 2, "seed": 3, "checkpoint_every": 5 },
        "datasets": [dataset("full", 6, 11, &["12", "8", "3", "3d"], true)],
        "eval": dataset("held", 8, 12, &["12", "8", "3", "3d"], true),
        "output": out,
        "eval_batch": 4
    })
}

fn write_config(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// One trained run shared by the eval and export tests.
struct Run {
    _dir: TempDir,
    config: PathBuf,
    out: PathBuf,
}

fn trained() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let out = dir.path().join("run");
        let config = write_config(dir.path(), "run.json", &base_config(&out));
        // Datasets exist before the tests that read them run concurrently.
        for cmd in ["synth", "train"] {
            let o = acdc(&[cmd, "--config", config.to_str().unwrap()]);
            assert_eq!(code(&o), 0, "{}", stderr(&o));
        }
        Run { _dir: dir, config, out }
    })
}

#[test]
fn synth_writes_exact_triples_and_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let mut cfg = base_config(&dir.path().join("a"));
    cfg["datasets"] = json!([
        dataset("ten", 10, 5, &["12", "8", "3", "3d"], true),
        dataset("five_only", 4, 6, &["3"], false)
    ]);
    let path = write_config(dir.path(), "c.json", &cfg);
    let o = acdc(&["synth", "--config", path.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let files = tree(&dir.path().join("a/data/ten"));
    let count = |suffix: &str| files.keys().filter(|p| p.to_str().unwrap().ends_with(suffix)).count();
    assert_eq!(count(".pgm"), 10);
    assert_eq!(count(".pose.csv"), 10);
    assert_eq!(count(".markup-12.pts"), 10);
    assert_eq!(count(".markup-3d.pts"), 10);
    assert!(files.contains_key(Path::new("manifest.json")));
    assert_eq!(files.len(), 10 * 6 + 1);

    let limited = tree(&dir.path().join("a/data/five_only"));
    assert_eq!(limited.len(), 4 * 2 + 1);
    assert!(limited
        .keys()
        .all(|p| { let s = p.to_str().unwrap(); s == "manifest.json" || s.ends_with(".pgm") || s.ends_with(".markup-3.pts") }));

    let o = acdc(&["synth", "--config", path.to_str().unwrap(), "--out", dir.path().join("b").to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(tree(&dir.path().join("a/data")), tree(&dir.path().join("b/data")));

    let o = acdc(&["synth", "--config", path.to_str().unwrap(), "--out", dir.path().join("c").to_str().unwrap(), "--seed", "77"]);
    assert_eq!(code(&o), 0);
    assert_ne!(tree(&dir.path().join("a/data/ten")), tree(&dir.path().join("c/data/ten")));
}

#[test]
fn train_writes_manifest_log_and_checkpoints() {
    let run = trained();
    let train = run.out.join("train");
    let manifest: Value = serde_json::from_str(&fs::read_to_string(train.join("run.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["train"]["lambdas"], json!([0.125, 0.25, 0.5, 1.0]));
    assert_eq!(manifest["precision"], "f32");
    assert!(manifest["parameters"].as_u64().unwrap() > 0);

    let log = fs::read_to_string(train.join("train_log.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next().unwrap(), "update,dataset,loss_total,loss_landmarks,loss_pose,lr");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 10);
    assert!(rows[9].starts_with("10,full,"));

    assert!(train.join("checkpoints/update-000005.acdc").exists());
    assert!(!train.join("checkpoints/update-000010.acdc").exists());
    assert!(train.join("model.acdc").exists());
}

#[test]
fn training_is_deterministic() {
    let run = trained();
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("again");
    let o = acdc(&["train", "--config", run.config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(
        fs::read(out.join("train/model.acdc")).unwrap(),
        fs::read(run.out.join("train/model.acdc")).unwrap()
    );
    assert_eq!(
        fs::read(out.join("train/train_log.csv")).unwrap(),
        fs::read(run.out.join("train/train_log.csv")).unwrap()
    );
}

#[test]
fn schema_violations_exit_before_any_work() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("never");
    let mut cfg = base_config(&out);
    cfg["train"]["warmup"] = json!(100);
    let path = write_config(dir.path(), "bad.json", &cfg);
    let o = acdc(&["train", "--config", path.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("warmup"), "{}", stderr(&o));
    assert!(!out.exists());

    let mut cfg = base_config(&out);
    cfg["train"]["lambdas"] = json!([1.0, 0.5, 0.25, 0.125]);
    let path = write_config(dir.path(), "desc.json", &cfg);
    assert_eq!(code(&acdc(&["train", "--config", path.to_str().unwrap()])), 1);
    assert!(!out.exists());

    assert_eq!(code(&acdc(&["train", "--config", "/nonexistent/run.json"])), 1);
    assert_eq!(code(&acdc(&["train", "--bogus"])), 1);
    assert_eq!(code(&acdc(&[])), 1);
}

#[test]
fn eval_reports_every_stage_subset_and_pose() {
    let run = trained();
    let o = acdc(&["eval", "--config", run.config.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = fs::read_to_string(run.out.join("eval/report.csv")).unwrap();
    let mut lines = report.lines();
    assert_eq!(
        lines.next().unwrap(),
        "dataset,stage,markup,normalization,subset,count,nme,auc01,fr01"
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    for markup in ["12", "8", "3", "3d"] {
        for norm in ["interocular", "bbox"] {
            let stages: Vec<&str> = rows
                .iter()
                .filter(|r| r[0] == "held" && r[2] == markup && r[3] == norm && r[4] == "all")
                .map(|r| r[1])
                .collect();
            assert_eq!(stages, ["1", "2", "3", "4"], "{markup} {norm}");
        }
    }
    let subset_rows = rows.iter().filter(|r| r[0] == "held" && r[4].starts_with("yaw")).count();
    assert!(subset_rows >= 4 * 4 * 2);
    assert!(rows.iter().any(|r| r[0] == "full"), "training set is reported too");

    let pose = fs::read_to_string(run.out.join("eval/pose_mae.csv")).unwrap();
    assert_eq!(pose.lines().next().unwrap(), "dataset,stage,yaw,pitch,roll,avg");
    assert_eq!(pose.lines().filter(|l| l.starts_with("held,")).count(), 4);
}

#[test]
fn eval_rejects_a_checkpoint_from_another_config() {
    let run = trained();
    let dir = TempDir::new().unwrap();
    let mut cfg = base_config(&run.out);
    cfg["model"]["variant"] = json!("ac");
    let path = write_config(dir.path(), "ac.json", &cfg);
    let o = acdc(&["eval", "--config", path.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("digest"), "{}", stderr(&o));

    let missing = dir.path().join("none.acdc");
    let o = acdc(&["eval", "--config", run.config.to_str().unwrap(), "--checkpoint", missing.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn export_writes_masks_excitations_and_landmarks() {
    let run = trained();
    let o = acdc(&["export", "--config", run.config.to_str().unwrap(), "--sample", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let dir = run.out.join("export");
    for stage in 1..=4 {
        let pgm = fs::read(dir.join(format!("mask_stage{stage}.pgm"))).unwrap();
        assert!(pgm.starts_with(b"P5\n32 32\n255\n"));
        assert_eq!(pgm.len(), b"P5\n32 32\n255\n".len() + 32 * 32);
    }
    assert!(!dir.join("excitation_stage1.csv").exists());
    for stage in 2..=4 {
        let csv = fs::read_to_string(dir.join(format!("excitation_stage{stage}.csv"))).unwrap();
        let rows: Vec<&str> = csv.lines().skip(1).collect();
        // [I | I*mask | H | H*mask] with one image channel and width 8.
        assert_eq!(rows.len(), 2 * (1 + 8));
        for r in &rows {
            let v: f64 = r.rsplit(',').next().unwrap().parse().unwrap();
            assert!(v > 0.0 && v < 1.0);
        }
        assert!(rows[1].contains(",image_masked,0,"));
    }
    let lm = fs::read_to_string(dir.join("landmarks.csv")).unwrap();
    assert_eq!(lm.lines().count(), 1 + 4 * (12 + 8 + 3 + 6));

    let o = acdc(&["export", "--config", run.config.to_str().unwrap(), "--sample", "99"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn gradcheck_passes_and_detects_a_corrupted_backward() {
    let dir = TempDir::new().unwrap();
    let o = acdc(&["gradcheck", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("gradcheck/report.csv")).unwrap();
    assert_eq!(csv, String::from_utf8(o.stdout).unwrap());
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert!(rows.iter().all(|r| r.ends_with(",true")));
    for op in ["conv2d_stride2", "batch_norm_train", "spatial_softmax", "soft_argmax", "fused_mask", "model_end_to_end"] {
        assert_eq!(rows.iter().filter(|r| r.starts_with(&format!("{op},"))).count(), 1, "{op}");
    }

    let o = acdc(&["gradcheck", "--inject-faulty-backward"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("custom_corrupted"), "{}", stderr(&o));

    assert_eq!(code(&acdc(&["gradcheck", "--precision", "f32"])), 1);
}
