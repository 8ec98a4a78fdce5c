use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn iscit(args: &[&str], seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_iscit"));
    cmd.args(args).env("RUST_LOG", "warn").env_remove("ISCT_SEED");
    if let Some(s) = seed {
        cmd.env("ISCT_SEED", s);
    }
    cmd.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const MICRO: &str = r#"{
  "seed": 3,
  "model": {"channels": 8, "chunk_size": 10, "heads": 2},
  "data": {
    "speakers_per_family": 2, "held_out_per_family": 1,
    "val_mixtures": 2, "test_mixtures": 2,
    "mix": {"duration_s": 0.1}
  },
  "train": {"max_steps": 2, "steps_per_epoch": 1, "batch_size": 1}
}"#;

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&iscit(&[], None)), 1);
    assert_eq!(code(&iscit(&["train"], None)), 1);
    assert_eq!(code(&iscit(&["frobnicate"], None)), 1);
    let help = iscit(&["--help"], None);
    assert_eq!(code(&help), 0);
    for sub in ["train", "evaluate", "separate", "grad-check", "make-data"] {
        assert!(stdout(&help).contains(sub), "{sub}");
    }
}

#[test]
fn invalid_config_lists_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.json", r#"{"model": {"channels": 30, "heads": 4, "beta": 1.5}, "train": {"lr": -1.0, "batch_size": 0}}"#);
    let out_dir = dir.path().join("run").to_string_lossy().into_owned();
    let o = iscit(&["train", "--config", &cfg, "--out", &out_dir], None);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    for field in ["beta", "train.lr", "train.batch_size"] {
        assert!(err.contains(field), "{field} missing from: {err}");
    }

    let unknown = write(dir.path(), "unknown.json", r#"{"train": {"learning_rate": 0.1}}"#);
    let o = iscit(&["train", "--config", &unknown, "--out", &out_dir], None);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("learning_rate"));
}

#[test]
fn bad_seed_override_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", MICRO);
    let out_dir = dir.path().join("run").to_string_lossy().into_owned();
    let o = iscit(&["train", "--config", &cfg, "--out", &out_dir], Some("twelve"));
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("ISCT_SEED"));
}

#[test]
fn make_data_train_evaluate_separate() {
    let dir = tempfile::tempdir().unwrap();
    let d = |p: &str| dir.path().join(p).to_string_lossy().into_owned();
    let cfg = write(dir.path(), "c.json", MICRO);

    let o = iscit(&["make-data", "--config", &cfg, "--out", &d("corpus")], None);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(dir.path().join("corpus/test.jsonl").exists());

    let o = iscit(&["train", "--config", &cfg, "--out", &d("run")], None);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let metrics = fs::read_to_string(dir.path().join("run/metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 2);

    let o = iscit(&["train", "--config", &cfg, "--out", &d("run2")], Some("3"));
    assert_eq!(code(&o), 0);
    assert_eq!(metrics, fs::read_to_string(dir.path().join("run2/metrics.jsonl")).unwrap());
    let o = iscit(&["train", "--config", &cfg, "--out", &d("run3")], Some("4"));
    assert_eq!(code(&o), 0);
    assert_ne!(metrics, fs::read_to_string(dir.path().join("run3/metrics.jsonl")).unwrap());

    let ckpt = d("run/best.ckpt");
    let o = iscit(&["evaluate", "--ckpt", &ckpt, "--manifest", &d("corpus/test.jsonl"), "--json", &d("report.json")], None);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("AVG"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d("report.json")).unwrap()).unwrap();
    assert_eq!(report["utterances"].as_array().unwrap().len(), 2);

    let o = iscit(&["separate", "--ckpt", &ckpt, "--in", &d("corpus/test/mix/00000.wav"), "--out", &d("sep")], None);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(dir.path().join("sep/spk1.wav").exists() && dir.path().join("sep/spk2.wav").exists());

    fs::remove_file(dir.path().join("corpus/test/s1/00001.wav")).unwrap();
    let o = iscit(&["evaluate", "--ckpt", &ckpt, "--manifest", &d("corpus/test.jsonl")], None);
    assert_eq!(code(&o), 2);
    assert!(stdout(&o).contains("00001.wav"));

    let o = iscit(&["separate", "--ckpt", &d("corpus/test.jsonl"), "--in", &d("corpus/test/mix/00000.wav"), "--out", &d("sep")], None);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("magic"));

    let o = iscit(&["train", "--config", &cfg, "--out", &d("run"), "--resume", &d("run/last.ckpt")], None);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn grad_check_passes_on_the_tiny_model() {
    let o = iscit(&["grad-check", "--seeds", "1"], None);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("model+total_loss"));
    assert!(!text.contains("FAIL"));
}
