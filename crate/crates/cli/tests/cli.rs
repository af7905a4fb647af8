//! The `lpfl` binary end to end: corpus generation, validation, a small run
//! on a file corpus, resuming, and comparison of two arms.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn lpfl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lpfl"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn shipped_config() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs/synthetic.toml")
        .display()
        .to_string()
}

/// A small experiment over a generated corpus file, pretrained on its pool.
fn write_tiny_config(dir: &Path) -> String {
    let text = r#"
name = "tiny-cli"
seed = 4
output = "runs/tiny"

[federation]
clients = 2
rounds = 2
local_epochs = 1
batch_size = 4
labeled_fraction = 0.1
[federation.optimizer]
kind = "adam"
lr = 1e-2

[model]
vocab_size = 200
d_model = 16
n_layers = 1
n_heads = 2
d_ff = 16
max_len = 32
lora_rank = 2

[annotation]
accuracy_gate = false

[data]
source = "file"
corpus = "corpus.jsonl"
val_size = 40
test_size = 40

[pretrain]
corpus = "pool"
[pretrain.training]
steps = 10
batch_size = 4
"#;
    let path = dir.join("tiny.toml");
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn shipped_config_validates() {
    let o = lpfl(&["validate", &shipped_config()]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).ends_with(": ok\n"));
}

#[test]
fn invalid_overrides_exit_with_code_two() {
    let o = lpfl(&["validate", &shipped_config(), "--arm", "fp-ct", "--clients", "5"]);
    assert_eq!(o.status.code(), Some(2), "{o:?}");
    assert!(stdout(&o).contains("federation.clients"), "{}", stdout(&o));
}

#[test]
fn unknown_arm_is_rejected() {
    let o = lpfl(&["validate", &shipped_config(), "--arm", "xx"]);
    assert!(!o.status.success());
}

#[test]
fn synth_run_resume_and_compare() {
    let dir = TempDir::new().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    let o = lpfl(&[
        "synth",
        "--out",
        corpus.to_str().unwrap(),
        "--n",
        "240",
        "--vocab-size",
        "100",
        "--signal-words-per-label",
        "5",
    ]);
    assert!(o.status.success(), "{o:?}");
    assert_eq!(fs::read_to_string(&corpus).unwrap().lines().count(), 240);

    let config = write_tiny_config(dir.path());
    assert!(lpfl(&["validate", &config]).status.success());

    // Interrupted after one round, then resumed.
    let lp = dir.path().join("runs/tiny");
    let o = lpfl(&["run", &config, "--stop-after-round", "1"]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("stopped after round 1"));
    assert!(!lp.join("report.json").exists());
    let o = lpfl(&["run", &config, "--resume"]);
    assert!(o.status.success(), "{o:?}");
    assert!(lp.join("report.json").is_file());

    let fp = dir.path().join("fp");
    let o = lpfl(&["run", &config, "--arm", "fp-fl", "--out", fp.to_str().unwrap()]);
    assert!(o.status.success(), "{o:?}");

    let table = dir.path().join("table.md");
    let o = lpfl(&[
        "compare",
        lp.to_str().unwrap(),
        fp.join("report.json").to_str().unwrap(),
        "--out",
        table.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{o:?}");
    let md = fs::read_to_string(&table).unwrap();
    assert_eq!(md, stdout(&o));
    assert_eq!(md.lines().count(), 2 + 2, "{md}");
    assert!(md.contains("| lp-fl |") && md.contains("| fp-fl |"), "{md}");

    // A different seed partitions differently, so the runs are not comparable.
    let other = dir.path().join("other");
    let o = lpfl(&["run", &config, "--seed", "5", "--out", other.to_str().unwrap()]);
    assert!(o.status.success(), "{o:?}");
    let o = lpfl(&["compare", lp.to_str().unwrap(), other.to_str().unwrap()]);
    assert!(!o.status.success());
}
