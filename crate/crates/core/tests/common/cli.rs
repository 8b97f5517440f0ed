//! Drives the `treehole` binary through every subcommand on a tiny corpus.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const SEED: &str = "3";
pub const PLANTED: [f64; 2] = [0.8, -0.5];

pub fn treehole(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_treehole"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("spawn treehole")
}

/// Runs the command and panics with its stderr unless it exits 0.
pub fn ok(args: &[&str]) -> String {
    let out = treehole(args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "treehole {args:?}\nstderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 stdout")
}

pub fn write_configs(dir: &Path) {
    fs::create_dir_all(dir).unwrap();
    let synth = serde_json::json!({
        "users_per_class": 20,
        "posts_per_user": 6,
        "signal": 1.0,
        "vocab_size": 60,
        "planted_rho": PLANTED,
    });
    fs::write(dir.join("synth.json"), synth.to_string()).unwrap();
    let refine = serde_json::json!({ "epochs": 2, "sentences": 60, "embedding_dim": 6 });
    fs::write(dir.join("refine.json"), refine.to_string()).unwrap();
    let train = serde_json::json!({
        "epochs": 2,
        "batch_size": 4,
        "global_dim": 4,
        "embedding_dim": 6,
        "feature_scaling": "log1p",
    });
    fs::write(dir.join("train.json"), train.to_string()).unwrap();
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Stdout of every command, keyed by subcommand.
pub fn run_all(dir: &Path) -> BTreeMap<&'static str, String> {
    write_configs(dir);
    let corpus = dir.join("synth/corpus.jsonl");
    let refined = dir.join("refine/embeddings.txt");
    let model = dir.join("train");
    let mut stdout = BTreeMap::new();
    stdout.insert("synth", ok(&["synth", "--config", s(&dir.join("synth.json")), "--seed", SEED, "--out", s(&dir.join("synth"))]));
    stdout.insert(
        "refine",
        ok(&["refine", "--corpus", s(&corpus), "--config", s(&dir.join("refine.json")), "--seed", SEED, "--out", s(&dir.join("refine"))]),
    );
    stdout.insert(
        "train",
        ok(&[
            "train", "--corpus", s(&corpus), "--config", s(&dir.join("train.json")), "--embeddings", s(&refined),
            "--seed", SEED, "--out", s(&model),
        ]),
    );
    stdout.insert("eval", ok(&["eval", "--model", s(&model), "--corpus", s(&corpus), "--out", s(&dir.join("eval"))]));
    stdout.insert(
        "ablate",
        ok(&[
            "ablate", "--corpus", s(&corpus), "--config", s(&dir.join("train.json")), "--embeddings", s(&refined),
            "--seed", SEED, "--out", s(&dir.join("ablate")),
        ]),
    );
    stdout.insert(
        "harder",
        ok(&["harder", "--model", s(&model), "--corpus", s(&corpus), "--threshold", "5", "--out", s(&dir.join("harder"))]),
    );
    stdout.insert("analyze", ok(&["analyze", "--model", s(&model), "--corpus", s(&corpus), "--out", s(&dir.join("analyze"))]));
    stdout
}

/// Every file under `dir` except manifests, by relative path.
pub fn artifacts(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n != "manifest.json") {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// Manifest of `dir` with paths made relative to `root` and the wall clock
/// dropped.
pub fn manifest(root: &Path, dir: &Path) -> serde_json::Value {
    let text = fs::read_to_string(dir.join("manifest.json")).unwrap();
    let mut m: treehole::cli::RunManifest = serde_json::from_str(&text).unwrap();
    m.wall_clock_seconds = 0.0;
    for f in m.inputs.iter_mut().chain(m.outputs.iter_mut()) {
        if let Ok(rel) = f.path.strip_prefix(root) {
            f.path = rel.to_path_buf();
        }
    }
    serde_json::to_value(m).unwrap()
}

pub const COMMAND_DIRS: [&str; 7] = ["synth", "refine", "train", "eval", "ablate", "harder", "analyze"];
