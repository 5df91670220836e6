use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn hieraddr() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_hieraddr"));
    c.env_remove("HIERADDR_CONFIG").env("RUST_LOG", "warn");
    c
}

pub fn run_ok(dir: &Path, args: &[&str]) -> Output {
    let out = hieraddr().current_dir(dir).args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "hieraddr {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Small enough to train in seconds.
pub const SMOKE_CONFIG: &str = r#"{
  "seed": 5,
  "corpus": {"seed": 5, "sizes": {"resolution": 500, "train_pairs": 200, "test_pairs": 50}},
  "resolver": {"epochs": 5},
  "pretrain": {"encoder": {"d_model": 16, "d_ff": 32}, "epochs": 1},
  "matcher": {"hidden": 4, "epochs": 1},
  "ablation": {
    "resolver": {"epochs": 3},
    "pretrain": {"encoder": {"d_model": 16, "d_ff": 32}, "epochs": 1},
    "matcher": {"hidden": 4, "epochs": 1},
    "pretrain_addresses": 200
  }
}"#;

/// Artifacts written by [`smoke_pipeline`], relative to its directory.
pub const ARTIFACTS: &[&str] = &[
    "corpus/manifest.json",
    "corpus/lexicon.json",
    "corpus/resolution_train.jsonl",
    "corpus/resolution_dev.jsonl",
    "corpus/pairs_train.jsonl",
    "corpus/pairs_test.jsonl",
    "models/ner.json",
    "models/encoder.json",
    "models/matcher.json",
    "resolved.jsonl",
    "eval.json",
    "ablation.json",
];

/// gen-corpus, train-ner, resolve, pretrain, train-match, match, eval and
/// ablate inside `dir`. Returns the stdout of `match`.
pub fn smoke_pipeline(dir: &Path) -> String {
    std::fs::write(dir.join("config.json"), SMOKE_CONFIG).unwrap();
    std::fs::write(dir.join("addresses.txt"), "天津市和平区南京路7号\n上海市浦东新区\n").unwrap();
    let c = ["--config", "config.json"];
    let steps: &[&[&str]] = &[
        &["gen-corpus", "--out", "corpus"],
        &["train-ner", "--corpus", "corpus", "--out", "models/ner.json"],
        &["resolve", "--model", "models/ner.json", "--in", "addresses.txt", "--out", "resolved.jsonl"],
        &["pretrain", "--corpus", "corpus", "--mode", "wwm", "--out", "models/encoder.json"],
        &["train-match", "--pairs", "corpus", "--ner-model", "models/ner.json", "--encoder", "models/encoder.json", "--out", "models/matcher.json"],
        &["eval", "--model", "models/matcher.json", "--pairs", "corpus", "--out", "eval.json"],
        &["ablate", "--corpus", "corpus", "--seed-list", "1", "--out", "ablation.json"],
    ];
    for step in steps {
        let args: Vec<&str> = c.iter().chain(step.iter()).copied().collect();
        run_ok(dir, &args);
    }
    let out = run_ok(dir, &["match", "--model", "models/matcher.json", "--a", "天津市和平区南京路7号", "--b", "天津市南京路7号"]);
    String::from_utf8(out.stdout).unwrap()
}

pub fn read(dir: &Path, rel: &str) -> Vec<u8> {
    let p: PathBuf = dir.join(rel);
    std::fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}
