#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use lscd_core::config::RunConfig;

pub const N: usize = 50;
pub const TOP_K: usize = 6;
pub const SENSE_SIZE: usize = 20;

fn vocab(prefix: &str) -> Vec<String> {
    (0..SENSE_SIZE).map(|i| format!("{prefix}{i:02}")).collect()
}

/// Two target words over `N` usages per period. `stable` keeps one sense;
/// `changed` gains a second, disjoint sense in half of its new usages.
pub fn write_fixture(dir: &Path, seed: u64, workers: usize) -> PathBuf {
    std::fs::create_dir_all(dir).unwrap();
    let mut old = String::new();
    let mut new = String::new();
    let mut senses = String::new();
    let sense = |id: &str, vocab: &[String]| serde_json::json!({ "sense_id": id, "vocabulary": vocab, "concentration": 0.3 });
    for (period, text) in [("old", &mut old), ("new", &mut new)] {
        for line in 1..=2 * N {
            let word = if line <= N { "changed" } else { "stable" };
            writeln!(
                text,
                "la palabra {word} aparece\tel palabra {word} aparecer"
            )
            .unwrap();
            let i = if line <= N { line - 1 } else { line - 1 - N };
            let s = match (period, word) {
                ("new", "changed") if i >= N / 2 => sense("b", &vocab("b")),
                (_, "changed") => sense("a", &vocab("a")),
                _ => sense("s", &vocab("s")),
            };
            let mut record = s;
            record["example_id"] = format!("{period}:{line}:2").into();
            writeln!(senses, "{record}").unwrap();
        }
    }
    std::fs::write(dir.join("old.txt"), old).unwrap();
    std::fs::write(dir.join("new.txt"), new).unwrap();
    std::fs::write(dir.join("targets.txt"), "changed\nstable\n").unwrap();
    std::fs::write(dir.join("senses.jsonl"), senses).unwrap();
    std::fs::write(dir.join("graded.tsv"), "changed\t0.9\nstable\t0.1\n").unwrap();
    std::fs::write(
        dir.join("binary.tsv"),
        "changed\t1\t1\t0\nstable\t0\tNA\tNA\n",
    )
    .unwrap();
    let config = format!(
        r#"output_dir = "out"
seed = {seed}
top_k = {TOP_K}
workers = {workers}
stemmer = "identity"

[corpus]
old = "old.txt"
new = "new.txt"
targets = "targets.txt"

[provider]
kind = "synthetic"
senses = "senses.jsonl"

[vectors]
dump_matrices = true

[gold]
graded_jsd = "graded.tsv"
binary = "binary.tsv"
"#
    );
    let path = dir.join("config.toml");
    std::fs::write(&path, config).unwrap();
    path
}

pub fn load(path: &Path) -> RunConfig {
    RunConfig::load(path).unwrap()
}
