#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use hdlcore::corpus::CorpusRecord;
use hdlcore::hdl_extract::extract_components;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const VOCAB: &[&str] = &[
    "adder", "counter", "register", "fifo", "decoder", "encoder", "mux", "select", "carry", "sum", "overflow",
    "shift", "rotate", "parity", "checksum", "pipeline", "stage", "valid", "ready", "handshake", "latch", "enable",
    "clear", "load", "preset", "compare", "greater", "equal", "less", "signed", "unsigned", "width", "bit", "byte",
    "word", "serial", "parallel", "convert", "gray", "binary", "bcd", "decimal", "timer", "pulse", "detect", "edge",
    "state", "machine", "sequence", "output", "input", "memory", "address", "data", "read", "write", "empty", "full",
];

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures")
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn words(rng: &mut impl Rng, lo: usize, hi: usize) -> String {
    let n = rng.gen_range(lo..=hi);
    (0..n).map(|_| *VOCAB.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

/// A random task-like description with a prose module header.
pub fn random_instruction(rng: &mut impl Rng, name: &str) -> String {
    let inputs: Vec<String> = (0..rng.gen_range(1..=3)).map(|i| format!("{}_{i}", VOCAB.choose(rng).unwrap())).collect();
    format!(
        "Design a {}.\n\n{}. {}.\n\nModule name: {name}\nInputs: {}\nOutput: {} [{}:0]",
        words(rng, 2, 6),
        words(rng, 4, 12),
        words(rng, 3, 8),
        inputs.join(", "),
        VOCAB.choose(rng).unwrap(),
        rng.gen_range(0..16)
    )
}

pub fn random_corpus(rng: &mut impl Rng, size: usize) -> Vec<CorpusRecord> {
    (0..size)
        .map(|id| {
            let name = format!("m{id}");
            let instruction = random_instruction(rng, &name);
            let code = format!("module {name}(input a, output y);\n  assign y = ~a;\nendmodule");
            let components = extract_components(&instruction, Some(&code));
            CorpusRecord {
                id,
                instruction,
                code,
                source_tag: "random".into(),
                components,
            }
        })
        .collect()
}

/// Token-set Jaccard over lowercase alphanumeric runs, written out
/// independently of the mock reranker.
pub fn jaccard_oracle(a: &str, b: &str) -> f64 {
    let set = |s: &str| -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut cur = String::new();
        for ch in s.chars() {
            if ch.is_alphanumeric() {
                cur.extend(ch.to_lowercase());
            } else if !cur.is_empty() {
                out.insert(std::mem::take(&mut cur));
            }
        }
        if !cur.is_empty() {
            out.insert(cur);
        }
        out
    };
    let (sa, sb) = (set(a), set(b));
    let union = sa.union(&sb).count();
    if union == 0 {
        0.0
    } else {
        sa.intersection(&sb).count() as f64 / union as f64
    }
}

/// Ids of the `n` best records by `score`, ties by ascending id.
pub fn brute_top(scores: &[(usize, f64)], n: usize) -> Vec<usize> {
    let mut v = scores.to_vec();
    v.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    v.into_iter().take(n).map(|(id, _)| id).collect()
}
