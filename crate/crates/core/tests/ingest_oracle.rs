mod common;

use std::fs;

use hdlcore::corpus::{ingest, load_corpus, save_corpus, IngestFilters, IngestStats};
use hdlcore::hdl_extract::extract_components;
use rand::Rng;
use serde_json::json;

use common::{random_instruction, rng};

/// What a line should become, decided independently of the ingester.
enum Expect {
    Malformed,
    Filtered,
    Duplicate,
    Record { instruction: String, code: String, source: String },
}

fn random_line(r: &mut impl Rng, i: usize, pool: &mut Vec<(String, String)>) -> (String, Expect) {
    let pad = |r: &mut dyn rand::RngCore, s: &str| match r.gen_range(0..3) {
        0 => s.to_string(),
        1 => format!("  {s}\n"),
        _ => format!("\t{s} "),
    };
    match r.gen_range(0..10) {
        0 => ("{not json".into(), Expect::Malformed),
        1 => (json!({"instruction": "   ", "code": "module m; endmodule"}).to_string(), Expect::Malformed),
        2 => (json!({"instruction": "Short.", "code": "module short_one; endmodule"}).to_string(), Expect::Filtered),
        3 if !pool.is_empty() => {
            let (ins, code) = pool[r.gen_range(0..pool.len())].clone();
            let line = json!({"instruction": pad(r, &ins), "code": pad(r, &code)}).to_string();
            (line, Expect::Duplicate)
        }
        _ => {
            let ins = random_instruction(r, &format!("m{i}"));
            let code = format!("module m{i}(input a, output y);\n  assign y = a;\nendmodule");
            pool.push((ins.clone(), code.clone()));
            let tagged = r.gen_bool(0.5);
            let mut v = json!({"instruction": pad(r, &ins), "code": pad(r, &code)});
            if tagged {
                v["source"] = json!("tagged");
            }
            let source = if tagged { "tagged" } else { "data" }.to_string();
            (v.to_string(), Expect::Record { instruction: ins, code, source })
        }
    }
}

#[test]
fn ingest_matches_oracle() {
    for seed in 0..5 {
        let mut r = rng(seed);
        let dir = tempfile::TempDir::new().unwrap();
        let path = dir.path().join("data.jsonl");
        let mut pool = Vec::new();
        let mut lines = Vec::new();
        let mut want = Vec::new();
        let mut stats = IngestStats::default();
        let mut seen = std::collections::HashSet::new();
        for i in 0..100 {
            let (line, expect) = random_line(&mut r, i, &mut pool);
            lines.push(line.clone());
            if r.gen_bool(0.1) {
                lines.push(String::new());
            }
            stats.lines += 1;
            match expect {
                Expect::Duplicate => stats.duplicates += 1,
                Expect::Malformed => stats.malformed += 1,
                Expect::Filtered => stats.filtered += 1,
                Expect::Record { instruction, code, source } => {
                    assert!(seen.insert((instruction.clone(), code.clone())));
                    want.push((instruction, code, source));
                }
            }
        }
        fs::write(&path, lines.join("\n")).unwrap();
        stats.kept = want.len();

        let (corpus, got) = ingest(std::slice::from_ref(&path), &IngestFilters::default()).unwrap();
        assert_eq!(got, stats, "seed {seed}");
        assert_eq!(corpus.len(), want.len());
        for (i, (rec, (ins, code, source))) in corpus.iter().zip(&want).enumerate() {
            assert_eq!(rec.id, i);
            assert_eq!(&rec.instruction, ins);
            assert_eq!(&rec.code, code);
            assert_eq!(&rec.source_tag, source);
            assert_eq!(rec.components, extract_components(ins, Some(code)));
        }

        let saved = dir.path().join("corpus.jsonl");
        save_corpus(&corpus, &saved).unwrap();
        assert_eq!(load_corpus(&saved).unwrap(), corpus);

        let (all, no_dedup) = ingest(
            &[path],
            &IngestFilters {
                dedup: false,
                ..IngestFilters::default()
            },
        )
        .unwrap();
        assert_eq!(no_dedup.duplicates, 0);
        assert_eq!(all.len(), stats.kept + stats.duplicates);
    }
}
