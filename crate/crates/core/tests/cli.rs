mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::fixtures_dir;
use tempfile::TempDir;

fn hdlcore(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hdlcore"))
        .args(args)
        .env_remove("HDLCORE_API_KEY")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn e2e() -> std::path::PathBuf {
    fixtures_dir().join("mock_e2e")
}

fn chat_dir() -> String {
    e2e().join("chat").to_string_lossy().into_owned()
}

fn task(name: &str) -> String {
    e2e().join("tasks").join(format!("{name}.txt")).to_string_lossy().into_owned()
}

/// Ingests and indexes the fixture corpus into `dir`, returning the index path.
fn build_index(dir: &Path) -> String {
    let corpus = dir.join("corpus.jsonl").to_string_lossy().into_owned();
    let index = dir.join("index").to_string_lossy().into_owned();
    let input = e2e().join("corpus.jsonl").to_string_lossy().into_owned();
    let o = hdlcore(&["--mock", &chat_dir(), "ingest", "--input", &input, "--out", &corpus]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stats: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(stats["kept"], 12, "{stats}");
    let o = hdlcore(&["--mock", &chat_dir(), "index", "--corpus", &corpus, "--out", &index]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("indexed 12 records"));
    index
}

#[test]
fn help_and_version_exit_zero() {
    for flag in ["--help", "--version"] {
        let o = hdlcore(&[flag]);
        assert_eq!(o.status.code(), Some(0), "{flag}");
    }
    assert!(stdout(&hdlcore(&["--help"])).contains("classify"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(hdlcore(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(hdlcore(&["classify"]).status.code(), Some(2));
    assert_eq!(hdlcore(&["generate", "--task", "x", "--mode", "turbo"]).status.code(), Some(2));
}

#[test]
fn classify_sequential_task() {
    let dir = TempDir::new().unwrap();
    let t = dir.path().join("t.txt");
    fs::write(&t, "A register bank updated on clk with synchronous rst.").unwrap();
    let o = hdlcore(&["--mock", &chat_dir(), "classify", "--task", t.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("logic: Sequential"), "{out}");
    assert!(out.contains("label: SS-HDL"), "{out}");
    assert!(out.contains("matched keywords: clk, rst, register"), "{out}");
}

#[test]
fn classify_json() {
    let o = hdlcore(&["--mock", &chat_dir(), "classify", "--task", &task("cc_alu"), "--json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["logic"], "combinational");
    assert_eq!(v["complexity"], "complex");
    assert_eq!(v["label"], "CC-HDL");
    assert_eq!(v["complexity_parsed"], true);
}

#[test]
fn missing_file_exits_one() {
    let o = hdlcore(&["--mock", &chat_dir(), "classify", "--task", "/nonexistent/task.txt"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: "), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_named() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[retrieval]\nk = 4\ntop_n = 2\n").unwrap();
    let o = hdlcore(&["--config", cfg.to_str().unwrap(), "prompts", "lint"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("top_n"), "{}", stderr(&o));
}

#[test]
fn config_precedence_flag_file_default() {
    let dir = TempDir::new().unwrap();
    let index = build_index(dir.path());
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[retrieval]\nn = 1\n").unwrap();
    let (chat, t, cfg) = (chat_dir(), task("cs_fifo"), cfg.to_string_lossy().into_owned());
    let count = |config: Option<&str>, n: Option<&str>| -> usize {
        let mut args = vec!["--mock", chat.as_str()];
        if let Some(c) = config {
            args.extend(["--config", c]);
        }
        args.extend(["retrieve", "--index", &index, "--task", &t, "--json"]);
        if let Some(n) = n {
            args.extend(["--n", n]);
        }
        let o = hdlcore(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
        v["exemplars"].as_array().unwrap().len()
    };
    assert_eq!(count(None, None), 2, "default");
    assert_eq!(count(Some(&cfg), None), 1, "file");
    assert_eq!(count(Some(&cfg), Some("3")), 3, "flag");
}

#[test]
fn rag_mode_without_index_fails() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let o = hdlcore(&["--mock", &chat_dir(), "generate", "--task", &task("sc_mux"), "--mode", "full", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("requires --index"), "{}", stderr(&o));
}

#[test]
fn report_markdown_from_grid() {
    let grid = fixtures_dir().join("grids").join("qwen2.5_32b.csv");
    let o = hdlcore(&["report", "--in", grid.to_str().unwrap(), "--format", "markdown"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.starts_with("| Design | Syn. | Fun. |"), "{out}");
    assert!(out.contains("| Syntax Success | 86% | |"), "{out}");
    assert!(out.contains("| Functionality Success | | 60% |"), "{out}");
    assert_eq!(out.lines().filter(|l| l.contains('\u{2713}') || l.contains('\u{2717}')).count(), 50);
}

#[test]
fn report_round_trips_through_json() {
    let dir = TempDir::new().unwrap();
    let grid = fixtures_dir().join("grids").join("qwen2.5_7b.csv");
    let json = dir.path().join("r.json");
    let o = hdlcore(&["report", "--in", grid.to_str().unwrap(), "--format", "json", "--out", json.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = hdlcore(&["report", "--in", json.to_str().unwrap(), "--format", "csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), fs::read_to_string(&grid).unwrap());
}

fn write_bench(root: &Path, tasks: &[&str]) {
    for name in tasks {
        let d = root.join(name);
        fs::create_dir_all(&d).unwrap();
        fs::copy(task(name), d.join("design_description.txt")).unwrap();
        fs::write(d.join("testbench.v"), "module tb; endmodule\n").unwrap();
    }
}

#[test]
fn eval_with_fake_checkers() {
    let dir = TempDir::new().unwrap();
    let bench = dir.path().join("bench");
    write_bench(&bench, &["sc_mux", "ss_counter", "cc_alu", "cs_fifo"]);
    let index = build_index(dir.path());
    let report = dir.path().join("report.json");
    let traces = dir.path().join("traces");
    // Syntax passes everywhere; the functional check passes only for the mux.
    let o = hdlcore(&[
        "--mock", &chat_dir(), "eval", "--bench", bench.to_str().unwrap(), "--index", &index,
        "--mode", "full", "--syntax-cmd", "true", "--func-cmd", "grep -q 'module mux2' design.v",
        "--report", report.to_str().unwrap(), "--traces", traces.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("pass@1: syntax 4/4 (100%), function 1/4 (25%)"), "{}", stdout(&o));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["designs"].as_array().unwrap().len(), 4);
    assert_eq!(v["settings"]["mode"], "full");
    assert!(traces.join("cs_fifo").join("attempt_1.json").exists());
}

#[test]
fn eval_direct_mode_needs_no_index() {
    let dir = TempDir::new().unwrap();
    let bench = dir.path().join("bench");
    write_bench(&bench, &["cs_fifo"]);
    let report = dir.path().join("report.json");
    let o = hdlcore(&[
        "--mock", &chat_dir(), "eval", "--bench", bench.to_str().unwrap(), "--mode", "base", "--attempts", "3",
        "--syntax-cmd", "exit 1", "--func-cmd", "true", "--report", report.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("pass@1: syntax 0/1 (0%), function 0/1 (0%)"), "{out}");
    assert!(out.contains("pass@3:"), "{out}");
}

#[test]
fn prompts_lint_rejects_broken_override() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("sc_gen.txt"), "[system]\nYou write code.\n[user]\nNo placeholders at all.\n").unwrap();
    let o = hdlcore(&["prompts", "lint", "--template-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    assert!(stderr(&o).contains("sc_gen"), "{}", stderr(&o));
    assert_eq!(stdout(&hdlcore(&["prompts", "lint"])).trim(), "9 templates ok");
}
