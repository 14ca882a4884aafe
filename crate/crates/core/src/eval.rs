//! Benchmark harness: bench loading, external syntax/function checks,
//! pass@k accounting and report rendering.

use std::fmt::Write as _;
use std::fs;
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitStatus, Stdio};
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::TaskDescription;
use crate::gateway::Gateway;
use crate::pipeline::{parallel_map, Pipeline, PipelineError, RunSettings, TaskOutcome};

pub const DESCRIPTION_FILE: &str = "design_description.txt";
pub const TESTBENCH_FILE: &str = "testbench.v";
pub const REFERENCE_FILE: &str = "designer_RTL.v";

const PASS_MARK: &str = "\u{2713}";
const FAIL_MARK: &str = "\u{2717}";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no designs found in {0}")]
    EmptyBench(PathBuf),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no designs to score")]
    NoDesigns,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("design {design} has {have} attempts, fewer than k = {k}")]
    InsufficientAttempts { design: String, have: usize, k: usize },
    #[error("design {design} attempt {attempt}: functional pass without syntax pass")]
    Ungated { design: String, attempt: usize },
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("unknown report format {0:?} (expected json, markdown or csv)")]
    UnknownFormat(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("invalid report json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchDesign {
    pub name: String,
    pub description: String,
    pub testbench: String,
    pub reference: Option<String>,
}

fn read_nonempty(path: &Path) -> Result<Option<String>, EvalError> {
    match fs::read_to_string(path) {
        Ok(s) if s.trim().is_empty() => Ok(None),
        Ok(s) => Ok(Some(s)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(source) => Err(EvalError::Io {
            path: path.to_path_buf(),
            source,
        }),
    }
}

/// Loads `<dir>/<design>/{design_description.txt, testbench.v, designer_RTL.v}`.
/// Designs missing a description or testbench are skipped with a warning;
/// plain files at the top level are ignored.
pub fn load_bench(dir: &Path) -> Result<Vec<BenchDesign>, EvalError> {
    let io = |source| EvalError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut subdirs = Vec::new();
    for entry in fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.is_dir() {
            subdirs.push(path);
        }
    }
    subdirs.sort();
    let mut designs = Vec::new();
    for sub in subdirs {
        let name = sub.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let Some(testbench) = read_nonempty(&sub.join(TESTBENCH_FILE))? else {
            log::warn!("skipping {name}: no {TESTBENCH_FILE}");
            continue;
        };
        let Some(description) = read_nonempty(&sub.join(DESCRIPTION_FILE))? else {
            log::warn!("skipping {name}: no {DESCRIPTION_FILE}");
            continue;
        };
        designs.push(BenchDesign {
            name,
            description,
            testbench,
            reference: read_nonempty(&sub.join(REFERENCE_FILE))?,
        });
    }
    if designs.is_empty() {
        return Err(EvalError::EmptyBench(dir.to_path_buf()));
    }
    Ok(designs)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptOutcome {
    pub syntax_pass: bool,
    pub func_pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_note: Option<String>,
}

impl AttemptOutcome {
    /// Builds an outcome with the functional result gated on syntax.
    pub fn new(syntax_pass: bool, func_pass: bool, error_note: Option<String>) -> Self {
        Self {
            syntax_pass,
            func_pass: syntax_pass && func_pass,
            error_note,
        }
    }

    pub fn failed(note: impl Into<String>) -> Self {
        Self::new(false, false, Some(note.into()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckConfig {
    /// Shell command; `{code_file}` and `{tb_file}` are replaced by paths.
    pub syntax_cmd: String,
    pub func_cmd: String,
    pub timeout_secs: u64,
    pub parallel_checks: usize,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            syntax_cmd: "iverilog -o /dev/null {code_file}".into(),
            func_cmd: "iverilog -o sim.out {code_file} {tb_file} && vvp sim.out".into(),
            timeout_secs: 60,
            parallel_checks: 2,
        }
    }
}

enum RunResult {
    Exited(ExitStatus, String),
    TimedOut,
    SpawnFailed(String),
}

fn tail(text: &str, max: usize) -> String {
    let t = text.trim();
    let start = t.char_indices().rev().nth(max.saturating_sub(1)).map_or(0, |(i, _)| i);
    t[start..].to_string()
}

fn run_command(cmd: &str, cwd: &Path, timeout: Duration) -> RunResult {
    let log_path = cwd.join(".check.log");
    let spawn = || -> std::io::Result<std::process::Child> {
        let log = fs::File::create(&log_path)?;
        Command::new("sh")
            .arg("-c")
            .arg(cmd)
            .current_dir(cwd)
            .stdin(Stdio::null())
            .stdout(log.try_clone()?)
            .stderr(log)
            .process_group(0)
            .spawn()
    };
    let mut child = match spawn() {
        Ok(c) => c,
        Err(e) => return RunResult::SpawnFailed(e.to_string()),
    };
    let deadline = Instant::now() + timeout;
    let mut poll = Duration::from_millis(2);
    loop {
        match child.try_wait() {
            Ok(Some(status)) => {
                let output = fs::read_to_string(&log_path).unwrap_or_default();
                return RunResult::Exited(status, output);
            }
            Ok(None) if Instant::now() >= deadline => {
                // SAFETY: killpg only sends a signal; the group id is the child's pid.
                unsafe {
                    libc::killpg(child.id() as libc::pid_t, libc::SIGKILL);
                }
                let _ = child.wait();
                return RunResult::TimedOut;
            }
            Ok(None) => {
                std::thread::sleep(poll.min(deadline.saturating_duration_since(Instant::now())));
                poll = (poll * 2).min(Duration::from_millis(50));
            }
            Err(e) => return RunResult::SpawnFailed(e.to_string()),
        }
    }
}

/// Runs one command and returns `Ok(())` on exit status 0, else a note.
fn check(stage: &str, template: &str, code_file: &Path, tb_file: &Path, cwd: &Path, timeout: Duration) -> Result<(), String> {
    let cmd = template
        .replace("{code_file}", &code_file.display().to_string())
        .replace("{tb_file}", &tb_file.display().to_string());
    match run_command(&cmd, cwd, timeout) {
        RunResult::Exited(status, _) if status.success() => Ok(()),
        RunResult::Exited(status, _) if status.code() == Some(127) => Err(format!("{stage}: command not found")),
        RunResult::Exited(status, output) => {
            let code = status.code().map_or_else(|| "signal".to_string(), |c| c.to_string());
            let out = tail(&output, 300);
            Err(if out.is_empty() {
                format!("{stage}: exit {code}")
            } else {
                format!("{stage}: exit {code}: {out}")
            })
        }
        RunResult::TimedOut => Err(format!("{stage}: timeout")),
        RunResult::SpawnFailed(e) => Err(format!("{stage}: cannot run: {e}")),
    }
}

/// Compiles, then simulates only if compilation passed. Never panics or
/// errors: failures become notes on the outcome.
pub fn check_attempt(design: &BenchDesign, code: &str, cfg: &CheckConfig) -> AttemptOutcome {
    let dir = match tempfile::Builder::new().prefix("hdlcore-check-").tempdir() {
        Ok(d) => d,
        Err(e) => return AttemptOutcome::failed(format!("cannot create workspace: {e}")),
    };
    let code_file = dir.path().join("design.v");
    let tb_file = dir.path().join(TESTBENCH_FILE);
    if let Err(e) = fs::write(&code_file, code).and_then(|_| fs::write(&tb_file, &design.testbench)) {
        return AttemptOutcome::failed(format!("cannot write workspace: {e}"));
    }
    let timeout = Duration::from_secs(cfg.timeout_secs);
    if let Err(note) = check("syntax", &cfg.syntax_cmd, &code_file, &tb_file, dir.path(), timeout) {
        return AttemptOutcome::new(false, false, Some(note));
    }
    match check("function", &cfg.func_cmd, &code_file, &tb_file, dir.path(), timeout) {
        Ok(()) => AttemptOutcome::new(true, true, None),
        Err(note) => AttemptOutcome::new(true, false, Some(note)),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignResult {
    pub design: String,
    pub outcomes: Vec<AttemptOutcome>,
}

/// Empirical best-of-k: a design succeeds if any of its first `k` attempts
/// passes. Returns (syntax_rate, func_rate).
pub fn pass_at_k(outcomes: &[Vec<AttemptOutcome>], k: usize) -> Result<(f64, f64), EvalError> {
    let (s, f) = success_counts(outcomes.iter().map(|o| ("", o.as_slice())), k)?;
    let n = outcomes.len() as f64;
    Ok((s as f64 / n, f as f64 / n))
}

fn success_counts<'a>(
    designs: impl ExactSizeIterator<Item = (&'a str, &'a [AttemptOutcome])>,
    k: usize,
) -> Result<(usize, usize), EvalError> {
    if k == 0 {
        return Err(EvalError::InvalidK);
    }
    if designs.len() == 0 {
        return Err(EvalError::NoDesigns);
    }
    let (mut syntax, mut func) = (0, 0);
    for (name, attempts) in designs {
        if attempts.len() < k {
            return Err(EvalError::InsufficientAttempts {
                design: name.to_string(),
                have: attempts.len(),
                k,
            });
        }
        if let Some(i) = attempts.iter().position(|a| a.func_pass && !a.syntax_pass) {
            return Err(EvalError::Ungated {
                design: name.to_string(),
                attempt: i + 1,
            });
        }
        let first = &attempts[..k];
        syntax += usize::from(first.iter().any(|a| a.syntax_pass));
        func += usize::from(first.iter().any(|a| a.func_pass));
    }
    Ok((syntax, func))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub k: usize,
    pub designs: usize,
    pub syntax_successes: usize,
    pub func_successes: usize,
    pub syntax_rate: f64,
    pub func_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub settings: Option<RunSettings>,
    pub designs: Vec<DesignResult>,
    pub aggregates: Vec<Aggregate>,
}

impl EvalReport {
    /// Computes pass@1 and, when every design has more attempts, pass@k for
    /// the smallest attempt count.
    pub fn new(settings: Option<RunSettings>, designs: Vec<DesignResult>) -> Result<Self, EvalError> {
        let max_k = designs.iter().map(|d| d.outcomes.len()).min().ok_or(EvalError::NoDesigns)?;
        let mut ks = vec![1];
        if max_k > 1 {
            ks.push(max_k);
        }
        let aggregates = ks
            .into_iter()
            .map(|k| aggregate(&designs, k))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            settings,
            designs,
            aggregates,
        })
    }

    /// Recomputes every aggregate from the grid.
    pub fn verify(&self) -> Result<(), EvalError> {
        for agg in &self.aggregates {
            if aggregate(&self.designs, agg.k)? != *agg {
                return Err(EvalError::Grid(format!("pass@{} aggregate does not match the grid", agg.k)));
            }
        }
        Ok(())
    }

    /// The aggregate for the largest k.
    pub fn headline(&self) -> Option<&Aggregate> {
        self.aggregates.iter().max_by_key(|a| a.k)
    }
}

pub fn aggregate(designs: &[DesignResult], k: usize) -> Result<Aggregate, EvalError> {
    let (s, f) = success_counts(designs.iter().map(|d| (d.design.as_str(), d.outcomes.as_slice())), k)?;
    let n = designs.len();
    Ok(Aggregate {
        k,
        designs: n,
        syntax_successes: s,
        func_successes: f,
        syntax_rate: s as f64 / n as f64,
        func_rate: f as f64 / n as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Markdown,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(EvalError::UnknownFormat(other.to_string())),
        }
    }
}

/// Rate as a whole percentage, e.g. 0.86 -> "86".
pub fn percent(rate: f64) -> String {
    format!("{:.0}", rate * 100.0)
}

fn mark(pass: bool) -> &'static str {
    if pass {
        PASS_MARK
    } else {
        FAIL_MARK
    }
}

fn render_markdown(report: &EvalReport) -> String {
    let attempts = report.designs.iter().map(|d| d.outcomes.len()).max().unwrap_or(0);
    let mut out = String::new();
    if let Some(s) = &report.settings {
        let _ = writeln!(
            out,
            "mode {}, k {}, n {}, generation temperature {}, self-verification temperature {}, attempts {}\n",
            s.mode, s.k, s.n, s.generation_temperature, s.selfverify_temperature, s.attempts
        );
    }
    let mut header = String::from("| Design |");
    let mut rule = String::from("|---|");
    for i in 1..=attempts {
        let suffix = if attempts > 1 { format!(" {i}") } else { String::new() };
        let _ = write!(header, " Syn.{suffix} | Fun.{suffix} |");
        rule.push_str(":-:|:-:|");
    }
    let _ = writeln!(out, "{header}\n{rule}");
    for d in &report.designs {
        let mut row = format!("| {} |", d.design);
        for i in 0..attempts {
            match d.outcomes.get(i) {
                Some(o) => {
                    let _ = write!(row, " {} | {} |", mark(o.syntax_pass), mark(o.func_pass));
                }
                None => row.push_str("  |  |"),
            }
        }
        let _ = writeln!(out, "{row}");
    }
    if let Some(h) = report.headline() {
        let pad = " |".repeat(2 * attempts.saturating_sub(1));
        let _ = writeln!(out, "| Syntax Success | {}% | |{pad}", percent(h.syntax_rate));
        let _ = writeln!(out, "| Functionality Success | | {}% |{pad}", percent(h.func_rate));
        if report.aggregates.len() > 1 {
            out.push('\n');
            for a in &report.aggregates {
                let _ = writeln!(
                    out,
                    "pass@{}: syntax {}% ({}/{}), function {}% ({}/{})",
                    a.k,
                    percent(a.syntax_rate),
                    a.syntax_successes,
                    a.designs,
                    percent(a.func_rate),
                    a.func_successes,
                    a.designs
                );
            }
        }
    }
    out
}

/// `design,attempt,syntax_pass,func_pass` with 1-based attempts and 1/0 flags.
pub fn render_grid_csv(designs: &[DesignResult]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["design", "attempt", "syntax_pass", "func_pass"]).expect("in-memory write");
    for d in designs {
        for (i, o) in d.outcomes.iter().enumerate() {
            w.write_record([
                d.design.clone(),
                (i + 1).to_string(),
                u8::from(o.syntax_pass).to_string(),
                u8::from(o.func_pass).to_string(),
            ])
            .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

fn parse_flag(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | PASS_MARK => Some(true),
        "0" | "false" | FAIL_MARK => Some(false),
        _ => None,
    }
}

/// Parses the grid produced by [`render_grid_csv`]. Designs keep the order
/// of first appearance; each design's attempts must be numbered 1, 2, ...
pub fn parse_grid_csv(text: &str) -> Result<Vec<DesignResult>, EvalError> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut out: Vec<DesignResult> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let bad = |what: &str| EvalError::Grid(format!("row {}: {what}", line + 2));
        let rec = rec.map_err(|e| bad(&e.to_string()))?;
        if rec.len() != 4 {
            return Err(bad("expected 4 fields"));
        }
        let attempt: usize = rec[1].parse().map_err(|_| bad("attempt is not a number"))?;
        let syntax = parse_flag(&rec[2]).ok_or_else(|| bad("bad syntax_pass"))?;
        let func = parse_flag(&rec[3]).ok_or_else(|| bad("bad func_pass"))?;
        if func && !syntax {
            return Err(bad("func_pass without syntax_pass"));
        }
        let idx = match out.iter().position(|d| d.design == rec[0]) {
            Some(i) => i,
            None => {
                out.push(DesignResult {
                    design: rec[0].to_string(),
                    outcomes: Vec::new(),
                });
                out.len() - 1
            }
        };
        let design = &mut out[idx];
        if attempt != design.outcomes.len() + 1 {
            return Err(bad("attempts out of sequence"));
        }
        design.outcomes.push(AttemptOutcome::new(syntax, func, None));
    }
    Ok(out)
}

pub fn emit_report(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(report).expect("report serializes") + "\n",
        ReportFormat::Markdown => render_markdown(report),
        ReportFormat::Csv => render_grid_csv(&report.designs),
    }
}

pub fn parse_report_json(text: &str) -> Result<EvalReport, EvalError> {
    let report: EvalReport = serde_json::from_str(text)?;
    report.verify()?;
    Ok(report)
}

/// Scores pipeline outcomes against the bench. Tasks or attempts that
/// produced no code count as failed attempts.
pub fn score_outcomes(
    designs: &[BenchDesign],
    outcomes: &[TaskOutcome],
    attempts: usize,
    cfg: &CheckConfig,
) -> Vec<DesignResult> {
    let jobs: Vec<(usize, usize)> = (0..designs.len()).flat_map(|d| (0..attempts).map(move |a| (d, a))).collect();
    let results = parallel_map(&jobs, cfg.parallel_checks, |&(d, a)| {
        let outcome = &outcomes[d];
        match outcome.attempts.get(a) {
            Some(rec) => match rec.final_code() {
                Some(code) => check_attempt(&designs[d], code, cfg),
                None => AttemptOutcome::failed(rec.error.clone().unwrap_or_else(|| "no code generated".into())),
            },
            None => AttemptOutcome::failed(outcome.error.clone().unwrap_or_else(|| "attempt missing".into())),
        }
    });
    let mut it = results.into_iter();
    designs
        .iter()
        .map(|d| DesignResult {
            design: d.name.clone(),
            outcomes: it.by_ref().take(attempts).collect(),
        })
        .collect()
}

/// Generates code for every design and scores it.
pub fn run_eval(
    designs: &[BenchDesign],
    pipeline: &Pipeline<'_>,
    gateway: &Gateway,
    cfg: &CheckConfig,
) -> Result<(EvalReport, Vec<TaskOutcome>), EvalError> {
    let tasks: Vec<TaskDescription> = designs
        .iter()
        .map(|d| {
            TaskDescription::new(d.description.clone(), Some(d.name.clone()))
                .expect("bench descriptions are non-empty")
        })
        .collect();
    let outcomes = pipeline.run_suite(&tasks, gateway)?;
    let attempts = pipeline.config().attempts;
    let results = score_outcomes(designs, &outcomes, attempts, cfg);
    let report = EvalReport::new(Some(pipeline.config().settings()), results)?;
    Ok((report, outcomes))
}
