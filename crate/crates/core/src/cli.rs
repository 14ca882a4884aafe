use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use hdlcore::classify::{Classifier, TaskDescription};
use hdlcore::config::GlobalConfig;
use hdlcore::corpus::{ingest, load_corpus, save_corpus};
use hdlcore::eval::{emit_report, load_bench, parse_grid_csv, parse_report_json, run_eval, EvalReport, ReportFormat};
use hdlcore::gateway::BackendKind;
use hdlcore::pipeline::{write_traces, Pipeline, PipelineMode, RagContext};
use hdlcore::retrieve::retrieve;
use hdlcore::vindex::{VectorIndex, DEFAULT_BATCH};

#[derive(Debug, Parser)]
#[command(name = "hdlcore", version, about = "Retrieval-augmented Verilog generation and evaluation")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Use the offline mock gateway with chat fixtures from this directory.
    #[arg(long, global = true, value_name = "DIR")]
    mock: Option<PathBuf>,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true)]
    log_level: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a corpus from instruction/code JSONL files.
    Ingest(IngestArgs),
    /// Embed a corpus and write a vector index.
    Index(IndexArgs),
    /// Show the exemplars retrieved for a task.
    Retrieve(RetrieveArgs),
    /// Classify a task by logic type and complexity.
    Classify(ClassifyArgs),
    /// Generate code for one or more tasks and write traces.
    Generate(GenerateArgs),
    /// Generate and check code for every design in a bench.
    Eval(EvalArgs),
    /// Render a saved report.
    Report(ReportArgs),
    /// Prompt template utilities.
    Prompts {
        #[command(subcommand)]
        command: PromptsCommand,
    },
}

#[derive(Debug, Subcommand)]
enum PromptsCommand {
    /// Validate the template set.
    Lint {
        #[arg(long, value_name = "DIR")]
        template_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[arg(long = "input", required = true, value_name = "FILE")]
    inputs: Vec<PathBuf>,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[arg(long)]
    min_instruction_len: Option<usize>,
    #[arg(long)]
    min_code_len: Option<usize>,
    /// Keep exact duplicate records.
    #[arg(long)]
    no_dedup: bool,
}

#[derive(Debug, Args)]
struct IndexArgs {
    #[arg(long, value_name = "FILE")]
    corpus: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BATCH)]
    batch: usize,
}

#[derive(Debug, Args)]
struct RetrieveArgs {
    #[arg(long, value_name = "DIR")]
    index: PathBuf,
    #[arg(long, value_name = "FILE")]
    task: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct ClassifyArgs {
    #[arg(long, value_name = "FILE")]
    task: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// base, cot, c_cot, c_cot_rag or full.
    #[arg(long)]
    mode: Option<PipelineMode>,
    #[arg(long, value_name = "DIR")]
    index: Option<PathBuf>,
    #[arg(long)]
    attempts: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    parallel_tasks: Option<usize>,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long = "task", required = true, value_name = "FILE")]
    tasks: Vec<PathBuf>,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long, value_name = "DIR")]
    bench: PathBuf,
    #[command(flatten)]
    run: RunArgs,
    /// Syntax check command; {code_file} and {tb_file} are substituted.
    #[arg(long)]
    syntax_cmd: Option<String>,
    /// Functional check command; {code_file} and {tb_file} are substituted.
    #[arg(long)]
    func_cmd: Option<String>,
    #[arg(long)]
    timeout_secs: Option<u64>,
    #[arg(long)]
    parallel_checks: Option<usize>,
    /// Where to write the JSON report.
    #[arg(long, value_name = "FILE")]
    report: PathBuf,
    /// Also write per-attempt traces here.
    #[arg(long, value_name = "DIR")]
    traces: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// A JSON report, or a `design,attempt,syntax_pass,func_pass` CSV grid.
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    #[arg(long, default_value = "markdown")]
    format: ReportFormat,
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

fn init_logging(level: &str) {
    let _ = env_logger::Builder::new()
        .parse_filters(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
}

fn read_task(path: &Path) -> Result<TaskDescription> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read task {}", path.display()))?;
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned());
    TaskDescription::new(text, name).with_context(|| format!("task file {} is empty", path.display()))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => {
            std::io::stdout().lock().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

impl RunArgs {
    fn apply(&self, cfg: &mut GlobalConfig) {
        if let Some(m) = self.mode {
            cfg.pipeline.mode = m;
        }
        if let Some(a) = self.attempts {
            cfg.pipeline.attempts = a;
        }
        if let Some(k) = self.k {
            cfg.retrieval.k = k;
        }
        if let Some(n) = self.n {
            cfg.retrieval.n = n;
        }
        if let Some(p) = self.parallel_tasks {
            cfg.pipeline.parallel_tasks = p;
        }
    }
}

fn load_index(dir: Option<&Path>, mode: PipelineMode) -> Result<Option<(VectorIndex, Vec<hdlcore::corpus::CorpusRecord>)>> {
    match dir {
        Some(d) => Ok(Some(
            VectorIndex::load(d).with_context(|| format!("cannot load index {}", d.display()))?,
        )),
        None if mode >= PipelineMode::CCotRag => bail!("mode {mode} requires --index"),
        None => Ok(None),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = GlobalConfig::load_or_default(cli.config.as_deref())?;
    if let Some(level) = cli.log_level {
        cfg.log_level = level;
    }
    if let Some(dir) = cli.mock {
        cfg.gateway.backend = BackendKind::Mock;
        cfg.gateway.mock_fixtures = Some(dir);
    }
    init_logging(&cfg.log_level);

    match cli.command {
        Command::Ingest(a) => {
            let mut filters = cfg.ingest.clone();
            if let Some(v) = a.min_instruction_len {
                filters.min_instruction_len = v;
            }
            if let Some(v) = a.min_code_len {
                filters.min_code_len = v;
            }
            if a.no_dedup {
                filters.dedup = false;
            }
            let (corpus, stats) = ingest(&a.inputs, &filters)?;
            save_corpus(&corpus, &a.out)?;
            print_json(&stats)
        }
        Command::Index(a) => {
            let corpus = load_corpus(&a.corpus)?;
            let gw = cfg.gateway()?;
            let index = VectorIndex::build(&corpus, &gw, a.batch)?;
            index.save(&a.out, &corpus)?;
            println!("indexed {} records (dim {}) into {}", index.count(), index.dim(), a.out.display());
            Ok(())
        }
        Command::Retrieve(a) => {
            if let Some(k) = a.k {
                cfg.retrieval.k = k;
            }
            if let Some(n) = a.n {
                cfg.retrieval.n = n;
            }
            let (index, corpus) = VectorIndex::load(&a.index)?;
            let task = read_task(&a.task)?;
            let gw = cfg.gateway()?;
            let r = retrieve(&index, &corpus, &task.raw_text, &cfg.retrieval, &gw)?;
            if a.json {
                return print_json(&r);
            }
            println!("{} candidates, reranked: {}", r.candidates, r.reranked);
            for (i, e) in r.exemplars.iter().enumerate() {
                let first = e.instruction.lines().next().unwrap_or("");
                println!("{}\t#{}\t{:.4}\t{}", i + 1, e.record_id, e.rerank_score, first);
            }
            Ok(())
        }
        Command::Classify(a) => {
            let task = read_task(&a.task)?;
            let catalog = cfg.catalog()?;
            let gw = cfg.gateway()?;
            let classifier = Classifier::new(
                cfg.keywords()?,
                cfg.pipeline.complexity_default,
                &catalog,
                gw.chat_model().to_string(),
                cfg.gateway.max_tokens,
            );
            let c = classifier.classify(&task, &gw)?;
            if a.json {
                return print_json(&serde_json::json!({
                    "logic": c.class.logic,
                    "complexity": c.class.complexity,
                    "label": c.class.label,
                    "matched_keywords": c.matched_keywords,
                    "complexity_parsed": c.complexity_parsed,
                }));
            }
            println!("logic: {:?}", c.class.logic);
            println!("complexity: {:?}", c.class.complexity);
            println!("label: {}", c.class.label);
            println!("matched keywords: {}", c.matched_keywords.join(", "));
            Ok(())
        }
        Command::Generate(a) => {
            a.run.apply(&mut cfg);
            let tasks = a.tasks.iter().map(|p| read_task(p)).collect::<Result<Vec<_>>>()?;
            let catalog = cfg.catalog()?;
            let gw = cfg.gateway()?;
            let loaded = load_index(a.run.index.as_deref(), cfg.pipeline.mode)?;
            let rag = loaded.as_ref().map(|(index, corpus)| RagContext { index, corpus });
            let pipeline = Pipeline::new(cfg.pipeline_config(), &catalog, cfg.keywords()?, rag, gw.chat_model())?;
            let outcomes = pipeline.run_suite(&tasks, &gw)?;
            write_traces(&a.out, &outcomes)?;
            for o in &outcomes {
                match &o.error {
                    Some(e) => println!("{}: failed: {e}", o.task),
                    None => {
                        let ok = o.attempts.iter().filter(|a| a.error.is_none()).count();
                        println!("{}: {ok}/{} attempts completed", o.task, o.attempts.len());
                    }
                }
            }
            Ok(())
        }
        Command::Eval(a) => {
            a.run.apply(&mut cfg);
            if let Some(c) = a.syntax_cmd {
                cfg.eval.syntax_cmd = c;
            }
            if let Some(c) = a.func_cmd {
                cfg.eval.func_cmd = c;
            }
            if let Some(t) = a.timeout_secs {
                cfg.eval.timeout_secs = t;
            }
            if let Some(p) = a.parallel_checks {
                cfg.eval.parallel_checks = p;
            }
            let designs = load_bench(&a.bench)?;
            let catalog = cfg.catalog()?;
            let gw = cfg.gateway()?;
            let loaded = load_index(a.run.index.as_deref(), cfg.pipeline.mode)?;
            let rag = loaded.as_ref().map(|(index, corpus)| RagContext { index, corpus });
            let pipeline = Pipeline::new(cfg.pipeline_config(), &catalog, cfg.keywords()?, rag, gw.chat_model())?;
            let (report, outcomes) = run_eval(&designs, &pipeline, &gw, &cfg.eval)?;
            if let Some(dir) = &a.traces {
                write_traces(dir, &outcomes)?;
            }
            write_output(Some(&a.report), &emit_report(&report, ReportFormat::Json))?;
            for agg in &report.aggregates {
                println!(
                    "pass@{}: syntax {}/{} ({}%), function {}/{} ({}%)",
                    agg.k,
                    agg.syntax_successes,
                    agg.designs,
                    hdlcore::eval::percent(agg.syntax_rate),
                    agg.func_successes,
                    agg.designs,
                    hdlcore::eval::percent(agg.func_rate)
                );
            }
            Ok(())
        }
        Command::Report(a) => {
            let text = fs::read_to_string(&a.input).with_context(|| format!("cannot read {}", a.input.display()))?;
            let report = if a.input.extension().is_some_and(|e| e == "csv") {
                EvalReport::new(None, parse_grid_csv(&text)?)?
            } else {
                parse_report_json(&text)?
            };
            write_output(a.out.as_deref(), &emit_report(&report, a.format))
        }
        Command::Prompts {
            command: PromptsCommand::Lint { template_dir },
        } => {
            if template_dir.is_some() {
                cfg.template_dir = template_dir;
            }
            cfg.catalog()?;
            println!("{} templates ok", hdlcore::prompts::TemplateId::ALL.len());
            Ok(())
        }
    }
}
