//! Per-task orchestration and the ablation modes.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::{Classification, ClassifyError, Classifier, Complexity, TaskDescription};
use crate::corpus::CorpusRecord;
use crate::gateway::{ChatMessage, ChatRequest, Gateway, GatewayError, LOW_TEMPERATURE, MODERATE_TEMPERATURE};
use crate::hdl_extract::{extract_code_block, TemporalKeywords};
use crate::prompts::{
    format_exemplars, ExemplarText, PromptBindings, PromptCatalog, PromptError, TemplateId, DEFAULT_EXEMPLAR_BUDGET,
};
use crate::retrieve::{retrieve, Exemplar, RetrievalParams, RetrieveError};
use crate::selfverify::{ExemplarRef, GenerationTrace, Phase, PhaseLog, SelfVerifier, SelfVerifyError};
use crate::vindex::VectorIndex;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no tasks")]
    NoTasks,
    #[error("mode {0} requires a vector index")]
    MissingIndex(PipelineMode),
    #[error("invalid pipeline configuration: {0}")]
    Config(String),
    #[error("unknown mode {0:?} (expected base, cot, c_cot, c_cot_rag or full)")]
    UnknownMode(String),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Retrieve(#[from] RetrieveError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    SelfVerify(#[from] SelfVerifyError),
    #[error("generation reply contains no Verilog code")]
    NoCode,
    #[error("cannot write trace {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Configurations from the plain prompt up to the complete framework. Each
/// mode adds one stage to the previous one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineMode {
    Base,
    Cot,
    CCot,
    CCotRag,
    Full,
}

impl PipelineMode {
    pub const ALL: [PipelineMode; 5] = [
        PipelineMode::Base,
        PipelineMode::Cot,
        PipelineMode::CCot,
        PipelineMode::CCotRag,
        PipelineMode::Full,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PipelineMode::Base => "base",
            PipelineMode::Cot => "cot",
            PipelineMode::CCot => "c_cot",
            PipelineMode::CCotRag => "c_cot_rag",
            PipelineMode::Full => "full",
        }
    }

    pub fn uses_cot(self) -> bool {
        self >= PipelineMode::Cot
    }

    pub fn uses_classification(self) -> bool {
        self >= PipelineMode::CCot
    }

    pub fn uses_retrieval(self) -> bool {
        self >= PipelineMode::CCotRag
    }

    pub fn uses_selfverify(self) -> bool {
        self == PipelineMode::Full
    }

    /// Phases an attempt runs in this mode, in order.
    pub fn phases(self) -> Vec<Phase> {
        let mut out = Vec::new();
        if self.uses_classification() {
            out.push(Phase::Classify);
        }
        if self.uses_retrieval() {
            out.push(Phase::Retrieve);
        }
        out.push(Phase::Generate);
        if self.uses_selfverify() {
            out.extend([Phase::Testbench, Phase::Selfsim, Phase::Summarize, Phase::Refine]);
        }
        out
    }

    /// Template used for the generation call; `None` sends the raw task.
    fn generation_template(self, classification: Option<&Classification>) -> Option<TemplateId> {
        match (self, classification) {
            (PipelineMode::Base, _) => None,
            (_, Some(c)) => Some(TemplateId::for_class(&c.class)),
            _ => Some(TemplateId::CotGen),
        }
    }
}

impl fmt::Display for PipelineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PipelineMode {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PipelineMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| PipelineError::UnknownMode(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Temperatures {
    /// Generation temperature for single-attempt runs.
    pub single: f64,
    /// Generation temperature when sampling several attempts.
    pub sampled: f64,
    pub selfverify: f64,
}

impl Default for Temperatures {
    fn default() -> Self {
        Self {
            single: LOW_TEMPERATURE,
            sampled: MODERATE_TEMPERATURE,
            selfverify: LOW_TEMPERATURE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub mode: PipelineMode,
    pub retrieval: RetrievalParams,
    pub temperatures: Temperatures,
    pub attempts: usize,
    pub parallel_tasks: usize,
    pub complexity_default: Complexity,
    pub max_tokens: u32,
    pub exemplar_budget: usize,
    pub summary_lines: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: PipelineMode::Full,
            retrieval: RetrievalParams::default(),
            temperatures: Temperatures::default(),
            attempts: 1,
            parallel_tasks: 2,
            complexity_default: Complexity::Complex,
            max_tokens: 4096,
            exemplar_budget: DEFAULT_EXEMPLAR_BUDGET,
            summary_lines: crate::selfverify::DEFAULT_SUMMARY_LINES,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.attempts == 0 {
            return Err(PipelineError::Config("attempts must be positive".into()));
        }
        if self.parallel_tasks == 0 {
            return Err(PipelineError::Config("parallel_tasks must be positive".into()));
        }
        let t = self.temperatures;
        for v in [t.single, t.sampled, t.selfverify] {
            if !(0.0..=2.0).contains(&v) {
                return Err(PipelineError::Config(format!("temperature {v} outside [0, 2]")));
            }
        }
        if self.mode.uses_retrieval() {
            self.retrieval.validate()?;
        }
        Ok(())
    }

    pub fn generation_temperature(&self) -> f64 {
        if self.attempts == 1 {
            self.temperatures.single
        } else {
            self.temperatures.sampled
        }
    }

    pub fn settings(&self) -> RunSettings {
        RunSettings {
            mode: self.mode,
            k: self.retrieval.k,
            n: self.retrieval.n,
            generation_temperature: self.generation_temperature(),
            selfverify_temperature: self.temperatures.selfverify,
            attempts: self.attempts,
        }
    }
}

/// The configuration echoed into every trace and report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub mode: PipelineMode,
    pub k: usize,
    pub n: usize,
    pub generation_temperature: f64,
    pub selfverify_temperature: f64,
    pub attempts: usize,
}

/// Index and aligned corpus for retrieval modes.
#[derive(Debug, Clone, Copy)]
pub struct RagContext<'a> {
    pub index: &'a VectorIndex,
    pub corpus: &'a [CorpusRecord],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub task: String,
    /// 1-based.
    pub attempt: usize,
    pub settings: RunSettings,
    pub trace: GenerationTrace,
    pub error: Option<String>,
}

impl AttemptRecord {
    /// Code to evaluate: refined if available, else the initial generation.
    /// A self-verification failure leaves the initial code usable.
    pub fn final_code(&self) -> Option<&str> {
        self.trace.final_code()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub task: String,
    pub attempts: Vec<AttemptRecord>,
    /// Set when the task failed before any attempt could run.
    pub error: Option<String>,
}

/// Per-task results shared by every attempt.
struct Prepared {
    classification: Option<Classification>,
    exemplars: Vec<Exemplar>,
}

pub struct Pipeline<'a> {
    config: PipelineConfig,
    catalog: &'a PromptCatalog,
    classifier: Classifier<'a>,
    rag: Option<RagContext<'a>>,
}

impl<'a> Pipeline<'a> {
    pub fn new(
        config: PipelineConfig,
        catalog: &'a PromptCatalog,
        keywords: TemporalKeywords,
        rag: Option<RagContext<'a>>,
        chat_model: &str,
    ) -> Result<Self, PipelineError> {
        config.validate()?;
        if config.mode.uses_retrieval() && rag.is_none() {
            return Err(PipelineError::MissingIndex(config.mode));
        }
        let classifier = Classifier::new(keywords, config.complexity_default, catalog, chat_model, config.max_tokens);
        Ok(Self {
            config,
            catalog,
            classifier,
            rag,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn classifier(&self) -> &Classifier<'a> {
        &self.classifier
    }

    fn prepare(&self, task: &TaskDescription, gateway: &Gateway) -> Result<Prepared, PipelineError> {
        let classification = if self.config.mode.uses_classification() {
            Some(self.classifier.classify(task, gateway)?)
        } else {
            None
        };
        let exemplars = match self.rag {
            Some(rag) if self.config.mode.uses_retrieval() => {
                retrieve(rag.index, rag.corpus, &task.raw_text, &self.config.retrieval, gateway)?.exemplars
            }
            _ => Vec::new(),
        };
        Ok(Prepared {
            classification,
            exemplars,
        })
    }

    fn generation_messages(&self, task: &TaskDescription, prep: &Prepared) -> Result<(Option<TemplateId>, Vec<ChatMessage>), PipelineError> {
        let Some(template) = self.config.mode.generation_template(prep.classification.as_ref()) else {
            return Ok((None, vec![ChatMessage::user(&task.raw_text)]));
        };
        let mut bindings = PromptBindings::new().bind("task", &task.raw_text);
        if template != TemplateId::CotGen {
            let texts: Vec<ExemplarText<'_>> = prep
                .exemplars
                .iter()
                .map(|e| ExemplarText {
                    instruction: &e.instruction,
                    code: &e.code,
                })
                .collect();
            let (block, _) = format_exemplars(&texts, self.config.exemplar_budget);
            bindings = bindings.bind("exemplars", block);
        }
        Ok((Some(template), self.catalog.render(template, &bindings)?.messages()))
    }

    fn run_attempt(
        &self,
        task: &TaskDescription,
        prep: &Prepared,
        first: bool,
        gateway: &Gateway,
        trace: &mut GenerationTrace,
    ) -> Result<(), PipelineError> {
        if let Some(c) = &prep.classification {
            trace.task_class = Some(c.class);
            trace.phases.push(PhaseLog {
                template: Some(TemplateId::Complexity),
                temperature: Some(LOW_TEMPERATURE),
                cached: !first,
                messages: c.messages.clone(),
                reply: c.reply.clone(),
                ..PhaseLog::local(Phase::Classify)
            });
        }
        if self.config.mode.uses_retrieval() {
            trace.exemplars = prep
                .exemplars
                .iter()
                .map(|e| ExemplarRef {
                    record_id: e.record_id,
                    rerank_score: e.rerank_score,
                })
                .collect();
            trace.phases.push(PhaseLog {
                cached: !first,
                ..PhaseLog::local(Phase::Retrieve)
            });
        }

        let (template, messages) = self.generation_messages(task, prep)?;
        let temperature = self.config.generation_temperature();
        let req = ChatRequest {
            messages,
            temperature,
            max_tokens: self.config.max_tokens,
            model_name: gateway.chat_model().to_string(),
        };
        let reply = gateway.chat(&req)?;
        trace.phases.push(PhaseLog {
            template,
            temperature: Some(temperature),
            messages: req.messages,
            reply: reply.clone(),
            ..PhaseLog::local(Phase::Generate)
        });
        let code = extract_code_block(&reply).ok_or(PipelineError::NoCode)?;
        trace.initial_code = Some(code.clone());

        if self.config.mode.uses_selfverify() {
            let mut sv = SelfVerifier::new(
                self.catalog,
                gateway.chat_model(),
                self.config.max_tokens,
                self.config.temperatures.selfverify,
            );
            sv.max_summary_lines = self.config.summary_lines;
            sv.run(task, &code, gateway, trace)?;
        }
        Ok(())
    }

    /// Runs every attempt for one task. Errors never escape: they are
    /// recorded on the attempt, or on the task when preparation fails.
    pub fn run_task(&self, task: &TaskDescription, gateway: &Gateway) -> TaskOutcome {
        let name = task.display_name().to_string();
        let prep = match self.prepare(task, gateway) {
            Ok(p) => p,
            Err(e) => {
                log::warn!("{name}: {e}");
                return TaskOutcome {
                    task: name,
                    attempts: Vec::new(),
                    error: Some(e.to_string()),
                };
            }
        };
        let attempts = (1..=self.config.attempts)
            .map(|attempt| {
                let mut trace = GenerationTrace::default();
                let error = self
                    .run_attempt(task, &prep, attempt == 1, gateway, &mut trace)
                    .err()
                    .map(|e| {
                        log::warn!("{name} attempt {attempt}: {e}");
                        e.to_string()
                    });
                AttemptRecord {
                    task: name.clone(),
                    attempt,
                    settings: self.config.settings(),
                    trace,
                    error,
                }
            })
            .collect();
        TaskOutcome {
            task: name,
            attempts,
            error: None,
        }
    }

    /// Runs tasks with at most `parallel_tasks` in flight. Output order
    /// matches input order.
    pub fn run_suite(&self, tasks: &[TaskDescription], gateway: &Gateway) -> Result<Vec<TaskOutcome>, PipelineError> {
        if tasks.is_empty() {
            return Err(PipelineError::NoTasks);
        }
        Ok(parallel_map(tasks, self.config.parallel_tasks, |task| self.run_task(task, gateway)))
    }
}

/// Applies `f` to each item with at most `workers` running at once,
/// returning results in input order.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers.max(1).min(items.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(item) = items.get(i) else { break };
                let r = f(item);
                slots.lock().unwrap_or_else(|p| p.into_inner())[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .unwrap_or_else(|p| p.into_inner())
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

/// Directory-safe version of a task name.
pub fn task_dir_name(name: &str) -> String {
    let cleaned: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.') { c } else { '_' })
        .collect();
    match cleaned.trim_matches('.') {
        "" => "task".to_string(),
        s => s.to_string(),
    }
}

/// Writes `<out>/<task>/attempt_<i>.json` for every attempt, or
/// `<out>/<task>/error.json` for tasks that never reached an attempt.
/// Returns the files written, in order.
pub fn write_traces(out: &Path, outcomes: &[TaskOutcome]) -> Result<Vec<PathBuf>, PipelineError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| PipelineError::Io { path, source }
    };
    let mut written = Vec::new();
    for outcome in outcomes {
        let dir = out.join(task_dir_name(&outcome.task));
        fs::create_dir_all(&dir).map_err(io(&dir))?;
        let mut files: Vec<(PathBuf, String)> = outcome
            .attempts
            .iter()
            .map(|a| {
                let json = serde_json::to_string_pretty(a).expect("trace serializes");
                (dir.join(format!("attempt_{}.json", a.attempt)), json)
            })
            .collect();
        if outcome.attempts.is_empty() {
            let json = serde_json::to_string_pretty(outcome).expect("outcome serializes");
            files.push((dir.join("error.json"), json));
        }
        for (path, json) in files {
            fs::write(&path, json + "\n").map_err(io(&path))?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Fixture, MockBackend};

    const CODE: &str = "module adder(input [7:0] a, input [7:0] b, output [8:0] s);\n  assign s = a + b;\nendmodule";

    fn fenced(code: &str) -> String {
        format!("```verilog\n{code}\n```")
    }

    fn backend() -> MockBackend {
        MockBackend::default()
            .with_fixture(Fixture::new("1_complexity", "COMPLEXITY ASSESSMENT", "SIMPLE"))
            .with_fixture(Fixture::new("2_gen", "CODE GENERATION", fenced(CODE)))
            .with_fixture(Fixture::new("3_base", "8-bit adder", fenced(CODE)))
            .with_fixture(Fixture::new("4_tb", "TESTBENCH GENERATION", fenced("module tb; adder dut(); endmodule")))
            .with_fixture(Fixture::new("5_sim", "SELF-SIMULATION", "[CHECK] ok\n[RESULT] PASS"))
            .with_fixture(Fixture::new("6_ref", "CODE REFINEMENT", fenced(CODE)))
    }

    fn task(name: &str, text: &str) -> TaskDescription {
        TaskDescription::new(text, Some(name.into())).unwrap()
    }

    fn pipeline(catalog: &PromptCatalog, mode: PipelineMode) -> Pipeline<'_> {
        let config = PipelineConfig {
            mode,
            ..PipelineConfig::default()
        };
        Pipeline::new(config, catalog, TemporalKeywords::default(), None, "mock-chat").unwrap()
    }

    #[test]
    fn modes_round_trip_and_are_monotone() {
        for (i, m) in PipelineMode::ALL.iter().enumerate() {
            assert_eq!(m.as_str().parse::<PipelineMode>().unwrap(), *m);
            if i > 0 {
                let prev = PipelineMode::ALL[i - 1].phases();
                assert!(prev.iter().all(|p| m.phases().contains(p)));
                assert!(m.phases().len() > prev.len() || *m == PipelineMode::Cot);
            }
        }
        assert!("turbo".parse::<PipelineMode>().is_err());
    }

    #[test]
    fn base_is_one_raw_call() {
        let cat = PromptCatalog::builtin();
        let gw = Gateway::new(backend());
        let out = pipeline(&cat, PipelineMode::Base).run_task(&task("a", "An 8-bit adder."), &gw);
        let a = &out.attempts[0];
        assert_eq!(gw.chat_calls(), 1);
        assert_eq!(a.trace.phases[0].messages, vec![ChatMessage::user("An 8-bit adder.")]);
        assert_eq!(a.trace.initial_code.as_deref(), Some(CODE));
    }

    #[test]
    fn full_is_five_calls_then_cached_classification() {
        let cat = PromptCatalog::builtin();
        let gw = Gateway::new(backend());
        let config = PipelineConfig {
            mode: PipelineMode::Full,
            attempts: 2,
            ..PipelineConfig::default()
        };
        let rag_free = Pipeline::new(config.clone(), &cat, TemporalKeywords::default(), None, "mock-chat");
        assert!(matches!(rag_free, Err(PipelineError::MissingIndex(PipelineMode::Full))));

        let p = pipeline(&cat, PipelineMode::CCot);
        let out = p.run_task(&task("a", "An 8-bit adder."), &gw);
        assert_eq!(out.attempts[0].trace.model_calls(), 2);
        assert_eq!(out.attempts[0].trace.task_class.unwrap().label.as_str(), "SC-HDL");

        let p = Pipeline::new(
            PipelineConfig {
                mode: PipelineMode::CCot,
                attempts: 2,
                ..PipelineConfig::default()
            },
            &cat,
            TemporalKeywords::default(),
            None,
            "mock-chat",
        )
        .unwrap();
        let before = gw.chat_calls();
        let out = p.run_task(&task("a", "An 8-bit adder."), &gw);
        assert_eq!(gw.chat_calls() - before, 3);
        assert!(out.attempts[1].trace.phases[0].cached);
        assert_eq!(out.attempts[1].settings.generation_temperature, MODERATE_TEMPERATURE);
    }

    #[test]
    fn suite_isolates_errors_and_keeps_order() {
        let cat = PromptCatalog::builtin();
        let gw = Gateway::new(
            MockBackend::default()
                .with_fixture(Fixture::new("c1", "first thing", "SIMPLE"))
                .with_fixture(Fixture::new("c3", "third thing", "COMPLEX"))
                .with_fixture(Fixture::new("gen", "CODE GENERATION", fenced(CODE))),
        );
        let tasks = [
            task("one", "The first thing."),
            task("two", "The second thing."),
            task("three", "The third thing."),
        ];
        let p = Pipeline::new(
            PipelineConfig {
                mode: PipelineMode::CCot,
                parallel_tasks: 3,
                ..PipelineConfig::default()
            },
            &cat,
            TemporalKeywords::default(),
            None,
            "mock-chat",
        )
        .unwrap();
        let out = p.run_suite(&tasks, &gw).unwrap();
        let names: Vec<_> = out.iter().map(|o| o.task.as_str()).collect();
        assert_eq!(names, ["one", "two", "three"]);
        assert!(out[1].error.is_some() && out[1].attempts.is_empty());
        assert!(out[0].error.is_none() && out[2].error.is_none());
        assert!(matches!(p.run_suite(&[], &gw), Err(PipelineError::NoTasks)));
    }

    #[test]
    fn no_code_marks_attempt() {
        let cat = PromptCatalog::builtin();
        let gw = Gateway::new(MockBackend::default().with_fixture(Fixture::new("g", "CODE GENERATION", "I refuse.")));
        let out = pipeline(&cat, PipelineMode::Cot).run_task(&task("x", "Anything"), &gw);
        assert_eq!(out.attempts.len(), 1);
        assert!(out.attempts[0].error.as_deref().unwrap().contains("no Verilog"));
        assert_eq!(out.attempts[0].final_code(), None);
    }

    #[test]
    fn traces_written_deterministically() {
        let cat = PromptCatalog::builtin();
        let gw = Gateway::new(backend());
        let p = pipeline(&cat, PipelineMode::CCot);
        let out = p.run_suite(&[task("a/b", "An 8-bit adder.")], &gw).unwrap();
        let d1 = tempfile::TempDir::new().unwrap();
        let d2 = tempfile::TempDir::new().unwrap();
        let f1 = write_traces(d1.path(), &out).unwrap();
        write_traces(d2.path(), &p.run_suite(&[task("a/b", "An 8-bit adder.")], &gw).unwrap()).unwrap();
        assert_eq!(f1, vec![d1.path().join("a_b/attempt_1.json")]);
        assert_eq!(
            fs::read(&f1[0]).unwrap(),
            fs::read(d2.path().join("a_b/attempt_1.json")).unwrap()
        );
        let back: AttemptRecord = serde_json::from_slice(&fs::read(&f1[0]).unwrap()).unwrap();
        assert_eq!(back, out[0].attempts[0]);
    }

    #[test]
    fn parallel_map_keeps_order() {
        let v: Vec<usize> = (0..37).collect();
        assert_eq!(parallel_map(&v, 4, |x| x * 2), v.iter().map(|x| x * 2).collect::<Vec<_>>());
    }

    #[test]
    fn config_validation() {
        let bad = PipelineConfig {
            attempts: 0,
            ..PipelineConfig::default()
        };
        assert!(bad.validate().is_err());
        let hot = PipelineConfig {
            temperatures: Temperatures {
                sampled: 3.0,
                ..Temperatures::default()
            },
            ..PipelineConfig::default()
        };
        assert!(hot.validate().is_err());
    }
}
