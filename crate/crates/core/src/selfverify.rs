//! Testbench generation, textual self-simulation, summary extraction and
//! one round of refinement.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::{TaskClass, TaskDescription};
use crate::gateway::{ChatMessage, ChatRequest, Gateway, GatewayError};
use crate::hdl_extract::{extract_code_block, parse_module_header};
use crate::prompts::{
    PromptBindings, PromptCatalog, PromptError, TemplateId, CHECK_PREFIX, MISMATCH_PREFIX, RESULT_PREFIX,
    STEP_PREFIX,
};

pub const DEFAULT_SUMMARY_LINES: usize = 20;

/// Follow-up sent when a reply carries no usable code block.
pub const REASK_TEXT: &str = "FENCED CODE BLOCK REQUIRED: your previous reply did not contain a usable Verilog module. \
Reply again with the complete code inside a single ```verilog fenced code block.";

#[derive(Debug, Error)]
pub enum SelfVerifyError {
    #[error("{0} must not be empty")]
    EmptyInput(&'static str),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("no usable testbench code block after a re-ask")]
    NoTestbench,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
    Missing,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Missing => "MISSING",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulationTranscript {
    pub raw: String,
    pub steps: Vec<String>,
    pub mismatches: Vec<String>,
    pub verdict: Verdict,
}

fn result_verdict(line: &str) -> Option<Verdict> {
    let rest = line.trim_start().strip_prefix(RESULT_PREFIX)?;
    let word: String = rest.trim_start().chars().take_while(char::is_ascii_alphabetic).collect();
    match word.to_ascii_uppercase().as_str() {
        "PASS" => Some(Verdict::Pass),
        "FAIL" => Some(Verdict::Fail),
        _ => None,
    }
}

impl SimulationTranscript {
    /// Parses a reply by line prefix. Lines are kept verbatim. If several
    /// verdict lines appear, the last one wins.
    pub fn parse(raw: &str) -> Self {
        let mut steps = Vec::new();
        let mut mismatches = Vec::new();
        let mut verdict = Verdict::Missing;
        for line in raw.lines() {
            let t = line.trim_start();
            if t.starts_with(STEP_PREFIX) || t.starts_with(CHECK_PREFIX) {
                steps.push(line.to_string());
            } else if t.starts_with(MISMATCH_PREFIX) {
                mismatches.push(line.to_string());
            } else if let Some(v) = result_verdict(t) {
                verdict = v;
            }
        }
        Self {
            raw: raw.to_string(),
            steps,
            mismatches,
            verdict,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub verdict: Verdict,
    pub mismatch_lines: Vec<String>,
    pub truncated: bool,
}

/// Keeps the verdict and the first `max_lines` mismatch lines.
pub fn summarize(transcript: &SimulationTranscript, max_lines: usize) -> SimulationSummary {
    SimulationSummary {
        verdict: transcript.verdict,
        mismatch_lines: transcript.mismatches.iter().take(max_lines).cloned().collect(),
        truncated: transcript.mismatches.len() > max_lines,
    }
}

impl SimulationSummary {
    /// The summary re-expressed in the transcript grammar.
    pub fn as_transcript(&self) -> String {
        let mut out: Vec<String> = self.mismatch_lines.clone();
        if self.verdict != Verdict::Missing {
            out.push(format!("{RESULT_PREFIX} {}", self.verdict));
        }
        out.join("\n")
    }

    /// Text bound to the refine template's `{summary}` placeholder.
    pub fn render(&self) -> String {
        let mut out = match self.verdict {
            Verdict::Pass if self.mismatch_lines.is_empty() => {
                return "Verdict: PASS. No mismatches were reported; return the code unchanged unless you find an error."
                    .to_string();
            }
            Verdict::Missing => "Verdict: MISSING. The simulation did not reach a verdict.".to_string(),
            v => format!("Verdict: {v}."),
        };
        if !self.mismatch_lines.is_empty() {
            out.push_str("\nMismatches:");
            for line in &self.mismatch_lines {
                out.push('\n');
                out.push_str(line.trim());
            }
        }
        if self.truncated {
            out.push_str("\n(further mismatches omitted)");
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Classify,
    Retrieve,
    Generate,
    Testbench,
    Selfsim,
    Summarize,
    Refine,
}

/// One step of an attempt. `messages`/`reply` are empty for phases that make
/// no chat call. A `cached` entry repeats an exchange made by an earlier
/// attempt of the same task and is not a new call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseLog {
    pub phase: Phase,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub template: Option<TemplateId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default)]
    pub cached: bool,
    #[serde(default)]
    pub reask: bool,
    pub messages: Vec<ChatMessage>,
    pub reply: String,
}

impl PhaseLog {
    pub fn local(phase: Phase) -> Self {
        Self {
            phase,
            template: None,
            temperature: None,
            cached: false,
            reask: false,
            messages: Vec::new(),
            reply: String::new(),
        }
    }

    pub fn is_model_call(&self) -> bool {
        !self.cached && !self.messages.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExemplarRef {
    pub record_id: usize,
    pub rerank_score: f64,
}

/// Everything one generation attempt did, in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct GenerationTrace {
    pub task_class: Option<TaskClass>,
    pub exemplars: Vec<ExemplarRef>,
    pub initial_code: Option<String>,
    pub testbench: Option<String>,
    pub transcript: Option<SimulationTranscript>,
    pub summary: Option<SimulationSummary>,
    pub refined_code: Option<String>,
    pub refinement_fallback: bool,
    pub phases: Vec<PhaseLog>,
}

impl GenerationTrace {
    pub fn model_calls(&self) -> usize {
        self.phases.iter().filter(|p| p.is_model_call()).count()
    }

    pub fn phase_sequence(&self) -> Vec<Phase> {
        let mut out: Vec<Phase> = Vec::new();
        for p in &self.phases {
            if out.last() != Some(&p.phase) {
                out.push(p.phase);
            }
        }
        out
    }

    /// Refined code if present, otherwise the initial code.
    pub fn final_code(&self) -> Option<&str> {
        self.refined_code.as_deref().or(self.initial_code.as_deref())
    }
}

fn usable_block(reply: &str) -> Option<String> {
    extract_code_block(reply).filter(|code| contains_module_token(code))
}

fn contains_module_token(code: &str) -> bool {
    code.split(|c: char| !(c.is_ascii_alphanumeric() || c == '_' || c == '$'))
        .any(|w| w == "module")
}

#[derive(Debug, Clone)]
pub struct SelfVerifier<'a> {
    pub catalog: &'a PromptCatalog,
    pub chat_model: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub max_summary_lines: usize,
}

impl<'a> SelfVerifier<'a> {
    pub fn new(catalog: &'a PromptCatalog, chat_model: impl Into<String>, max_tokens: u32, temperature: f64) -> Self {
        Self {
            catalog,
            chat_model: chat_model.into(),
            max_tokens,
            temperature,
            max_summary_lines: DEFAULT_SUMMARY_LINES,
        }
    }

    fn call(
        &self,
        phase: Phase,
        template: TemplateId,
        messages: Vec<ChatMessage>,
        reask: bool,
        gateway: &Gateway,
        log: &mut Vec<PhaseLog>,
    ) -> Result<String, GatewayError> {
        let req = ChatRequest {
            messages,
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            model_name: self.chat_model.clone(),
        };
        let reply = gateway.chat(&req)?;
        log.push(PhaseLog {
            phase,
            template: Some(template),
            temperature: Some(self.temperature),
            cached: false,
            reask,
            messages: req.messages,
            reply: reply.clone(),
        });
        Ok(reply)
    }

    /// Asks once, and once more with [`REASK_TEXT`] if the first reply has no
    /// usable code block.
    fn ask_for_code(
        &self,
        phase: Phase,
        template: TemplateId,
        bindings: &PromptBindings,
        gateway: &Gateway,
        log: &mut Vec<PhaseLog>,
    ) -> Result<Option<String>, SelfVerifyError> {
        let messages = self.catalog.render(template, bindings)?.messages();
        let first = self.call(phase, template, messages.clone(), false, gateway, log)?;
        if let Some(code) = usable_block(&first) {
            return Ok(Some(code));
        }
        let mut retry = messages;
        retry.push(ChatMessage::assistant(first));
        retry.push(ChatMessage::user(REASK_TEXT));
        let second = self.call(phase, template, retry, true, gateway, log)?;
        Ok(usable_block(&second))
    }

    pub fn gen_testbench(
        &self,
        task: &TaskDescription,
        initial_code: &str,
        gateway: &Gateway,
        log: &mut Vec<PhaseLog>,
    ) -> Result<String, SelfVerifyError> {
        if initial_code.trim().is_empty() {
            return Err(SelfVerifyError::EmptyInput("initial code"));
        }
        let header = parse_module_header(initial_code)
            .map(|h| h.render())
            .unwrap_or_else(|| task.components().module_header.clone());
        let bindings = PromptBindings::new()
            .bind("task", &task.raw_text)
            .bind("code", initial_code)
            .bind("module_header", header);
        self.ask_for_code(Phase::Testbench, TemplateId::Testbench, &bindings, gateway, log)?
            .ok_or(SelfVerifyError::NoTestbench)
    }

    pub fn self_simulate(
        &self,
        task: &TaskDescription,
        code: &str,
        testbench: &str,
        gateway: &Gateway,
        log: &mut Vec<PhaseLog>,
    ) -> Result<SimulationTranscript, SelfVerifyError> {
        if code.trim().is_empty() {
            return Err(SelfVerifyError::EmptyInput("code"));
        }
        if testbench.trim().is_empty() {
            return Err(SelfVerifyError::EmptyInput("testbench"));
        }
        let bindings = PromptBindings::new()
            .bind("task", &task.raw_text)
            .bind("code", code)
            .bind("testbench", testbench);
        let messages = self.catalog.render(TemplateId::Selfsim, &bindings)?.messages();
        let reply = self.call(Phase::Selfsim, TemplateId::Selfsim, messages, false, gateway, log)?;
        Ok(SimulationTranscript::parse(&reply))
    }

    /// Returns the refined code and whether it fell back to `initial_code`.
    pub fn refine(
        &self,
        task: &TaskDescription,
        initial_code: &str,
        summary: &SimulationSummary,
        gateway: &Gateway,
        log: &mut Vec<PhaseLog>,
    ) -> Result<(String, bool), SelfVerifyError> {
        if initial_code.trim().is_empty() {
            return Err(SelfVerifyError::EmptyInput("initial code"));
        }
        let bindings = PromptBindings::new()
            .bind("task", &task.raw_text)
            .bind("code", initial_code)
            .bind("summary", summary.render());
        match self.ask_for_code(Phase::Refine, TemplateId::Refine, &bindings, gateway, log)? {
            Some(code) => Ok((code, false)),
            None => Ok((initial_code.to_string(), true)),
        }
    }

    /// Runs testbench, self-simulation, summary and refinement, filling in
    /// `trace` as each phase completes.
    pub fn run(
        &self,
        task: &TaskDescription,
        initial_code: &str,
        gateway: &Gateway,
        trace: &mut GenerationTrace,
    ) -> Result<(), SelfVerifyError> {
        let testbench = self.gen_testbench(task, initial_code, gateway, &mut trace.phases)?;
        trace.testbench = Some(testbench.clone());
        let transcript = self.self_simulate(task, initial_code, &testbench, gateway, &mut trace.phases)?;
        let summary = summarize(&transcript, self.max_summary_lines);
        trace.transcript = Some(transcript);
        trace.phases.push(PhaseLog {
            reply: summary.render(),
            ..PhaseLog::local(Phase::Summarize)
        });
        trace.summary = Some(summary.clone());
        let (refined, fallback) = self.refine(task, initial_code, &summary, gateway, &mut trace.phases)?;
        trace.refined_code = Some(refined);
        trace.refinement_fallback = fallback;
        Ok(())
    }
}
