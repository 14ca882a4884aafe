//! Task classification: logic type from temporal keywords, complexity from
//! the model's own assessment.

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{LazyLock, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::gateway::{ChatMessage, ChatRequest, Gateway, GatewayError, LOW_TEMPERATURE};
use crate::hdl_extract::{extract_components, word_matcher, KeyComponents, TemporalKeywords};
use crate::prompts::{PromptBindings, PromptCatalog, PromptError, TemplateId};

static COMBINATIONAL: LazyLock<Regex> = LazyLock::new(|| word_matcher("combinational"));

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskDescription {
    pub raw_text: String,
    pub name: Option<String>,
    #[serde(skip)]
    components: OnceLock<KeyComponents>,
}

impl PartialEq for TaskDescription {
    fn eq(&self, other: &Self) -> bool {
        self.raw_text == other.raw_text && self.name == other.name
    }
}

impl TaskDescription {
    /// Returns `None` for blank text.
    pub fn new(raw_text: impl Into<String>, name: Option<String>) -> Option<Self> {
        let raw_text = raw_text.into();
        if raw_text.trim().is_empty() {
            return None;
        }
        Some(Self {
            raw_text,
            name,
            components: OnceLock::new(),
        })
    }

    pub fn components(&self) -> &KeyComponents {
        self.components.get_or_init(|| extract_components(&self.raw_text, None))
    }

    pub fn display_name(&self) -> &str {
        self.name.as_deref().unwrap_or("task")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogicType {
    Combinational,
    Sequential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Complexity {
    Simple,
    Complex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskLabel {
    #[serde(rename = "SC-HDL")]
    ScHdl,
    #[serde(rename = "SS-HDL")]
    SsHdl,
    #[serde(rename = "CC-HDL")]
    CcHdl,
    #[serde(rename = "CS-HDL")]
    CsHdl,
}

impl TaskLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskLabel::ScHdl => "SC-HDL",
            TaskLabel::SsHdl => "SS-HDL",
            TaskLabel::CcHdl => "CC-HDL",
            TaskLabel::CsHdl => "CS-HDL",
        }
    }
}

impl fmt::Display for TaskLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskClass {
    pub logic: LogicType,
    pub complexity: Complexity,
    pub label: TaskLabel,
}

impl TaskClass {
    pub fn new(logic: LogicType, complexity: Complexity) -> Self {
        let label = match (complexity, logic) {
            (Complexity::Simple, LogicType::Combinational) => TaskLabel::ScHdl,
            (Complexity::Simple, LogicType::Sequential) => TaskLabel::SsHdl,
            (Complexity::Complex, LogicType::Combinational) => TaskLabel::CcHdl,
            (Complexity::Complex, LogicType::Sequential) => TaskLabel::CsHdl,
        };
        Self {
            logic,
            complexity,
            label,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ClassifyError {
    #[error("complexity assessment failed: {0}")]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// Sequential iff a temporal keyword occurs, unless the text says
/// "combinational", which always wins.
pub fn classify_logic(text: &str, keywords: &TemporalKeywords) -> LogicType {
    if COMBINATIONAL.is_match(text) {
        LogicType::Combinational
    } else if keywords.detect(text) {
        LogicType::Sequential
    } else {
        LogicType::Combinational
    }
}

/// First case-insensitive occurrence of SIMPLE or COMPLEX in a reply.
pub fn parse_complexity(reply: &str) -> Option<Complexity> {
    let lower = reply.to_lowercase();
    match (lower.find("simple"), lower.find("complex")) {
        (Some(s), Some(c)) if s < c => Some(Complexity::Simple),
        (Some(_), Some(_)) | (None, Some(_)) => Some(Complexity::Complex),
        (Some(_), None) => Some(Complexity::Simple),
        (None, None) => None,
    }
}

/// Result of classifying one task, including the exchange with the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub class: TaskClass,
    pub matched_keywords: Vec<String>,
    pub complexity_parsed: bool,
    pub messages: Vec<ChatMessage>,
    pub reply: String,
}

#[derive(Debug)]
pub struct Classifier<'a> {
    keywords: TemporalKeywords,
    complexity_default: Complexity,
    catalog: &'a PromptCatalog,
    chat_model: String,
    max_tokens: u32,
    parse_failures: AtomicUsize,
}

impl<'a> Classifier<'a> {
    pub fn new(
        keywords: TemporalKeywords,
        complexity_default: Complexity,
        catalog: &'a PromptCatalog,
        chat_model: impl Into<String>,
        max_tokens: u32,
    ) -> Self {
        Self {
            keywords,
            complexity_default,
            catalog,
            chat_model: chat_model.into(),
            max_tokens,
            parse_failures: AtomicUsize::new(0),
        }
    }

    pub fn keywords(&self) -> &TemporalKeywords {
        &self.keywords
    }

    pub fn parse_failures(&self) -> usize {
        self.parse_failures.load(Ordering::SeqCst)
    }

    pub fn classify_logic(&self, task: &TaskDescription) -> LogicType {
        classify_logic(&task.raw_text, &self.keywords)
    }

    /// Asks the model at temperature 0. Unparseable replies fall back to the
    /// configured default and are counted.
    pub fn assess_complexity(
        &self,
        task: &TaskDescription,
        gateway: &Gateway,
    ) -> Result<(Complexity, bool, Vec<ChatMessage>, String), ClassifyError> {
        let prompt = self
            .catalog
            .render(TemplateId::Complexity, &PromptBindings::new().bind("task", &task.raw_text))?;
        let messages = prompt.messages();
        let req = ChatRequest {
            messages: messages.clone(),
            temperature: LOW_TEMPERATURE,
            max_tokens: self.max_tokens,
            model_name: self.chat_model.clone(),
        };
        let reply = gateway.chat(&req)?;
        match parse_complexity(&reply) {
            Some(c) => Ok((c, true, messages, reply)),
            None => {
                let n = self.parse_failures.fetch_add(1, Ordering::SeqCst) + 1;
                log::warn!(
                    "{}: could not parse complexity from {:?}; using {:?} ({n} parse failures so far)",
                    task.display_name(),
                    reply.chars().take(60).collect::<String>(),
                    self.complexity_default
                );
                Ok((self.complexity_default, false, messages, reply))
            }
        }
    }

    pub fn classify(&self, task: &TaskDescription, gateway: &Gateway) -> Result<Classification, ClassifyError> {
        let logic = self.classify_logic(task);
        let (complexity, complexity_parsed, messages, reply) = self.assess_complexity(task, gateway)?;
        Ok(Classification {
            class: TaskClass::new(logic, complexity),
            matched_keywords: self.keywords.matches(&task.raw_text).into_iter().map(String::from).collect(),
            complexity_parsed,
            messages,
            reply,
        })
    }
}
