//! Prompt template catalog.
//!
//! Each template is a text file named `<id>.txt`:
//!
//! ```text
//! placeholders: task, exemplars, knowledge
//! === system ===
//! ...
//! === knowledge ===      (generation templates only)
//! ...
//! === user ===
//! ... {task} ...
//! ```
//!
//! `{knowledge}` is bound from the template's own knowledge section; every
//! other placeholder comes from the caller's bindings. Substitution is a
//! single pass, so braces inside bound values (Verilog concatenations) are
//! never re-expanded.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::{Complexity, TaskClass, TaskLabel};
use crate::gateway::ChatMessage;

pub const STEP_PREFIX: &str = "[STEP]";
pub const CHECK_PREFIX: &str = "[CHECK]";
pub const MISMATCH_PREFIX: &str = "[MISMATCH]";
pub const RESULT_PREFIX: &str = "[RESULT]";

/// Default cap on the total characters of injected exemplars.
pub const DEFAULT_EXEMPLAR_BUDGET: usize = 8000;

/// Names a template may reference.
pub const PLACEHOLDERS: &[&str] = &["task", "exemplars", "code", "testbench", "summary", "module_header", "knowledge"];

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template {template}: placeholder {{{name}}} is not bound")]
    Missing { template: TemplateId, name: String },
    #[error("template {template}: {detail}")]
    Lint { template: TemplateId, detail: String },
    #[error("cannot read template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown template id {0:?}")]
    UnknownId(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    ScGen,
    SsGen,
    CcGen,
    CsGen,
    CotGen,
    Complexity,
    Testbench,
    Selfsim,
    Refine,
}

impl TemplateId {
    pub const ALL: [TemplateId; 9] = [
        TemplateId::ScGen,
        TemplateId::SsGen,
        TemplateId::CcGen,
        TemplateId::CsGen,
        TemplateId::CotGen,
        TemplateId::Complexity,
        TemplateId::Testbench,
        TemplateId::Selfsim,
        TemplateId::Refine,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::ScGen => "sc_gen",
            TemplateId::SsGen => "ss_gen",
            TemplateId::CcGen => "cc_gen",
            TemplateId::CsGen => "cs_gen",
            TemplateId::CotGen => "cot_gen",
            TemplateId::Complexity => "complexity",
            TemplateId::Testbench => "testbench",
            TemplateId::Selfsim => "selfsim",
            TemplateId::Refine => "refine",
        }
    }

    /// The category-specific generation template for a task class.
    pub fn for_class(class: &TaskClass) -> Self {
        match class.label {
            TaskLabel::ScHdl => TemplateId::ScGen,
            TaskLabel::SsHdl => TemplateId::SsGen,
            TaskLabel::CcHdl => TemplateId::CcGen,
            TaskLabel::CsHdl => TemplateId::CsGen,
        }
    }

    fn is_class_generation(self) -> bool {
        matches!(self, TemplateId::ScGen | TemplateId::SsGen | TemplateId::CcGen | TemplateId::CsGen)
    }

    fn is_complex_generation(self) -> bool {
        matches!(self, TemplateId::CcGen | TemplateId::CsGen)
    }

    fn required(self) -> &'static [&'static str] {
        match self {
            TemplateId::ScGen | TemplateId::SsGen | TemplateId::CcGen | TemplateId::CsGen => {
                &["task", "exemplars", "knowledge"]
            }
            TemplateId::CotGen | TemplateId::Complexity => &["task"],
            TemplateId::Testbench => &["task", "code"],
            TemplateId::Selfsim => &["task", "code", "testbench"],
            TemplateId::Refine => &["task", "code", "summary"],
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateId {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TemplateId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| PromptError::UnknownId(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: TemplateId,
    pub declared: Vec<String>,
    pub system_text: String,
    pub knowledge: Option<String>,
    pub user_text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    System,
    Knowledge,
    User,
}

impl PromptTemplate {
    pub fn parse(id: TemplateId, text: &str) -> Result<Self, PromptError> {
        let lint = |detail: &str| PromptError::Lint {
            template: id,
            detail: detail.to_string(),
        };
        let mut lines = text.lines();
        let first = lines.next().unwrap_or("");
        let declared: Vec<String> = first
            .strip_prefix("placeholders:")
            .ok_or_else(|| lint("first line must be `placeholders: ...`"))?
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();

        let mut sections: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        let mut current: Option<Section> = None;
        for line in lines {
            let marker = match line.trim() {
                "=== system ===" => Some(Section::System),
                "=== knowledge ===" => Some(Section::Knowledge),
                "=== user ===" => Some(Section::User),
                _ => None,
            };
            if let Some(m) = marker {
                current = Some(m);
                continue;
            }
            let key = match current {
                Some(Section::System) => "system",
                Some(Section::Knowledge) => "knowledge",
                Some(Section::User) => "user",
                None if line.trim().is_empty() => continue,
                None => return Err(lint("text before the first section marker")),
            };
            sections.entry(key).or_default().push(line);
        }
        let join = |k: &str| sections.get(k).map(|v| v.join("\n").trim_end().to_string());
        Ok(Self {
            id,
            declared,
            system_text: join("system").unwrap_or_default(),
            knowledge: join("knowledge"),
            user_text: join("user").ok_or_else(|| lint("missing `=== user ===` section"))?,
        })
    }

    /// Placeholder names referenced in the system and user text.
    pub fn referenced(&self) -> BTreeSet<&'static str> {
        let mut out = BTreeSet::new();
        for text in [&self.system_text, &self.user_text] {
            for name in PLACEHOLDERS {
                if text.contains(&format!("{{{name}}}")) {
                    out.insert(*name);
                }
            }
        }
        out
    }

    /// Checks declared vs referenced placeholders and the per-id content rules.
    pub fn lint(&self) -> Result<(), PromptError> {
        let fail = |detail: String| {
            Err(PromptError::Lint {
                template: self.id,
                detail,
            })
        };
        for name in &self.declared {
            if !PLACEHOLDERS.contains(&name.as_str()) {
                return fail(format!("unknown placeholder {name:?} declared"));
            }
        }
        let referenced = self.referenced();
        let declared: BTreeSet<&str> = self.declared.iter().map(String::as_str).collect();
        if referenced != declared {
            return fail(format!("declares {declared:?} but references {referenced:?}"));
        }
        for required in self.id.required() {
            if !referenced.contains(required) {
                return fail(format!("must reference {{{required}}}"));
            }
        }
        if self.id.is_class_generation() {
            let Some(knowledge) = self.knowledge.as_deref().filter(|k| !k.trim().is_empty()) else {
                return fail("generation template needs a knowledge section".into());
            };
            let has_pitfalls = knowledge.lines().any(|l| l.trim_start().starts_with("- "));
            if self.id.is_complex_generation() && !has_pitfalls {
                return fail("complex-class knowledge must include a pitfall list".into());
            }
            if !self.id.is_complex_generation() && (has_pitfalls || knowledge.trim().lines().count() != 1) {
                return fail("simple-class knowledge must be a single line of guidance".into());
            }
        } else if self.knowledge.is_some() {
            return fail("only generation templates carry a knowledge section".into());
        }
        if self.id == TemplateId::Selfsim {
            let all = format!("{}\n{}", self.system_text, self.user_text);
            for prefix in [STEP_PREFIX, CHECK_PREFIX, MISMATCH_PREFIX, RESULT_PREFIX] {
                if !all.contains(prefix) {
                    return fail(format!("must demand the {prefix} transcript prefix"));
                }
            }
            if !all.contains("exactly one [RESULT] line") {
                return fail("must demand exactly one [RESULT] line".into());
            }
        }
        Ok(())
    }
}

/// Named values substituted into a template.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PromptBindings(BTreeMap<String, String>);

impl PromptBindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(mut self, name: &str, value: impl Into<String>) -> Self {
        self.0.insert(name.to_string(), value.into());
        self
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.0.get(name).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub system_text: String,
    pub user_text: String,
}

impl RenderedPrompt {
    pub fn messages(&self) -> Vec<ChatMessage> {
        let mut out = Vec::with_capacity(2);
        if !self.system_text.is_empty() {
            out.push(ChatMessage::system(&self.system_text));
        }
        out.push(ChatMessage::user(&self.user_text));
        out
    }
}

fn substitute(template: TemplateId, text: &str, lookup: &dyn Fn(&str) -> Option<String>) -> Result<String, PromptError> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let name = after
            .find('}')
            .map(|close| &after[..close])
            .filter(|n| PLACEHOLDERS.contains(n));
        match name {
            Some(name) => {
                let value = lookup(name).ok_or_else(|| PromptError::Missing {
                    template,
                    name: name.to_string(),
                })?;
                out.push_str(&value);
                rest = &after[name.len() + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptCatalog {
    templates: BTreeMap<TemplateId, PromptTemplate>,
}

fn builtin_text(id: TemplateId) -> &'static str {
    match id {
        TemplateId::ScGen => include_str!("../templates/sc_gen.txt"),
        TemplateId::SsGen => include_str!("../templates/ss_gen.txt"),
        TemplateId::CcGen => include_str!("../templates/cc_gen.txt"),
        TemplateId::CsGen => include_str!("../templates/cs_gen.txt"),
        TemplateId::CotGen => include_str!("../templates/cot_gen.txt"),
        TemplateId::Complexity => include_str!("../templates/complexity.txt"),
        TemplateId::Testbench => include_str!("../templates/testbench.txt"),
        TemplateId::Selfsim => include_str!("../templates/selfsim.txt"),
        TemplateId::Refine => include_str!("../templates/refine.txt"),
    }
}

impl PromptCatalog {
    /// The templates compiled into the binary.
    pub fn builtin() -> Self {
        let templates = TemplateId::ALL
            .into_iter()
            .map(|id| (id, PromptTemplate::parse(id, builtin_text(id)).expect("built-in template parses")))
            .collect();
        Self { templates }
    }

    /// Built-in templates overridden by any `<id>.txt` files in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut catalog = Self::builtin();
        for id in TemplateId::ALL {
            let path = dir.join(format!("{id}.txt"));
            if !path.exists() {
                continue;
            }
            let text = fs::read_to_string(&path).map_err(|source| PromptError::Io {
                path: path.display().to_string(),
                source,
            })?;
            catalog.templates.insert(id, PromptTemplate::parse(id, &text)?);
        }
        catalog.lint()?;
        Ok(catalog)
    }

    pub fn lint(&self) -> Result<(), PromptError> {
        self.templates.values().try_for_each(PromptTemplate::lint)
    }

    pub fn get(&self, id: TemplateId) -> &PromptTemplate {
        &self.templates[&id]
    }

    pub fn render(&self, id: TemplateId, bindings: &PromptBindings) -> Result<RenderedPrompt, PromptError> {
        let template = self.get(id);
        let lookup = |name: &str| {
            if name == "knowledge" {
                template.knowledge.clone()
            } else {
                bindings.get(name).map(String::from)
            }
        };
        Ok(RenderedPrompt {
            system_text: substitute(id, &template.system_text, &lookup)?,
            user_text: substitute(id, &template.user_text, &lookup)?,
        })
    }

    /// The domain guidance injected for a task class: one line for simple
    /// classes, a pitfall list for complex ones.
    pub fn knowledge_block(&self, class: &TaskClass) -> &str {
        self.get(TemplateId::for_class(class)).knowledge.as_deref().unwrap_or("")
    }
}

/// An exemplar as shown to the model.
#[derive(Debug, Clone, Copy)]
pub struct ExemplarText<'a> {
    pub instruction: &'a str,
    pub code: &'a str,
}

fn exemplar_block(i: usize, e: &ExemplarText<'_>) -> String {
    format!("Example {i} \u{2014} Task: {}\nCode:\n{}\n", e.instruction.trim(), e.code.trim())
}

/// Formats exemplars as numbered blocks under a header. Exemplars are in rank
/// order; the lowest-ranked are dropped until the blocks fit `budget`
/// characters. Returns the text and the number of exemplars kept. No
/// exemplars render as the empty string.
pub fn format_exemplars(exemplars: &[ExemplarText<'_>], budget: usize) -> (String, usize) {
    let mut blocks: Vec<String> = exemplars
        .iter()
        .enumerate()
        .map(|(i, e)| exemplar_block(i + 1, e))
        .collect();
    while !blocks.is_empty() && blocks.iter().map(|b| b.chars().count()).sum::<usize>() > budget {
        blocks.pop();
    }
    if blocks.is_empty() {
        return (String::new(), 0);
    }
    let kept = blocks.len();
    (format!("Reference examples:\n\n{}\n", blocks.join("\n")), kept)
}

/// Whether a class receives the extended knowledge block.
pub fn is_extended(class: &TaskClass) -> bool {
    class.complexity == Complexity::Complex
}
