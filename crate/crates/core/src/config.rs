//! TOML configuration shared by all subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::Complexity;
use crate::corpus::IngestFilters;
use crate::eval::CheckConfig;
use crate::gateway::{BackendKind, EndpointConfig, Gateway, GatewayError, GatewaySettings, HttpBackend, MockBackend};
use crate::hdl_extract::TemporalKeywords;
use crate::pipeline::{PipelineConfig, PipelineMode, Temperatures};
use crate::prompts::{PromptCatalog, PromptError, DEFAULT_EXEMPLAR_BUDGET};
use crate::retrieve::RetrievalParams;
use crate::selfverify::DEFAULT_SUMMARY_LINES;

pub const DEFAULT_API_KEY_ENV: &str = "HDLCORE_API_KEY";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("temporal_keywords must contain at least one keyword")]
    NoKeywords,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub mode: PipelineMode,
    pub attempts: usize,
    pub parallel_tasks: usize,
    pub complexity_default: Complexity,
    pub exemplar_budget: usize,
    pub summary_lines: usize,
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self {
            mode: PipelineMode::Full,
            attempts: 1,
            parallel_tasks: 2,
            complexity_default: Complexity::Complex,
            exemplar_budget: DEFAULT_EXEMPLAR_BUDGET,
            summary_lines: DEFAULT_SUMMARY_LINES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlobalConfig {
    pub log_level: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    /// Directory of template overrides; built-in templates fill the gaps.
    pub template_dir: Option<PathBuf>,
    pub temporal_keywords: Option<Vec<String>>,
    pub chat: EndpointConfig,
    pub embed: EndpointConfig,
    pub rerank: EndpointConfig,
    pub gateway: GatewaySettings,
    pub retrieval: RetrievalParams,
    pub temperatures: Temperatures,
    pub pipeline: PipelineSection,
    pub eval: CheckConfig,
    pub ingest: IngestFilters,
}

impl Default for GlobalConfig {
    fn default() -> Self {
        Self {
            log_level: "info".into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            template_dir: None,
            temporal_keywords: None,
            chat: EndpointConfig::default(),
            embed: EndpointConfig::default(),
            rerank: EndpointConfig::default(),
            gateway: GatewaySettings::default(),
            retrieval: RetrievalParams::default(),
            temperatures: Temperatures::default(),
            pipeline: PipelineSection::default(),
            eval: CheckConfig::default(),
            ingest: IngestFilters::default(),
        }
    }
}

impl GlobalConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.message().to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }

    /// The file at `path`, or defaults when no path is given.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self, ConfigError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn keywords(&self) -> Result<TemporalKeywords, ConfigError> {
        match &self.temporal_keywords {
            None => Ok(TemporalKeywords::default()),
            Some(list) => TemporalKeywords::new(list).ok_or(ConfigError::NoKeywords),
        }
    }

    pub fn catalog(&self) -> Result<PromptCatalog, ConfigError> {
        let catalog = match &self.template_dir {
            Some(dir) => PromptCatalog::load_dir(dir)?,
            None => PromptCatalog::builtin(),
        };
        catalog.lint()?;
        Ok(catalog)
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        let p = &self.pipeline;
        PipelineConfig {
            mode: p.mode,
            retrieval: self.retrieval,
            temperatures: self.temperatures,
            attempts: p.attempts,
            parallel_tasks: p.parallel_tasks,
            complexity_default: p.complexity_default,
            max_tokens: self.gateway.max_tokens,
            exemplar_budget: p.exemplar_budget,
            summary_lines: p.summary_lines,
        }
    }

    /// Builds the gateway. The API key is read from the environment only.
    pub fn gateway(&self) -> Result<Gateway, ConfigError> {
        match self.gateway.backend {
            BackendKind::Mock => {
                let mut mock = MockBackend::new(self.gateway.mock_embed_dim.max(1));
                if let Some(dir) = &self.gateway.mock_fixtures {
                    mock = mock.load_fixtures(dir)?;
                }
                Ok(Gateway::new(mock))
            }
            BackendKind::Http => {
                let key = std::env::var(&self.api_key_env).ok().filter(|k| !k.is_empty());
                let backend = HttpBackend::new(&self.chat, &self.embed, &self.rerank, key, &self.gateway)?;
                Ok(Gateway::new(backend))
            }
        }
    }
}
