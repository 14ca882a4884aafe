//! Instruction/code corpus: ingestion from line-delimited JSON datasets,
//! filtering, exact deduplication and persistence.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hdl_extract::{extract_components, KeyComponents};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt corpus {path}: {detail}")]
    Corrupt { path: PathBuf, detail: String },
    #[error("no records survived ingestion ({malformed} malformed, {filtered} filtered, {duplicates} duplicates)")]
    Empty {
        malformed: usize,
        filtered: usize,
        duplicates: usize,
    },
    #[error("refusing to save an empty corpus")]
    NothingToSave,
}

/// One line of an input dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDatasetRecord {
    pub instruction: String,
    pub code: String,
    #[serde(default, rename = "source")]
    pub source_tag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: usize,
    pub instruction: String,
    pub code: String,
    #[serde(rename = "source")]
    pub source_tag: String,
    pub components: KeyComponents,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestFilters {
    pub min_instruction_len: usize,
    pub max_instruction_len: usize,
    pub min_code_len: usize,
    pub max_code_len: usize,
    pub dedup: bool,
}

impl Default for IngestFilters {
    fn default() -> Self {
        Self {
            min_instruction_len: 20,
            max_instruction_len: 32768,
            min_code_len: 20,
            max_code_len: 32768,
            dedup: true,
        }
    }
}

impl IngestFilters {
    fn admits(&self, instruction: &str, code: &str) -> bool {
        let il = instruction.chars().count();
        let cl = code.chars().count();
        (self.min_instruction_len..=self.max_instruction_len).contains(&il)
            && (self.min_code_len..=self.max_code_len).contains(&cl)
    }
}

/// Counters reported by [`ingest`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestStats {
    pub lines: usize,
    pub malformed: usize,
    pub filtered: usize,
    pub duplicates: usize,
    pub kept: usize,
}

fn default_source(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Reads every input file in order and builds a corpus with dense ids.
///
/// Malformed lines (unparseable, or blank instruction/code) are skipped and
/// counted. The source tag defaults to the input file stem.
pub fn ingest(inputs: &[PathBuf], filters: &IngestFilters) -> Result<(Vec<CorpusRecord>, IngestStats), CorpusError> {
    let mut stats = IngestStats::default();
    let mut seen: HashSet<(String, String)> = HashSet::new();
    let mut records = Vec::new();

    for path in inputs {
        let read_err = |source| CorpusError::Read {
            path: path.clone(),
            source,
        };
        let file = File::open(path).map_err(read_err)?;
        for line in BufReader::new(file).lines() {
            let line = line.map_err(read_err)?;
            if line.trim().is_empty() {
                continue;
            }
            stats.lines += 1;
            let raw: RawDatasetRecord = match serde_json::from_str(&line) {
                Ok(r) => r,
                Err(e) => {
                    log::debug!("{}: skipping malformed line: {e}", path.display());
                    stats.malformed += 1;
                    continue;
                }
            };
            let instruction = raw.instruction.trim();
            let code = raw.code.trim();
            if instruction.is_empty() || code.is_empty() {
                stats.malformed += 1;
                continue;
            }
            if !filters.admits(instruction, code) {
                stats.filtered += 1;
                continue;
            }
            if filters.dedup && !seen.insert((instruction.to_string(), code.to_string())) {
                stats.duplicates += 1;
                continue;
            }
            let components = extract_components(instruction, Some(code));
            records.push(CorpusRecord {
                id: records.len(),
                instruction: instruction.to_string(),
                code: code.to_string(),
                source_tag: raw.source_tag.unwrap_or_else(|| default_source(path)),
                components,
            });
        }
    }
    stats.kept = records.len();
    if records.is_empty() {
        return Err(CorpusError::Empty {
            malformed: stats.malformed,
            filtered: stats.filtered,
            duplicates: stats.duplicates,
        });
    }
    if stats.malformed > 0 {
        log::warn!("skipped {} malformed records", stats.malformed);
    }
    Ok((records, stats))
}

pub fn save_corpus(corpus: &[CorpusRecord], path: &Path) -> Result<(), CorpusError> {
    if corpus.is_empty() {
        return Err(CorpusError::NothingToSave);
    }
    let write_err = |source| CorpusError::Write {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(write_err)?);
    for record in corpus {
        let line = serde_json::to_string(record).expect("corpus records always serialize");
        writeln!(out, "{line}").map_err(write_err)?;
    }
    out.flush().map_err(write_err)
}

/// Loads a persisted corpus, checking that ids are exactly `0..count` in order.
pub fn load_corpus(path: &Path) -> Result<Vec<CorpusRecord>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let corrupt = |detail: String| CorpusError::Corrupt {
        path: path.to_path_buf(),
        detail,
    };
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: CorpusRecord =
            serde_json::from_str(line).map_err(|e| corrupt(format!("line {}: {e}", lineno + 1)))?;
        if !seen.insert(record.id) {
            return Err(corrupt(format!("duplicate id {}", record.id)));
        }
        if record.id != records.len() {
            return Err(corrupt(format!("expected id {}, found {}", records.len(), record.id)));
        }
        records.push(record);
    }
    if records.is_empty() {
        return Err(corrupt("no records".into()));
    }
    Ok(records)
}
