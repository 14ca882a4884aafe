//! Deterministic text processing over instructions, HDL sources and model
//! replies. Everything here is pure.

mod codeblock;
mod components;
mod header;
mod temporal;

pub use codeblock::extract_code_block;
pub use components::{extract_components, KeyComponents, FALLBACK_MODULE_NAME, HIGH_LEVEL_MAX_CHARS};
pub use header::{parse_module_header, strip_comments, ModuleHeader, PortDecl, PortDirection};
pub use temporal::{detect_temporal, word_matcher, TemporalKeywords, DEFAULT_TEMPORAL_KEYWORDS};
