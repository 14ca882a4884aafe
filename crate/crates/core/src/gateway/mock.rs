use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use super::{ChatRequest, GatewayError, ModelBackend};

/// A canned chat reply. Matches when every key occurs in the prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fixture {
    pub name: String,
    pub keys: Vec<String>,
    pub reply: String,
}

impl Fixture {
    pub fn new(name: impl Into<String>, key: impl Into<String>, reply: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            keys: vec![key.into()],
            reply: reply.into(),
        }
    }

    /// Parses the fixture file format: one or more leading `key: <substring>`
    /// lines, an optional `---` separator line, then the reply verbatim.
    pub fn parse(name: &str, text: &str) -> Option<Self> {
        let mut keys = Vec::new();
        let mut rest = text;
        loop {
            let (line, tail) = rest.split_once('\n').unwrap_or((rest, ""));
            match line.strip_prefix("key:") {
                Some(key) => {
                    keys.push(key.trim().to_string());
                    rest = tail;
                }
                None => break,
            }
            if tail.is_empty() {
                break;
            }
        }
        if keys.is_empty() || keys.iter().any(String::is_empty) {
            return None;
        }
        if let Some(tail) = rest.strip_prefix("---\n") {
            rest = tail;
        } else if rest == "---" {
            rest = "";
        }
        Some(Self {
            name: name.to_string(),
            keys,
            reply: rest.strip_suffix('\n').unwrap_or(rest).to_string(),
        })
    }

    fn matches(&self, prompt: &str) -> bool {
        self.keys.iter().all(|k| prompt.contains(k.as_str()))
    }
}

/// Deterministic backend for tests and offline runs.
///
/// Chat replies come from fixtures (first match in filename order). The
/// embedder hashes lowercase word tokens into a fixed number of signed
/// buckets; the reranker scores by token-set Jaccard similarity.
#[derive(Debug, Clone)]
pub struct MockBackend {
    fixtures: Vec<Fixture>,
    embed_dim: usize,
    reranker: bool,
}

impl Default for MockBackend {
    fn default() -> Self {
        Self::new(8)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

/// Lowercase alphanumeric word tokens.
pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

impl MockBackend {
    pub fn new(embed_dim: usize) -> Self {
        assert!(embed_dim > 0, "embedding dimension must be positive");
        Self {
            fixtures: Vec::new(),
            embed_dim,
            reranker: true,
        }
    }

    pub fn with_fixture(mut self, fixture: Fixture) -> Self {
        self.fixtures.push(fixture);
        self.fixtures.sort_by(|a, b| a.name.cmp(&b.name));
        self
    }

    pub fn without_reranker(mut self) -> Self {
        self.reranker = false;
        self
    }

    /// Loads every regular file in `dir` as a fixture, in filename order.
    pub fn load_fixtures(mut self, dir: &Path) -> Result<Self, GatewayError> {
        let fixture_err = |path: PathBuf, detail: String| GatewayError::Fixture { path, detail };
        let entries = fs::read_dir(dir).map_err(|e| fixture_err(dir.to_path_buf(), e.to_string()))?;
        let mut paths = Vec::new();
        for entry in entries {
            let path = entry.map_err(|e| fixture_err(dir.to_path_buf(), e.to_string()))?.path();
            if path.is_file() {
                paths.push(path);
            }
        }
        for path in paths {
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            let text = fs::read_to_string(&path).map_err(|e| fixture_err(path.clone(), e.to_string()))?;
            let fixture = Fixture::parse(&name, &text)
                .ok_or_else(|| fixture_err(path.clone(), "missing `key:` line".into()))?;
            self.fixtures.push(fixture);
        }
        self.fixtures.sort_by(|a, b| a.name.cmp(&b.name));
        Ok(self)
    }

    pub fn fixtures(&self) -> &[Fixture] {
        &self.fixtures
    }

    pub fn embed_text(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.embed_dim];
        let mut any = false;
        for tok in tokens(text) {
            let h = fnv1a(tok.as_bytes());
            let bucket = (h % self.embed_dim as u64) as usize;
            let sign = if (h >> 32) & 1 == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign;
            any = true;
        }
        if !any || v.iter().all(|&x| x == 0.0) {
            v[(fnv1a(text.as_bytes()) % self.embed_dim as u64) as usize] = 1.0;
        }
        v
    }

    pub fn jaccard(a: &str, b: &str) -> f64 {
        let sa: BTreeSet<String> = tokens(a).collect();
        let sb: BTreeSet<String> = tokens(b).collect();
        let union = sa.union(&sb).count();
        if union == 0 {
            return 0.0;
        }
        sa.intersection(&sb).count() as f64 / union as f64
    }
}

impl ModelBackend for MockBackend {
    fn chat(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        let prompt = req.prompt_text();
        self.fixtures
            .iter()
            .find(|f| f.matches(&prompt))
            .map(|f| f.reply.clone())
            .ok_or_else(|| GatewayError::NoFixture(prompt.chars().take(80).collect()))
    }

    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        Ok(texts.iter().map(|t| self.embed_text(t)).collect())
    }

    fn rerank_raw(&self, query: &str, passages: &[String]) -> Result<Vec<(usize, f64)>, GatewayError> {
        if !self.reranker {
            return Err(GatewayError::NotConfigured("rerank"));
        }
        Ok(passages
            .iter()
            .enumerate()
            .map(|(i, p)| (i, Self::jaccard(query, p)))
            .collect())
    }

    fn has_reranker(&self) -> bool {
        self.reranker
    }

    fn chat_model(&self) -> &str {
        "mock-chat"
    }

    fn embed_model(&self) -> &str {
        "mock-hash"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ChatMessage, Gateway};

    fn request(prompt: &str, temperature: f64) -> ChatRequest {
        ChatRequest {
            messages: vec![ChatMessage::user(prompt)],
            temperature,
            max_tokens: 100,
            model_name: "mock-chat".into(),
        }
    }

    #[test]
    fn fixture_keyed_testbench() {
        let tb = "module tb;\ninitial $finish;\nendmodule";
        let gw = Gateway::new(MockBackend::default().with_fixture(Fixture::new("tb.txt", "TESTBENCH", tb)));
        assert_eq!(gw.chat(&request("write a TESTBENCH please", 0.0)).unwrap(), tb);
    }

    #[test]
    fn temperature_zero_twice_identical() {
        let gw = Gateway::new(MockBackend::default().with_fixture(Fixture::new("a", "x", "reply")));
        let a = gw.chat(&request("x", 0.0)).unwrap();
        let b = gw.chat(&request("x", 0.0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(gw.chat_calls(), 2);
    }

    #[test]
    fn first_match_in_filename_order() {
        let backend = MockBackend::default()
            .with_fixture(Fixture::new("b.txt", "shared", "second"))
            .with_fixture(Fixture::new("a.txt", "shared", "first"));
        assert_eq!(backend.chat(&request("shared words", 0.0)).unwrap(), "first");
    }

    #[test]
    fn multiple_keys_must_all_match() {
        let f = Fixture::parse("f", "key: ALPHA\nkey: beta\n---\nbody\n").unwrap();
        assert_eq!(f.keys, vec!["ALPHA", "beta"]);
        assert_eq!(f.reply, "body");
        let backend = MockBackend::default().with_fixture(f);
        assert!(backend.chat(&request("ALPHA only", 0.0)).is_err());
        assert_eq!(backend.chat(&request("ALPHA and beta", 0.0)).unwrap(), "body");
    }

    #[test]
    fn fixture_without_key_rejected() {
        assert!(Fixture::parse("f", "just a reply").is_none());
        assert!(Fixture::parse("f", "key:   \nreply").is_none());
    }

    #[test]
    fn no_fixture_is_an_error() {
        let err = MockBackend::default().chat(&request("anything", 0.0)).unwrap_err();
        assert!(matches!(err, GatewayError::NoFixture(_)));
    }

    #[test]
    fn embedding_deterministic_and_unit() {
        let gw = Gateway::new(MockBackend::new(8));
        let out = gw.embed(&["an 8 bit adder".into(), "an 8 bit adder".into(), "a fifo".into()]).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out[0], out[1]);
        assert!(out.iter().all(|v| v.dim() == 8 && (v.norm() - 1.0).abs() <= 1e-6));
    }

    #[test]
    fn empty_text_embeds_as_placeholder() {
        let gw = Gateway::new(MockBackend::new(8));
        let out = gw.embed(&["".into(), " ".into()]).unwrap();
        assert_eq!(out[0], out[1]);
    }

    #[test]
    fn rerank_shared_tokens() {
        let gw = Gateway::new(MockBackend::default());
        let out = gw.rerank("adder 8 bit", &["an 8 bit adder".into(), "a fifo".into()]).unwrap();
        assert_eq!(out[0].candidate_index, 0);
        assert!(out[0].score > out[1].score);
    }

    #[test]
    fn rerank_single_and_ties() {
        let gw = Gateway::new(MockBackend::default());
        let one = gw.rerank("q", &["x".into()]).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].candidate_index, 0);
        let tied = gw.rerank("adder", &["fifo".into(), "ram".into()]).unwrap();
        assert_eq!(tied.iter().map(|s| s.candidate_index).collect::<Vec<_>>(), vec![0, 1]);
    }
}
