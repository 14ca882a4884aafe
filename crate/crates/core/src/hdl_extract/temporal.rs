use regex::Regex;

/// Default temporal-signal vocabulary.
pub const DEFAULT_TEMPORAL_KEYWORDS: &[&str] = &[
    "clk",
    "clock",
    "posedge",
    "negedge",
    "reset",
    "rst",
    "edge",
    "cycle",
    "register",
    "flip-flop",
    "flip flop",
    "fsm",
    "state machine",
    "counter",
    "sequential",
    "fifo",
    "shift",
];

/// Compiles a keyword into a case-insensitive whole-word matcher.
///
/// Word boundaries are any non-alphanumeric character, so `_` separates words
/// (`rst_n` matches `rst`) while `counterexample` does not match `counter`.
/// A plural `s`/`es` suffix is accepted. Internal spaces match any run of
/// whitespace.
pub fn word_matcher(keyword: &str) -> Regex {
    let body = keyword
        .split_whitespace()
        .map(regex::escape)
        .collect::<Vec<_>>()
        .join(r"\s+");
    Regex::new(&format!(r"(?i)(?:^|[^a-z0-9])(?:{body})(?:s|es)?(?:$|[^a-z0-9])"))
        .expect("escaped keyword is a valid pattern")
}

/// A compiled temporal keyword set.
#[derive(Debug, Clone)]
pub struct TemporalKeywords {
    entries: Vec<(String, Regex)>,
}

impl Default for TemporalKeywords {
    fn default() -> Self {
        Self::new(DEFAULT_TEMPORAL_KEYWORDS.iter().copied()).expect("default set is non-empty")
    }
}

impl TemporalKeywords {
    /// Returns `None` if no non-blank keyword is given.
    pub fn new<I, S>(keywords: I) -> Option<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let entries: Vec<_> = keywords
            .into_iter()
            .map(|k| k.as_ref().trim().to_string())
            .filter(|k| !k.is_empty())
            .map(|k| {
                let re = word_matcher(&k);
                (k, re)
            })
            .collect();
        (!entries.is_empty()).then_some(Self { entries })
    }

    pub fn keywords(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    /// Keywords that occur in `description`, in keyword-set order.
    pub fn matches<'s>(&'s self, description: &str) -> Vec<&'s str> {
        self.entries
            .iter()
            .filter(|(_, re)| re.is_match(description))
            .map(|(k, _)| k.as_str())
            .collect()
    }

    pub fn detect(&self, description: &str) -> bool {
        self.entries.iter().any(|(_, re)| re.is_match(description))
    }
}

/// True iff any keyword of `keywords` occurs in `description` as a whole word.
pub fn detect_temporal(description: &str, keywords: &TemporalKeywords) -> bool {
    keywords.detect(description)
}
