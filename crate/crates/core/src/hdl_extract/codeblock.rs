use std::sync::LazyLock;

use regex::Regex;

static FENCE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?m)^[ \t]*```[ \t]*([A-Za-z0-9_+-]*)[^\n]*\n").expect("valid fence pattern")
});

static CLOSING_FENCE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)^[ \t]*```[ \t]*$").expect("valid closing fence pattern"));

static BARE_MODULE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?s)(?:^|[^A-Za-z0-9_$])(module\b.*?\bendmodule\b)").expect("valid module span")
});

const ACCEPTED_LABELS: &[&str] = &["", "verilog", "systemverilog", "v", "sv"];

/// Pulls HDL source out of a model reply.
///
/// Takes the body of the first fenced block labeled `verilog`,
/// `systemverilog` or left unlabeled. Without such a fence, falls back to
/// the first `module ... endmodule` span.
pub fn extract_code_block(reply: &str) -> Option<String> {
    let mut search_from = 0;
    while let Some(open) = FENCE.captures_at(reply, search_from) {
        let whole = open.get(0).unwrap();
        let label = open.get(1).map_or("", |m| m.as_str()).to_ascii_lowercase();
        let body_start = whole.end();
        let Some(close) = CLOSING_FENCE.find_at(reply, body_start) else {
            break;
        };
        if ACCEPTED_LABELS.contains(&label.as_str()) {
            let body = &reply[body_start..close.start()];
            return Some(body.strip_suffix('\n').unwrap_or(body).to_string());
        }
        search_from = close.end();
    }
    BARE_MODULE
        .captures(reply)
        .map(|c| c.get(1).unwrap().as_str().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fenced_verilog_block() {
        let reply = "Here you go:\n```verilog\nmodule m(input a, output y);\n  assign y = a;\nendmodule\n```\nDone.";
        assert_eq!(
            extract_code_block(reply).unwrap(),
            "module m(input a, output y);\n  assign y = a;\nendmodule"
        );
    }

    #[test]
    fn bare_module_span() {
        let reply = "The design is simple. module m; endmodule and that's it.";
        assert_eq!(extract_code_block(reply).unwrap(), "module m; endmodule");
    }

    #[test]
    fn neither_fence_nor_module() {
        assert_eq!(extract_code_block("I cannot help with that."), None);
    }

    #[test]
    fn skips_foreign_language_fence() {
        let reply = "```python\nprint('x')\n```\n```systemverilog\nmodule s; endmodule\n```";
        assert_eq!(extract_code_block(reply).unwrap(), "module s; endmodule");
    }

    #[test]
    fn unlabeled_fence() {
        assert_eq!(extract_code_block("```\nmodule u; endmodule\n```").unwrap(), "module u; endmodule");
    }

    #[test]
    fn endmodule_is_not_a_start() {
        assert_eq!(extract_code_block("endmodule only"), None);
    }
}
