use std::ops::Range;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::header::{parse_module_header, ModuleHeader, PortDecl, PortDirection};

/// Maximum length, in characters, of the high-level overview.
pub const HIGH_LEVEL_MAX_CHARS: usize = 400;

/// Module name used when prose lists ports but never names the module.
pub const FALLBACK_MODULE_NAME: &str = "top_module";

/// The three retrieval keys extracted from an instruction.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyComponents {
    pub high_level: String,
    pub low_level: String,
    pub module_header: String,
}

static PORT_LABEL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(inputs?|outputs?|inouts?)(?:\s+(?:ports?|signals?))?\s*:")
        .expect("valid label pattern")
});

static MODULE_NAME: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)\bmodule\s+name\s*[:=]?\s*[`'\x22]?([A-Za-z_][A-Za-z0-9_]*)|\bmodule\s+(?:named|called)\s+[`'\x22]?([A-Za-z_][A-Za-z0-9_]*)",
    )
    .expect("valid module name pattern")
});

static PORT_ITEM: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"^\s*(?:\[\s*(\d+)\s*:\s*(\d+)\s*\]\s*)?([A-Za-z_][A-Za-z0-9_]*)\s*(?:\[\s*(\d+)\s*:\s*(\d+)\s*\])?\s*(?:$|[:(\-\u{2013}\u{2014}])",
    )
    .expect("valid port item pattern")
});

static VERILOG_MODULE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\bmodule\s+[A-Za-z_]").expect("valid module keyword pattern"));

fn normalize_ws(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Byte range of the first paragraph: up to the first blank line, or the
/// first sentence when the text has no blank line.
fn first_paragraph(text: &str) -> Range<usize> {
    let mut offset = 0;
    let mut saw_content = false;
    for line in text.split_inclusive('\n') {
        if line.trim().is_empty() {
            if saw_content {
                return 0..offset;
            }
        } else {
            saw_content = true;
        }
        offset += line.len();
    }
    let bytes = text.as_bytes();
    for (i, c) in text.char_indices() {
        if matches!(c, '.' | '!' | '?') {
            let next = bytes.get(i + 1);
            if next.is_none_or(|b| b.is_ascii_whitespace()) {
                return 0..i + 1;
            }
        }
    }
    0..text.len()
}

/// Byte ranges of whole lines touched by `span`.
fn line_span(text: &str, span: Range<usize>) -> Range<usize> {
    let start = text[..span.start].rfind('\n').map_or(0, |i| i + 1);
    let end = text[span.end..].find('\n').map_or(text.len(), |i| span.end + i + 1);
    start..end
}

fn parse_item(item: &str, direction: PortDirection) -> Option<PortDecl> {
    let caps = PORT_ITEM.captures(item)?;
    let name = caps.get(3)?.as_str();
    let range = match (caps.get(1), caps.get(2), caps.get(4), caps.get(5)) {
        (Some(m), Some(l), _, _) | (_, _, Some(m), Some(l)) => {
            Some((m.as_str().parse().ok()?, l.as_str().parse().ok()?))
        }
        _ => None,
    };
    Some(match range {
        Some((msb, lsb)) => PortDecl::vector(direction, name, msb, lsb),
        None => PortDecl::scalar(direction, name),
    })
}

fn direction_of(label: &str) -> PortDirection {
    let l = label.to_ascii_lowercase();
    if l.starts_with("input") {
        PortDirection::Input
    } else if l.starts_with("output") {
        PortDirection::Output
    } else {
        PortDirection::Inout
    }
}

/// End of an inline port list: the first sentence-ending period or newline.
fn inline_end(segment: &str) -> usize {
    let bytes = segment.as_bytes();
    for (i, c) in segment.char_indices() {
        if c == '\n' {
            return i;
        }
        if c == '.' && bytes.get(i + 1).is_none_or(|b| b.is_ascii_whitespace()) {
            return i;
        }
    }
    segment.len()
}

struct ProseHeader {
    header: ModuleHeader,
    consumed: Vec<Range<usize>>,
}

/// Recognizes "Module name: x", "Inputs: a [7:0], b" and the indented
/// one-port-per-line block form used by benchmark descriptions.
fn prose_header(text: &str) -> Option<ProseHeader> {
    let mut consumed = Vec::new();
    let mut module_name = None;
    if let Some(caps) = MODULE_NAME.captures(text) {
        let m = caps.get(1).or_else(|| caps.get(2)).unwrap();
        module_name = Some(m.as_str().to_string());
        let whole = caps.get(0).unwrap();
        consumed.push(line_span(text, whole.start()..m.end()));
    }

    let labels: Vec<_> = PORT_LABEL.captures_iter(text).collect();
    let mut ports: Vec<PortDecl> = Vec::new();
    for (li, caps) in labels.iter().enumerate() {
        let label = caps.get(0).unwrap();
        let direction = direction_of(caps.get(1).unwrap().as_str());
        let seg_end = labels.get(li + 1).map_or(text.len(), |n| n.get(0).unwrap().start());
        let segment = &text[label.end()..seg_end];
        let same_line = segment.split('\n').next().unwrap_or("");
        let mut found = Vec::new();
        let mut last = label.end();
        if !same_line.trim().is_empty() {
            let end = inline_end(segment);
            for item in segment[..end].split([',', ';']).flat_map(|s| s.split(" and ")) {
                if let Some(port) = parse_item(item, direction) {
                    found.push(port);
                }
            }
            last = label.end() + end;
        } else {
            let mut offset = label.end() + same_line.len() + 1;
            for line in segment.split('\n').skip(1) {
                if line.trim().is_empty() {
                    break;
                }
                match parse_item(line, direction) {
                    Some(port) => {
                        found.push(port);
                        last = offset + line.len();
                    }
                    None => break,
                }
                offset += line.len() + 1;
            }
        }
        if !found.is_empty() {
            consumed.push(line_span(text, label.start()..last.min(text.len())));
            ports.extend(found);
        }
    }

    if module_name.is_none() && ports.is_empty() {
        return None;
    }
    let mut seen = std::collections::HashSet::new();
    ports.retain(|p| seen.insert(p.name.clone()));
    Some(ProseHeader {
        header: ModuleHeader {
            module_name: module_name.unwrap_or_else(|| FALLBACK_MODULE_NAME.to_string()),
            parameters: None,
            ports,
        },
        consumed,
    })
}

/// A literal Verilog header embedded in the instruction text.
fn embedded_header(text: &str) -> Option<ProseHeader> {
    VERILOG_MODULE.find_iter(text).find_map(|m| {
        let start = m.start();
        let semi = start + text[start..].find(';')? + 1;
        let header = parse_module_header(&text[start..semi])?;
        Some(ProseHeader {
            header,
            consumed: vec![line_span(text, start..semi)],
        })
    })
}

/// Splits an instruction into its high-level overview, low-level details and
/// module header.
///
/// The header comes from `code` when it parses, otherwise from the
/// instruction itself; instruction lines used to build the header are left
/// out of the low-level text.
pub fn extract_components(instruction: &str, code: Option<&str>) -> KeyComponents {
    let text = instruction.trim();
    let para = first_paragraph(text);
    let para_text = normalize_ws(&text[para.clone()]);
    let (high_level, overflow) = match para_text.char_indices().nth(HIGH_LEVEL_MAX_CHARS) {
        Some((cut, _)) => (para_text[..cut].trim_end().to_string(), para_text[cut..].to_string()),
        None => (para_text, String::new()),
    };

    let mut removed = vec![false; text.len()];
    removed[para].iter_mut().for_each(|r| *r = true);

    let from_code = code.and_then(parse_module_header);
    let module_header = match from_code {
        Some(h) => h.render(),
        None => match embedded_header(text).or_else(|| prose_header(text)) {
            Some(found) => {
                for span in found.consumed {
                    removed[span].iter_mut().for_each(|r| *r = true);
                }
                found.header.render()
            }
            None => String::new(),
        },
    };

    let mut rest = overflow;
    let mut run_start = None;
    for (i, &gone) in removed.iter().enumerate() {
        match (gone, run_start) {
            (false, None) => run_start = Some(i),
            (true, Some(s)) => {
                rest.push(' ');
                rest.push_str(&text[s..i]);
                run_start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = run_start {
        rest.push(' ');
        rest.push_str(&text[s..]);
    }

    KeyComponents {
        high_level,
        low_level: normalize_ws(&rest),
        module_header,
    }
}
