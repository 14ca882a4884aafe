//! Module header recognition for Verilog / SystemVerilog sources.
//!
//! This is not a language parser. It tokenizes just enough of the source to
//! find the first `module` declaration, read its parameter block verbatim and
//! its port list, and, for non-ANSI headers, resolve port directions from the
//! declarations that precede the first behavioral construct.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PortDirection {
    Input,
    Output,
    Inout,
}

impl PortDirection {
    fn from_keyword(word: &str) -> Option<Self> {
        match word {
            "input" => Some(Self::Input),
            "output" => Some(Self::Output),
            "inout" => Some(Self::Inout),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Input => "input",
            Self::Output => "output",
            Self::Inout => "inout",
        }
    }
}

impl fmt::Display for PortDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One port of a module header.
///
/// `width_msb`/`width_lsb` are set together when the packed range is a pair
/// of integer literals. A range that uses parameters or expressions is kept
/// as text in `width_expr` instead.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortDecl {
    pub direction: PortDirection,
    /// Net or variable type keywords as written, e.g. `reg`, `wire signed`.
    pub kind: Option<String>,
    pub name: String,
    pub width_msb: Option<i64>,
    pub width_lsb: Option<i64>,
    pub width_expr: Option<String>,
}

impl PortDecl {
    pub fn scalar(direction: PortDirection, name: impl Into<String>) -> Self {
        Self {
            direction,
            kind: None,
            name: name.into(),
            width_msb: None,
            width_lsb: None,
            width_expr: None,
        }
    }

    pub fn vector(direction: PortDirection, name: impl Into<String>, msb: i64, lsb: i64) -> Self {
        Self {
            width_msb: Some(msb),
            width_lsb: Some(lsb),
            ..Self::scalar(direction, name)
        }
    }

    fn range_text(&self) -> Option<String> {
        match (self.width_msb, self.width_lsb, &self.width_expr) {
            (Some(msb), Some(lsb), _) => Some(format!("[{msb}:{lsb}]")),
            (_, _, Some(expr)) => Some(format!("[{expr}]")),
            _ => None,
        }
    }
}

impl fmt::Display for PortDecl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.direction.as_str())?;
        if let Some(kind) = &self.kind {
            write!(f, " {kind}")?;
        }
        if let Some(range) = self.range_text() {
            write!(f, " {range}")?;
        }
        write!(f, " {}", self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleHeader {
    pub module_name: String,
    /// Contents of the `#( ... )` parameter block, whitespace-normalized.
    pub parameters: Option<String>,
    pub ports: Vec<PortDecl>,
}

impl ModuleHeader {
    /// ANSI-style rendering, e.g. `module foo(input clk, output reg [3:0] q);`.
    pub fn render(&self) -> String {
        self.to_string()
    }

    pub fn port_names(&self) -> Vec<&str> {
        self.ports.iter().map(|p| p.name.as_str()).collect()
    }
}

impl fmt::Display for ModuleHeader {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "module {}", self.module_name)?;
        if let Some(params) = &self.parameters {
            write!(f, " #({params})")?;
        }
        f.write_str("(")?;
        for (i, port) in self.ports.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{port}")?;
        }
        f.write_str(");")
    }
}

/// Removes `//` line comments and `/* */` block comments. Block comments are
/// replaced by a single space so that tokens on either side stay separate.
pub fn strip_comments(src: &str) -> String {
    let mut out = String::with_capacity(src.len());
    let mut chars = src.chars().peekable();
    while let Some(c) = chars.next() {
        if c == '/' {
            match chars.peek() {
                Some('/') => {
                    for n in chars.by_ref() {
                        if n == '\n' {
                            out.push('\n');
                            break;
                        }
                    }
                    continue;
                }
                Some('*') => {
                    chars.next();
                    let mut prev = '\0';
                    for n in chars.by_ref() {
                        if prev == '*' && n == '/' {
                            break;
                        }
                        prev = n;
                    }
                    out.push(' ');
                    continue;
                }
                _ => {}
            }
        }
        out.push(c);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
enum Tok<'a> {
    Ident(&'a str),
    Other(&'a str),
}

#[derive(Debug, Clone)]
struct Token<'a> {
    tok: Tok<'a>,
    start: usize,
    end: usize,
}

impl<'a> Token<'a> {
    fn ident(&self) -> Option<&'a str> {
        match self.tok {
            Tok::Ident(s) => Some(s),
            Tok::Other(_) => None,
        }
    }

    fn is(&self, sym: &str) -> bool {
        matches!(self.tok, Tok::Other(s) if s == sym)
    }

    fn is_word(&self, word: &str) -> bool {
        matches!(self.tok, Tok::Ident(s) if s == word)
    }
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '$'
}

fn tokenize(src: &str) -> Vec<Token<'_>> {
    let mut tokens = Vec::new();
    let mut iter = src.char_indices().peekable();
    while let Some(&(start, c)) = iter.peek() {
        if c.is_whitespace() {
            iter.next();
            continue;
        }
        if is_ident_start(c) || c == '\\' {
            // escaped identifiers run to the next whitespace
            let escaped = c == '\\';
            let mut end = start + c.len_utf8();
            iter.next();
            while let Some(&(i, n)) = iter.peek() {
                let keep = if escaped { !n.is_whitespace() } else { is_ident_char(n) };
                if !keep {
                    break;
                }
                end = i + n.len_utf8();
                iter.next();
            }
            tokens.push(Token {
                tok: Tok::Ident(&src[start..end]),
                start,
                end,
            });
            continue;
        }
        if c.is_ascii_digit() || c == '\'' {
            let mut end = start + c.len_utf8();
            iter.next();
            while let Some(&(i, n)) = iter.peek() {
                if !(n.is_ascii_alphanumeric() || n == '_' || n == '\'' || n == '.') {
                    break;
                }
                end = i + n.len_utf8();
                iter.next();
            }
            tokens.push(Token {
                tok: Tok::Other(&src[start..end]),
                start,
                end,
            });
            continue;
        }
        let end = start + c.len_utf8();
        iter.next();
        tokens.push(Token {
            tok: Tok::Other(&src[start..end]),
            start,
            end,
        });
    }
    tokens
}

fn normalize_ws(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Index of the token closing the group opened at `open` (which must be
/// `(`, `[` or `{`), or `None` if unbalanced.
fn matching_close(tokens: &[Token<'_>], open: usize) -> Option<usize> {
    let mut depth = 0i32;
    for (i, t) in tokens.iter().enumerate().skip(open) {
        match t.tok {
            Tok::Other("(") | Tok::Other("[") | Tok::Other("{") => depth += 1,
            Tok::Other(")") | Tok::Other("]") | Tok::Other("}") => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

/// Splits a token run at top-level occurrences of `sep`.
fn split_top_level<'t, 'a>(tokens: &'t [Token<'a>], sep: &str) -> Vec<&'t [Token<'a>]> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut begin = 0;
    for (i, t) in tokens.iter().enumerate() {
        match t.tok {
            Tok::Other("(") | Tok::Other("[") | Tok::Other("{") => depth += 1,
            Tok::Other(")") | Tok::Other("]") | Tok::Other("}") => depth -= 1,
            Tok::Other(s) if depth == 0 && s == sep => {
                parts.push(&tokens[begin..i]);
                begin = i + 1;
            }
            _ => {}
        }
    }
    parts.push(&tokens[begin..]);
    parts
}

const KIND_WORDS: &[&str] = &[
    "wire", "reg", "logic", "bit", "signed", "unsigned", "var", "tri", "integer", "wand", "wor",
    "supply0", "supply1", "uwire",
];

const BEHAVIORAL: &[&str] = &[
    "always",
    "always_ff",
    "always_comb",
    "always_latch",
    "assign",
    "initial",
    "endmodule",
    "generate",
];

/// Parses an integer literal range bound such as `7` or `15`.
fn parse_bound(tokens: &[Token<'_>]) -> Option<i64> {
    match tokens {
        [t] => match t.tok {
            Tok::Other(s) => s.replace('_', "").parse().ok(),
            Tok::Ident(_) => None,
        },
        _ => None,
    }
}

/// A declaration fragment: `[dir] [kind...] [range] name [unpacked] [= default]`.
struct DeclFragment<'a> {
    direction: Option<PortDirection>,
    kind: Option<String>,
    range: Option<(Option<i64>, Option<i64>, Option<String>)>,
    name: Option<&'a str>,
}

fn parse_fragment<'a>(src: &str, tokens: &[Token<'a>]) -> DeclFragment<'a> {
    let mut i = 0;
    let mut direction = None;
    if let Some(dir) = tokens.first().and_then(|t| t.ident()).and_then(PortDirection::from_keyword) {
        direction = Some(dir);
        i = 1;
    }
    let mut kinds = Vec::new();
    while let Some(word) = tokens.get(i).and_then(|t| t.ident()) {
        if KIND_WORDS.contains(&word) {
            kinds.push(word);
            i += 1;
        } else {
            break;
        }
    }
    let mut range = None;
    if tokens.get(i).is_some_and(|t| t.is("[")) {
        if let Some(close) = matching_close(tokens, i) {
            let inner = &tokens[i + 1..close];
            let halves = split_top_level(inner, ":");
            let parsed = match halves.as_slice() {
                [msb, lsb] => parse_bound(msb).zip(parse_bound(lsb)),
                _ => None,
            };
            range = Some(match parsed {
                Some((msb, lsb)) => (Some(msb), Some(lsb), None),
                None => {
                    let text = if inner.is_empty() {
                        String::new()
                    } else {
                        normalize_ws(&src[inner[0].start..inner[inner.len() - 1].end])
                    };
                    (None, None, Some(text))
                }
            });
            i = close + 1;
        }
    }
    let name = tokens
        .get(i)
        .and_then(|t| t.ident())
        .filter(|w| !KIND_WORDS.contains(w) && PortDirection::from_keyword(w).is_none());
    DeclFragment {
        direction,
        kind: (!kinds.is_empty()).then(|| kinds.join(" ")),
        range,
        name,
    }
}

fn port_from(direction: PortDirection, frag: &DeclFragment<'_>, name: &str) -> PortDecl {
    let (width_msb, width_lsb, width_expr) = frag.range.clone().unwrap_or((None, None, None));
    PortDecl {
        direction,
        kind: frag.kind.clone(),
        name: name.to_string(),
        width_msb,
        width_lsb,
        width_expr,
    }
}

/// Finds and parses the first module header in `code`.
///
/// Handles ANSI headers (`module m(input [7:0] a, output y);`) and non-ANSI
/// headers (`module m(a, y); input [7:0] a; output y;`). Returns `None` if no
/// header can be recognized.
pub fn parse_module_header(code: &str) -> Option<ModuleHeader> {
    let src = strip_comments(code);
    let tokens = tokenize(&src);

    let mut pos = tokens.iter().position(|t| t.is_word("module"))?;
    loop {
        if let Some(header) = parse_at(&src, &tokens, pos) {
            return Some(header);
        }
        pos += 1 + tokens[pos + 1..].iter().position(|t| t.is_word("module"))?;
    }
}

fn parse_at(src: &str, tokens: &[Token<'_>], module_pos: usize) -> Option<ModuleHeader> {
    let mut i = module_pos + 1;
    // skip lifetime qualifiers like `automatic`
    if tokens.get(i).is_some_and(|t| t.is_word("automatic") || t.is_word("static")) {
        i += 1;
    }
    let module_name = tokens.get(i)?.ident()?.to_string();
    i += 1;

    let mut parameters = None;
    if tokens.get(i).is_some_and(|t| t.is("#")) && tokens.get(i + 1).is_some_and(|t| t.is("(")) {
        let close = matching_close(tokens, i + 1)?;
        let inner = &tokens[i + 2..close];
        if !inner.is_empty() {
            parameters = Some(normalize_ws(&src[inner[0].start..inner[inner.len() - 1].end]));
        }
        i = close + 1;
    }

    let mut ports: Vec<PortDecl> = Vec::new();
    let mut pending: Vec<String> = Vec::new();
    if tokens.get(i).is_some_and(|t| t.is("(")) {
        let close = matching_close(tokens, i)?;
        let inner = &tokens[i + 1..close];
        i = close + 1;
        let mut current: Option<DeclFragment<'_>> = None;
        for item in split_top_level(inner, ",") {
            if item.is_empty() {
                continue;
            }
            let frag = parse_fragment(src, item);
            match (frag.direction, frag.name) {
                (Some(dir), Some(name)) => {
                    ports.push(port_from(dir, &frag, name));
                    current = Some(frag);
                }
                (None, Some(name)) => match &current {
                    // ANSI continuation inherits direction, kind and range
                    Some(prev) if frag.kind.is_none() && frag.range.is_none() => {
                        ports.push(port_from(prev.direction.unwrap(), prev, name));
                    }
                    Some(prev) => {
                        let merged = DeclFragment {
                            direction: prev.direction,
                            kind: frag.kind.clone(),
                            range: frag.range.clone(),
                            name: Some(name),
                        };
                        ports.push(port_from(prev.direction.unwrap(), &merged, name));
                    }
                    None => pending.push(name.to_string()),
                },
                _ => {}
            }
        }
    }
    if !tokens.get(i).is_some_and(|t| t.is(";")) {
        return None;
    }
    i += 1;

    if !pending.is_empty() {
        resolve_non_ansi(src, &tokens[i..], &pending, &mut ports);
    }

    let mut seen = std::collections::HashSet::new();
    ports.retain(|p| seen.insert(p.name.clone()));
    Some(ModuleHeader {
        module_name,
        parameters,
        ports,
    })
}

fn resolve_non_ansi(src: &str, body: &[Token<'_>], names: &[String], ports: &mut Vec<PortDecl>) {
    let mut found: Vec<Option<PortDecl>> = vec![None; names.len()];
    for stmt in split_top_level(body, ";") {
        let Some(first) = stmt.first().and_then(|t| t.ident()) else {
            continue;
        };
        if BEHAVIORAL.contains(&first) {
            break;
        }
        let is_dir = PortDirection::from_keyword(first).is_some();
        let is_kind = KIND_WORDS.contains(&first);
        if !is_dir && !is_kind {
            continue;
        }
        let groups = split_top_level(stmt, ",");
        let head = parse_fragment(src, groups[0]);
        let mut names_here: Vec<&str> = head.name.into_iter().collect();
        for g in &groups[1..] {
            if let Some(name) = g.first().and_then(|t| t.ident()) {
                names_here.push(name);
            }
        }
        for name in names_here {
            let Some(slot) = names.iter().position(|n| n == name) else {
                continue;
            };
            match (&mut found[slot], head.direction) {
                (entry @ None, Some(dir)) => *entry = Some(port_from(dir, &head, name)),
                (Some(port), None) => {
                    // `output q; reg [3:0] q;` style type follow-up
                    if port.kind.is_none() {
                        port.kind = head.kind.clone();
                    }
                    if port.width_msb.is_none() && port.width_expr.is_none() {
                        if let Some((msb, lsb, expr)) = head.range.clone() {
                            port.width_msb = msb;
                            port.width_lsb = lsb;
                            port.width_expr = expr;
                        }
                    }
                }
                _ => {}
            }
        }
    }
    ports.extend(found.into_iter().flatten());
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ansi_adder_header() {
        let h = parse_module_header(
            "module adder_8bit(input [7:0] a, input [7:0] b, input cin, output [7:0] sum, output cout);",
        )
        .unwrap();
        assert_eq!(h.module_name, "adder_8bit");
        assert_eq!(
            h.ports,
            vec![
                PortDecl::vector(PortDirection::Input, "a", 7, 0),
                PortDecl::vector(PortDirection::Input, "b", 7, 0),
                PortDecl::scalar(PortDirection::Input, "cin"),
                PortDecl::vector(PortDirection::Output, "sum", 7, 0),
                PortDecl::scalar(PortDirection::Output, "cout"),
            ]
        );
    }

    #[test]
    fn no_module_keyword() {
        assert_eq!(parse_module_header("assign y = a & b;"), None);
        assert_eq!(parse_module_header(""), None);
        // `endmodule` alone is not a header
        assert_eq!(parse_module_header("endmodule"), None);
    }

    #[test]
    fn multi_line_with_block_comment() {
        let split = "module adder_8bit(\n  input [7:0] a,\n  input [7:0] b, /* operands\n spanning lines */\n  input cin, // carry\n  output [7:0] sum, output cout\n);";
        let single = "module adder_8bit(input [7:0] a, input [7:0] b, input cin, output [7:0] sum, output cout);";
        assert_eq!(parse_module_header(split), parse_module_header(single));
    }

    #[test]
    fn reg_kind_kept_in_render() {
        let h = parse_module_header("module foo(input clk, output reg [3:0] q);\nalways @(posedge clk) q <= q + 1;\nendmodule").unwrap();
        assert_eq!(h.render(), "module foo(input clk, output reg [3:0] q);");
        assert_eq!(h.port_names(), vec!["clk", "q"]);
    }

    #[test]
    fn ansi_continuation_inherits() {
        let h = parse_module_header("module m(input [3:0] a, b, output y);").unwrap();
        assert_eq!(h.ports[1], PortDecl::vector(PortDirection::Input, "b", 3, 0));
        assert_eq!(h.ports[2].direction, PortDirection::Output);
    }

    #[test]
    fn non_ansi_header() {
        let src = "module counter(clk, rst, q);\n  input clk, rst;\n  output [3:0] q;\n  reg [3:0] q;\n  always @(posedge clk) q <= q + 1;\n  input late;\nendmodule";
        let h = parse_module_header(src).unwrap();
        assert_eq!(h.module_name, "counter");
        assert_eq!(h.port_names(), vec!["clk", "rst", "q"]);
        assert_eq!(h.ports[2].kind.as_deref(), Some("reg"));
        assert_eq!((h.ports[2].width_msb, h.ports[2].width_lsb), (Some(3), Some(0)));
    }

    #[test]
    fn non_ansi_stops_at_behavioral() {
        let src = "module m(a, y);\n input a;\n assign y = a;\n output y;\nendmodule";
        let h = parse_module_header(src).unwrap();
        assert_eq!(h.port_names(), vec!["a"]);
    }

    #[test]
    fn parameters_recorded_verbatim() {
        let src = "module fifo #(parameter WIDTH = 8,\n   parameter DEPTH=16) (input clk, input [WIDTH-1:0] din, output [WIDTH-1 : 0] dout);";
        let h = parse_module_header(src).unwrap();
        assert_eq!(h.parameters.as_deref(), Some("parameter WIDTH = 8, parameter DEPTH=16"));
        assert_eq!(h.ports[1].width_expr.as_deref(), Some("WIDTH-1:0"));
        assert_eq!(h.ports[2].width_expr.as_deref(), Some("WIDTH-1 : 0"));
        assert_eq!(parse_module_header(&h.render()), Some(h));
    }

    #[test]
    fn first_module_wins() {
        let h = parse_module_header("module a(input x); endmodule\nmodule b(input y); endmodule").unwrap();
        assert_eq!(h.module_name, "a");
    }

    #[test]
    fn portless_module() {
        let h = parse_module_header("module tb; initial begin end endmodule").unwrap();
        assert_eq!(h.module_name, "tb");
        assert!(h.ports.is_empty());
        assert_eq!(parse_module_header(&h.render()), Some(h));
    }

    #[test]
    fn duplicate_port_names_dropped() {
        let h = parse_module_header("module m(input a, input a, output y);").unwrap();
        assert_eq!(h.port_names(), vec!["a", "y"]);
    }

    #[test]
    fn signed_and_logic_kinds() {
        let h = parse_module_header("module m(input logic signed [15:0] x, output wire y);").unwrap();
        assert_eq!(h.ports[0].kind.as_deref(), Some("logic signed"));
        assert_eq!(h.render(), "module m(input logic signed [15:0] x, output wire y);");
    }
}
