//! Python tokenizer producing the logical token stream (NEWLINE / INDENT /
//! DEDENT included) with byte spans into the original source.
//!
//! The lexer never fails: malformed input yields `TokKind::Error` tokens
//! and the parser decides how to recover.

use super::Span;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokKind {
    Name,
    Number,
    /// A string literal. `interpolations` holds the byte spans of f-string
    /// replacement-field expressions (empty for plain strings).
    Str { interpolations: Vec<Span> },
    Op(&'static str),
    Newline,
    Indent,
    Dedent,
    EndMarker,
    Error(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokKind,
    pub span: Span,
}

pub const KEYWORDS: &[&str] = &[
    "False", "None", "True", "and", "as", "assert", "async", "await", "break", "class",
    "continue", "def", "del", "elif", "else", "except", "finally", "for", "from", "global",
    "if", "import", "in", "is", "lambda", "nonlocal", "not", "or", "pass", "raise", "return",
    "try", "while", "with", "yield",
];

pub fn is_keyword(s: &str) -> bool {
    KEYWORDS.contains(&s)
}

// Longest first so that greedy matching picks `**=` over `**` over `*`.
const OPERATORS: &[&str] = &[
    "**=", "//=", ">>=", "<<=", "...", "->", ":=", "**", "//", ">>", "<<", "<=", ">=", "==",
    "!=", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "@=", "+", "-", "*", "/", "%", "@",
    "&", "|", "^", "~", "<", ">", "(", ")", "[", "]", "{", "}", ",", ":", ";", ".", "=", "!",
];

pub fn is_name_start(c: char) -> bool {
    c == '_' || c.is_alphabetic()
}

pub fn is_name_continue(c: char) -> bool {
    c == '_' || c.is_alphanumeric()
}

struct Lexer<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    /// Offset added to every emitted span (non-zero when lexing an
    /// f-string interpolation in isolation).
    base: usize,
    depth: usize,
    indents: Vec<usize>,
    at_line_start: bool,
    tokens: Vec<Token>,
    /// Whether to produce NEWLINE/INDENT/DEDENT. Disabled for embedded
    /// expressions.
    layout: bool,
}

/// Tokenize a whole module.
pub fn tokenize(src: &str) -> Vec<Token> {
    Lexer::new(src, 0, true).run()
}

/// Tokenize an embedded expression (f-string field); spans are shifted by
/// `base` so they index the enclosing source.
pub fn tokenize_fragment(fragment: &str, base: usize) -> Vec<Token> {
    Lexer::new(fragment, base, false).run()
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str, base: usize, layout: bool) -> Self {
        Self {
            src,
            bytes: src.as_bytes(),
            pos: 0,
            base,
            depth: 0,
            indents: vec![0],
            at_line_start: true,
            tokens: Vec::new(),
            layout,
        }
    }

    fn push(&mut self, kind: TokKind, start: usize, end: usize) {
        self.tokens.push(Token { kind, span: Span::new(self.base + start, self.base + end) });
    }

    fn peek_char(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn last_is_layout_break(&self) -> bool {
        matches!(
            self.tokens.last().map(|t| &t.kind),
            None | Some(TokKind::Newline) | Some(TokKind::Indent) | Some(TokKind::Dedent)
        )
    }

    fn run(mut self) -> Vec<Token> {
        while self.pos < self.bytes.len() {
            if self.layout && self.at_line_start && self.depth == 0 {
                self.at_line_start = false;
                if self.handle_indentation() {
                    continue;
                }
            }
            let c = match self.peek_char() {
                Some(c) => c,
                None => break,
            };
            let start = self.pos;
            match c {
                ' ' | '\t' | '\x0c' => self.pos += 1,
                '\r' | '\n' => {
                    self.pos += if self.src[self.pos..].starts_with("\r\n") { 2 } else { 1 };
                    if self.layout && self.depth == 0 {
                        if !self.last_is_layout_break() {
                            self.push(TokKind::Newline, start, self.pos);
                        }
                        self.at_line_start = true;
                    }
                }
                '#' => {
                    while self.pos < self.bytes.len() && !matches!(self.bytes[self.pos], b'\n' | b'\r') {
                        self.pos += 1;
                    }
                }
                '\\' => {
                    // explicit line joining
                    let rest = &self.src[self.pos + 1..];
                    if rest.starts_with("\r\n") {
                        self.pos += 3;
                    } else if rest.starts_with('\n') || rest.starts_with('\r') {
                        self.pos += 2;
                    } else {
                        self.pos += 1;
                        self.push(TokKind::Error("stray backslash"), start, self.pos);
                    }
                }
                c if c.is_ascii_digit() => self.number(),
                '.' if self.bytes.get(self.pos + 1).is_some_and(|b| b.is_ascii_digit()) => self.number(),
                '"' | '\'' => self.string(start, 0),
                c if is_name_start(c) => {
                    if let Some(prefix_len) = self.string_prefix() {
                        self.string(start, prefix_len);
                    } else {
                        self.name();
                    }
                }
                _ => self.operator(c),
            }
        }
        if self.layout {
            if !self.last_is_layout_break() {
                let end = self.bytes.len();
                self.push(TokKind::Newline, end, end);
            }
            if self.depth > 0 {
                let end = self.bytes.len();
                self.push(TokKind::Error("unclosed bracket"), end, end);
            }
            while self.indents.len() > 1 {
                self.indents.pop();
                let end = self.bytes.len();
                self.push(TokKind::Dedent, end, end);
            }
        }
        let end = self.bytes.len();
        self.push(TokKind::EndMarker, end, end);
        self.tokens
    }

    /// Measures the indentation of the line starting at `self.pos`. Returns
    /// true if the line was blank or comment-only and has been consumed.
    fn handle_indentation(&mut self) -> bool {
        let line_start = self.pos;
        let mut col = 0usize;
        while let Some(&b) = self.bytes.get(self.pos) {
            match b {
                b' ' => col += 1,
                b'\t' => col = (col / 8 + 1) * 8,
                b'\x0c' => col = 0,
                _ => break,
            }
            self.pos += 1;
        }
        match self.bytes.get(self.pos) {
            None => return true,
            Some(b'\n') | Some(b'\r') | Some(b'#') => {
                // blank or comment-only line
                while self.pos < self.bytes.len() && !matches!(self.bytes[self.pos], b'\n' | b'\r') {
                    self.pos += 1;
                }
                if self.src[self.pos..].starts_with("\r\n") {
                    self.pos += 2;
                } else if self.pos < self.bytes.len() {
                    self.pos += 1;
                }
                self.at_line_start = true;
                return true;
            }
            Some(b'\\') => {}
            _ => {}
        }
        let current = *self.indents.last().unwrap();
        if col > current {
            self.indents.push(col);
            self.push(TokKind::Indent, line_start, self.pos);
        } else if col < current {
            while col < *self.indents.last().unwrap() {
                self.indents.pop();
                self.push(TokKind::Dedent, self.pos, self.pos);
            }
            if col != *self.indents.last().unwrap() {
                self.push(TokKind::Error("inconsistent dedent"), line_start, self.pos);
                self.indents.push(col);
            }
        }
        false
    }

    fn name(&mut self) {
        let start = self.pos;
        for (i, c) in self.src[start..].char_indices() {
            if !is_name_continue(c) {
                self.pos = start + i;
                self.push(TokKind::Name, start, self.pos);
                return;
            }
        }
        self.pos = self.bytes.len();
        self.push(TokKind::Name, start, self.pos);
    }

    fn number(&mut self) {
        let start = self.pos;
        let b = self.bytes;
        let mut i = self.pos;
        if b[i] == b'0' && matches!(b.get(i + 1), Some(b'x' | b'X' | b'o' | b'O' | b'b' | b'B')) {
            i += 2;
            while i < b.len() && (b[i].is_ascii_hexdigit() || b[i] == b'_') {
                i += 1;
            }
        } else {
            while i < b.len() && (b[i].is_ascii_digit() || b[i] == b'_') {
                i += 1;
            }
            if i < b.len() && b[i] == b'.' {
                i += 1;
                while i < b.len() && (b[i].is_ascii_digit() || b[i] == b'_') {
                    i += 1;
                }
            }
            if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
                let mut j = i + 1;
                if j < b.len() && (b[j] == b'+' || b[j] == b'-') {
                    j += 1;
                }
                if j < b.len() && b[j].is_ascii_digit() {
                    i = j;
                    while i < b.len() && (b[i].is_ascii_digit() || b[i] == b'_') {
                        i += 1;
                    }
                }
            }
            if i < b.len() && (b[i] == b'j' || b[i] == b'J') {
                i += 1;
            }
        }
        self.pos = i;
        self.push(TokKind::Number, start, i);
    }

    /// If a string prefix (r, b, u, f, t and two-letter combinations) starts
    /// at the cursor and is immediately followed by a quote, returns its
    /// length.
    fn string_prefix(&self) -> Option<usize> {
        let b = self.bytes;
        let mut len = 0;
        while len < 2 && self.pos + len < b.len() && matches!(b[self.pos + len].to_ascii_lowercase(), b'r' | b'b' | b'u' | b'f' | b't') {
            len += 1;
        }
        (1..=len).rev().find(|&l| {
            let prefix = self.src[self.pos..self.pos + l].to_ascii_lowercase();
            let valid = matches!(prefix.as_str(), "r" | "b" | "u" | "f" | "t" | "rb" | "br" | "fr" | "rf" | "tr" | "rt");
            valid && matches!(b.get(self.pos + l), Some(b'"' | b'\''))
        })
    }

    fn string(&mut self, start: usize, prefix_len: usize) {
        let prefix = self.src[start..start + prefix_len].to_ascii_lowercase();
        let templated = prefix.contains('f') || prefix.contains('t');
        let body_start = start + prefix_len;
        match scan_string(self.src, body_start, templated) {
            Ok((end, fields)) => {
                self.pos = end;
                let interpolations = fields.into_iter().map(|s| Span::new(s.start + self.base, s.end + self.base)).collect();
                self.push(TokKind::Str { interpolations }, start, end);
            }
            Err(end) => {
                self.pos = end;
                self.push(TokKind::Error("unterminated string"), start, end);
            }
        }
    }

    fn operator(&mut self, c: char) {
        let start = self.pos;
        let rest = &self.src[self.pos..];
        if let Some(op) = OPERATORS.iter().find(|op| rest.starts_with(**op)) {
            self.pos += op.len();
            match *op {
                "(" | "[" | "{" => self.depth += 1,
                ")" | "]" | "}" => self.depth = self.depth.saturating_sub(1),
                _ => {}
            }
            self.push(TokKind::Op(op), start, self.pos);
        } else {
            self.pos += c.len_utf8();
            self.push(TokKind::Error("unexpected character"), start, self.pos);
        }
    }
}

/// Scans a string literal whose opening quote is at `at`. Returns the end
/// offset and, for f/t-strings, the spans of replacement-field expressions.
/// On failure returns the offset where scanning stopped.
fn scan_string(src: &str, at: usize, templated: bool) -> Result<(usize, Vec<Span>), usize> {
    let b = src.as_bytes();
    let q = b[at];
    let triple = b.len() >= at + 3 && b[at + 1] == q && b[at + 2] == q;
    let qlen = if triple { 3 } else { 1 };
    let mut i = at + qlen;
    let mut fields = Vec::new();
    while i < b.len() {
        let c = b[i];
        if c == b'\\' {
            i += 2;
            continue;
        }
        if !triple && (c == b'\n' || c == b'\r') {
            return Err(i);
        }
        if c == q && (!triple || (b.len() >= i + 3 && b[i + 1] == q && b[i + 2] == q)) {
            return Ok((i + qlen, fields));
        }
        if templated && c == b'{' {
            if b.get(i + 1) == Some(&b'{') {
                i += 2;
                continue;
            }
            i = scan_field(src, i + 1, &mut fields)?;
            continue;
        }
        i += 1;
    }
    Err(b.len())
}

/// Scans a replacement field starting just after `{`; returns the offset
/// after the matching `}`.
fn scan_field(src: &str, start: usize, fields: &mut Vec<Span>) -> Result<usize, usize> {
    let b = src.as_bytes();
    let mut i = start;
    let mut depth = 0usize;
    let mut expr_end = None;
    while i < b.len() {
        let c = b[i];
        match c {
            b'"' | b'\'' => {
                let (end, _) = scan_string(src, i, false)?;
                i = end;
                continue;
            }
            b'(' | b'[' | b'{' => depth += 1,
            b')' | b']' => depth = depth.saturating_sub(1),
            b'}' if depth > 0 => depth -= 1,
            b'}' => {
                push_field(src, start, expr_end.unwrap_or(i), fields);
                return Ok(i + 1);
            }
            b'!' if depth == 0 && b.get(i + 1) != Some(&b'=') && expr_end.is_none() => expr_end = Some(i),
            b':' if depth == 0 => {
                // format spec; may itself contain nested fields
                push_field(src, start, expr_end.unwrap_or(i), fields);
                let mut j = i + 1;
                while j < b.len() {
                    match b[j] {
                        b'{' => {
                            j = scan_field(src, j + 1, fields)?;
                            continue;
                        }
                        b'}' => return Ok(j + 1),
                        _ => {}
                    }
                    j += 1;
                }
                return Err(b.len());
            }
            _ => {}
        }
        i += 1;
    }
    Err(b.len())
}

fn push_field(src: &str, start: usize, mut end: usize, fields: &mut Vec<Span>) {
    // self-documenting `{expr=}`
    let text = &src[start..end];
    let trimmed = text.trim_end();
    if trimmed.ends_with('=') && !trimmed.ends_with("==") && !trimmed.ends_with("!=") && !trimmed.ends_with("<=") && !trimmed.ends_with(">=") {
        end = start + trimmed.len() - 1;
    }
    if src[start..end].trim().is_empty() {
        return;
    }
    fields.push(Span::new(start, end));
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(src: &str) -> Vec<TokKind> {
        tokenize(src).into_iter().map(|t| t.kind).collect()
    }

    #[test]
    fn simple_assignment() {
        assert_eq!(
            kinds("x = 1"),
            vec![TokKind::Name, TokKind::Op("="), TokKind::Number, TokKind::Newline, TokKind::EndMarker]
        );
    }

    #[test]
    fn empty_source() {
        assert_eq!(kinds(""), vec![TokKind::EndMarker]);
    }

    #[test]
    fn indentation_and_dedent() {
        let ks = kinds("if x:\n    y\n\n# c\nz\n");
        assert_eq!(
            ks,
            vec![
                TokKind::Name,
                TokKind::Name,
                TokKind::Op(":"),
                TokKind::Newline,
                TokKind::Indent,
                TokKind::Name,
                TokKind::Newline,
                TokKind::Dedent,
                TokKind::Name,
                TokKind::Newline,
                TokKind::EndMarker
            ]
        );
    }

    #[test]
    fn brackets_suppress_newlines() {
        let ks = kinds("f(a,\n  b)\n");
        assert!(!ks[..ks.len() - 2].contains(&TokKind::Newline));
    }

    #[test]
    fn triple_quoted_and_prefixed_strings() {
        let toks = tokenize("s = r'''a\n'b'\n''' + b\"x\"\n");
        assert!(matches!(toks[2].kind, TokKind::Str { .. }));
        assert!(matches!(toks[4].kind, TokKind::Str { .. }));
    }

    #[test]
    fn fstring_fields_are_located() {
        let src = "f'{a} {{b}} {c!r:>{width}} {d=}'";
        let toks = tokenize(src);
        let TokKind::Str { interpolations } = &toks[0].kind else { panic!() };
        let texts: Vec<&str> = interpolations.iter().map(|s| &src[s.start..s.end]).collect();
        assert_eq!(texts, vec!["a", "c", "width", "d"]);
    }

    #[test]
    fn unterminated_inputs_yield_error_tokens() {
        assert!(kinds("s = 'abc\n").iter().any(|k| matches!(k, TokKind::Error(_))));
        assert!(kinds("def f(").iter().any(|k| matches!(k, TokKind::Error(_))));
    }

    #[test]
    fn numbers() {
        for n in ["0x1F", "1_000", "3.14", "1e-5", ".5", "2j", "0b101"] {
            assert_eq!(kinds(n)[0], TokKind::Number, "{n}");
        }
    }
}
