//! Tokenizer for the host module format (Python source files carrying inline
//! CUDA). Produces the logical-line token stream with `Indent`/`Dedent`
//! markers, byte spans, and decoded string literal values. Comments and
//! blank lines never produce tokens.

use super::HostParseError;

#[derive(Debug, Clone, PartialEq)]
pub enum TokenKind {
    Name(String),
    Number(String),
    Str(StrToken),
    Op(&'static str),
    Newline,
    Indent,
    Dedent,
    EndMarker,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrToken {
    pub value: String,
    pub raw: bool,
    pub bytes: bool,
    pub formatted: bool,
    pub triple: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub kind: TokenKind,
    pub start: usize,
    pub end: usize,
    /// 1-based line of `start`.
    pub line: usize,
}

impl Token {
    pub fn is_op(&self, op: &str) -> bool {
        matches!(&self.kind, TokenKind::Op(o) if *o == op)
    }

    pub fn is_name(&self, name: &str) -> bool {
        matches!(&self.kind, TokenKind::Name(n) if n == name)
    }

    pub fn name(&self) -> Option<&str> {
        match &self.kind {
            TokenKind::Name(n) => Some(n),
            _ => None,
        }
    }
}

// Longest first.
const OPERATORS: &[&str] = &[
    "**=", "//=", ">>=", "<<=", "...", "->", ":=", "**", "//", "<<", ">>", "<=", ">=", "==", "!=",
    "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "@=", "+", "-", "*", "/", "%", "@", "&", "|",
    "^", "~", "<", ">", "(", ")", "[", "]", "{", "}", ",", ":", ".", ";", "=", "!",
];

const TAB_SIZE: usize = 8;

pub fn tokenize(src: &str) -> Result<Vec<Token>, HostParseError> {
    Lexer::new(src).run()
}

struct Lexer<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    line: usize,
    tokens: Vec<Token>,
    indents: Vec<usize>,
    brackets: Vec<(u8, usize)>,
    at_line_start: bool,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Self {
            src,
            bytes: src.as_bytes(),
            pos: 0,
            line: 1,
            tokens: Vec::new(),
            indents: vec![0],
            brackets: Vec::new(),
            at_line_start: true,
        }
    }

    fn err(&self, line: usize, msg: impl Into<String>) -> HostParseError {
        HostParseError::new(line, msg)
    }

    fn push(&mut self, kind: TokenKind, start: usize, end: usize, line: usize) {
        self.tokens.push(Token { kind, start, end, line });
    }

    fn peek(&self, off: usize) -> Option<u8> {
        self.bytes.get(self.pos + off).copied()
    }

    fn run(mut self) -> Result<Vec<Token>, HostParseError> {
        while self.pos < self.bytes.len() {
            if self.at_line_start && self.brackets.is_empty() {
                self.at_line_start = false;
                if self.handle_indentation()? {
                    continue;
                }
            }
            let c = self.bytes[self.pos];
            match c {
                b' ' | b'\t' | b'\x0c' => self.pos += 1,
                b'\r' if self.peek(1) != Some(b'\n') => self.pos += 1,
                b'\r' | b'\n' => self.newline(),
                b'#' => self.skip_comment(),
                b'\\' => {
                    // explicit line joining
                    match (self.peek(1), self.peek(2)) {
                        (Some(b'\n'), _) => {
                            self.pos += 2;
                            self.line += 1;
                        }
                        (Some(b'\r'), Some(b'\n')) => {
                            self.pos += 3;
                            self.line += 1;
                        }
                        _ => return Err(self.err(self.line, "unexpected character after line continuation")),
                    }
                }
                b'"' | b'\'' => self.string(self.pos)?,
                b'0'..=b'9' => self.number(),
                b'.' if matches!(self.peek(1), Some(b'0'..=b'9')) => self.number(),
                c if is_ident_start(c) => {
                    if let Some(q) = self.string_prefix_len() {
                        let start = self.pos;
                        self.pos += q;
                        self.string(start)?;
                    } else {
                        self.name();
                    }
                }
                _ => self.operator()?,
            }
        }
        if let Some(&(b, line)) = self.brackets.last() {
            return Err(self.err(line, format!("unclosed '{}'", b as char)));
        }
        let end = self.bytes.len();
        if !matches!(
            self.tokens.last().map(|t| &t.kind),
            None | Some(TokenKind::Newline) | Some(TokenKind::Dedent)
        ) {
            self.push(TokenKind::Newline, end, end, self.line);
        }
        while self.indents.len() > 1 {
            self.indents.pop();
            self.push(TokenKind::Dedent, end, end, self.line);
        }
        self.push(TokenKind::EndMarker, end, end, self.line);
        Ok(self.tokens)
    }

    /// Measures indentation at the start of a physical line. Returns true when
    /// the line is blank or comment-only (consumed entirely).
    fn handle_indentation(&mut self) -> Result<bool, HostParseError> {
        let mut col = 0usize;
        let mut p = self.pos;
        while p < self.bytes.len() {
            match self.bytes[p] {
                b' ' => col += 1,
                b'\t' => col = (col / TAB_SIZE + 1) * TAB_SIZE,
                b'\x0c' => col = 0,
                _ => break,
            }
            p += 1;
        }
        match self.bytes.get(p) {
            None => {
                self.pos = p;
                return Ok(true);
            }
            Some(b'#') => {
                self.pos = p;
                self.skip_comment();
                self.skip_blank_newline();
                return Ok(true);
            }
            Some(b'\n') => {
                self.pos = p;
                self.skip_blank_newline();
                return Ok(true);
            }
            Some(b'\r') if self.bytes.get(p + 1) == Some(&b'\n') => {
                self.pos = p;
                self.skip_blank_newline();
                return Ok(true);
            }
            _ => {}
        }
        let current = *self.indents.last().expect("indent stack never empty");
        if col > current {
            self.indents.push(col);
            self.push(TokenKind::Indent, self.pos, p, self.line);
        } else if col < current {
            while *self.indents.last().unwrap() > col {
                self.indents.pop();
                self.push(TokenKind::Dedent, p, p, self.line);
            }
            if *self.indents.last().unwrap() != col {
                return Err(self.err(self.line, "unindent does not match any outer indentation level"));
            }
        }
        self.pos = p;
        Ok(false)
    }

    fn skip_blank_newline(&mut self) {
        if self.peek(0) == Some(b'\r') {
            self.pos += 1;
        }
        if self.peek(0) == Some(b'\n') {
            self.pos += 1;
            self.line += 1;
        }
        self.at_line_start = true;
    }

    fn skip_comment(&mut self) {
        while let Some(c) = self.peek(0) {
            if c == b'\n' || (c == b'\r' && self.peek(1) == Some(b'\n')) {
                break;
            }
            self.pos += 1;
        }
    }

    fn newline(&mut self) {
        let start = self.pos;
        if self.bytes[self.pos] == b'\r' {
            self.pos += 1;
        }
        self.pos += 1;
        let line = self.line;
        self.line += 1;
        if self.brackets.is_empty() {
            self.push(TokenKind::Newline, start, self.pos, line);
            self.at_line_start = true;
        }
    }

    fn name(&mut self) {
        let start = self.pos;
        while self.pos < self.bytes.len() && is_ident_continue(self.bytes[self.pos]) {
            self.pos += 1;
        }
        let text = self.src[start..self.pos].to_string();
        self.push(TokenKind::Name(text), start, self.pos, self.line);
    }

    fn number(&mut self) {
        let start = self.pos;
        while let Some(c) = self.peek(0) {
            if c.is_ascii_alphanumeric() || c == b'_' || c == b'.' {
                let exp = (c == b'e' || c == b'E') && !self.src[start..self.pos].starts_with("0x");
                self.pos += 1;
                if exp && matches!(self.peek(0), Some(b'+') | Some(b'-')) {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
        let text = self.src[start..self.pos].to_string();
        self.push(TokenKind::Number(text), start, self.pos, self.line);
    }

    /// Length of a string prefix (`r`, `rb`, `f`, ...) at the cursor when it is
    /// immediately followed by a quote.
    fn string_prefix_len(&self) -> Option<usize> {
        let mut n = 0;
        while n < 2 {
            match self.peek(n) {
                Some(c) if b"rRbBuUfF".contains(&c) => n += 1,
                _ => break,
            }
        }
        while n > 0 {
            if matches!(self.peek(n), Some(b'"') | Some(b'\'')) {
                let prefix = self.src[self.pos..self.pos + n].to_ascii_lowercase();
                let valid = matches!(
                    prefix.as_str(),
                    "r" | "b" | "u" | "f" | "rb" | "br" | "fr" | "rf"
                );
                return valid.then_some(n);
            }
            n -= 1;
        }
        None
    }

    fn string(&mut self, start: usize) -> Result<(), HostParseError> {
        let prefix = self.src[start..self.pos].to_ascii_lowercase();
        let raw = prefix.contains('r');
        let start_line = self.line;
        let quote = self.bytes[self.pos];
        let triple = self.peek(1) == Some(quote) && self.peek(2) == Some(quote);
        let qlen = if triple { 3 } else { 1 };
        self.pos += qlen;
        let body_start = self.pos;
        let body_end;
        loop {
            let Some(c) = self.peek(0) else {
                return Err(self.err(start_line, "unterminated string literal"));
            };
            if c == b'\\' {
                if self.peek(1) == Some(b'\n') {
                    self.line += 1;
                }
                self.pos += 2;
                continue;
            }
            if c == b'\n' {
                if !triple {
                    return Err(self.err(start_line, "unterminated string literal"));
                }
                self.line += 1;
            }
            if c == quote
                && (!triple || (self.peek(1) == Some(quote) && self.peek(2) == Some(quote)))
            {
                body_end = self.pos;
                self.pos += qlen;
                break;
            }
            self.pos += 1;
        }
        let body = &self.src[body_start..body_end.min(self.src.len())];
        let value = if raw { body.to_string() } else { unescape(body) };
        let tok = StrToken {
            value,
            raw,
            bytes: prefix.contains('b'),
            formatted: prefix.contains('f'),
            triple,
        };
        self.push(TokenKind::Str(tok), start, self.pos, start_line);
        Ok(())
    }

    fn operator(&mut self) -> Result<(), HostParseError> {
        let rest = &self.src[self.pos..];
        let Some(op) = OPERATORS.iter().find(|op| rest.starts_with(**op)) else {
            let ch = rest.chars().next().unwrap_or('?');
            return Err(self.err(self.line, format!("unexpected character {ch:?}")));
        };
        let start = self.pos;
        self.pos += op.len();
        match *op {
            "(" | "[" | "{" => self.brackets.push((op.as_bytes()[0], self.line)),
            ")" | "]" | "}" => {
                let open = match *op {
                    ")" => b'(',
                    "]" => b'[',
                    _ => b'{',
                };
                match self.brackets.pop() {
                    Some((b, _)) if b == open => {}
                    _ => return Err(self.err(self.line, format!("unmatched '{op}'"))),
                }
            }
            _ => {}
        }
        self.push(TokenKind::Op(op), start, self.pos, self.line);
        Ok(())
    }
}

fn is_ident_start(c: u8) -> bool {
    c.is_ascii_alphabetic() || c == b'_' || c >= 0x80
}

fn is_ident_continue(c: u8) -> bool {
    is_ident_start(c) || c.is_ascii_digit()
}

fn unescape(body: &str) -> String {
    let mut out = String::with_capacity(body.len());
    let mut chars = body.chars().peekable();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some('r') => out.push('\r'),
            Some('0') => out.push('\0'),
            Some('\\') => out.push('\\'),
            Some('\'') => out.push('\''),
            Some('"') => out.push('"'),
            Some('\n') => {}
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}
