//! Recursive-descent structural parser for host module files.
//!
//! Statement structure (nesting, spans, assignments, class and function
//! definitions) is always recovered exactly because the tokenizer guarantees
//! balanced brackets and consistent indentation. Expression syntax outside the
//! supported subset degrades to `Opaque` nodes that keep any call sites found
//! by token scanning.

use super::ast::{Arg, Expr, Star, Stmt, StmtKind, StrLit};
use super::lexer::{tokenize, Token, TokenKind};
use super::HostParseError;

type PResult<T> = Result<T, HostParseError>;

const KEYWORDS: &[&str] = &[
    "False", "None", "True", "and", "as", "assert", "async", "await", "break", "class", "continue",
    "def", "del", "elif", "else", "except", "finally", "for", "from", "global", "if", "import",
    "in", "is", "lambda", "nonlocal", "not", "or", "pass", "raise", "return", "try", "while",
    "with", "yield",
];

const AUGASSIGN: &[&str] = &[
    "+=", "-=", "*=", "/=", "//=", "%=", "@=", "&=", "|=", "^=", ">>=", "<<=", "**=",
];

pub fn parse_module(src: &str) -> PResult<Vec<Stmt>> {
    let tokens = tokenize(src)?;
    let mut p = Parser {
        src,
        toks: &tokens,
        pos: 0,
        limit: tokens.len() - 1,
        last_end: 0,
    };
    let mut stmts = Vec::new();
    loop {
        match &p.peek().kind {
            TokenKind::EndMarker => break,
            TokenKind::Newline => {
                p.advance();
            }
            _ => stmts.extend(p.statement()?),
        }
    }
    Ok(stmts)
}

struct Parser<'a> {
    src: &'a str,
    toks: &'a [Token],
    pos: usize,
    /// Index of the token treated as end-of-input (an `EndMarker` or a
    /// header-terminating `:` during sub-parses).
    limit: usize,
    last_end: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> &'a Token {
        let toks: &'a [Token] = self.toks;
        if self.pos >= self.limit {
            return toks.last().expect("EndMarker present");
        }
        &toks[self.pos]
    }

    fn peek_at(&self, off: usize) -> &'a Token {
        let toks: &'a [Token] = self.toks;
        if self.pos + off >= self.limit {
            return toks.last().expect("EndMarker present");
        }
        &toks[self.pos + off]
    }

    fn at_end(&self) -> bool {
        self.pos >= self.limit || matches!(self.peek().kind, TokenKind::EndMarker)
    }

    fn advance(&mut self) -> &'a Token {
        let t = self.peek();
        if self.pos < self.limit {
            self.pos += 1;
            if !matches!(t.kind, TokenKind::Indent | TokenKind::Dedent | TokenKind::EndMarker) {
                self.last_end = t.end;
            }
        }
        t
    }

    fn err<T>(&self, msg: impl Into<String>) -> PResult<T> {
        Err(HostParseError::new(self.peek().line, msg))
    }

    fn is_op(&self, op: &str) -> bool {
        !self.at_end() && self.peek().is_op(op)
    }

    fn is_kw(&self, kw: &str) -> bool {
        !self.at_end() && self.peek().is_name(kw)
    }

    fn eat_op(&mut self, op: &str) -> bool {
        if self.is_op(op) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.is_kw(kw) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn expect_op(&mut self, op: &str) -> PResult<()> {
        if self.eat_op(op) {
            Ok(())
        } else {
            self.err(format!("expected '{op}'"))
        }
    }

    fn expect_kw(&mut self, kw: &str) -> PResult<()> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            self.err(format!("expected '{kw}'"))
        }
    }

    fn expect_name(&mut self) -> PResult<String> {
        match &self.peek().kind {
            TokenKind::Name(n) if !self.at_end() => {
                let n = n.clone();
                self.advance();
                Ok(n)
            }
            _ => self.err("expected identifier"),
        }
    }

    fn line_start(&self, byte: usize) -> usize {
        self.src[..byte].rfind('\n').map_or(0, |i| i + 1)
    }

    fn make_stmt(&self, kind: StmtKind, first: &Token) -> Stmt {
        Stmt {
            kind,
            span: self.line_start(first.start)..self.last_end.max(first.end),
            line: first.line,
        }
    }

    /// Index of the first depth-0 `:` at or after the cursor, before the end
    /// of the logical line.
    fn find_header_colon(&self) -> Option<usize> {
        let mut depth = 0usize;
        let mut i = self.pos;
        while i < self.limit {
            let t = &self.toks[i];
            match &t.kind {
                TokenKind::Op("(") | TokenKind::Op("[") | TokenKind::Op("{") => depth += 1,
                TokenKind::Op(")") | TokenKind::Op("]") | TokenKind::Op("}") => {
                    depth = depth.saturating_sub(1)
                }
                TokenKind::Op(":") if depth == 0 => return Some(i),
                TokenKind::Newline | TokenKind::EndMarker => return None,
                _ => {}
            }
            i += 1;
        }
        None
    }

    /// Runs `f` over tokens `[pos, end)` as if they were the whole input.
    fn sub_parse<T>(&mut self, end: usize, f: impl FnOnce(&mut Self) -> PResult<T>) -> PResult<T> {
        let saved = self.limit;
        self.limit = end;
        let out = f(self).and_then(|v| {
            if self.pos == end {
                Ok(v)
            } else {
                self.err("unexpected token")
            }
        });
        self.limit = saved;
        out
    }

    // ---------------------------------------------------------------- statements

    fn statement(&mut self) -> PResult<Vec<Stmt>> {
        let t = self.peek();
        match &t.kind {
            TokenKind::Indent => self.err("unexpected indent"),
            TokenKind::Dedent => self.err("unexpected dedent"),
            TokenKind::Op("@") => Ok(vec![self.decorated()?]),
            TokenKind::Name(n) => match n.as_str() {
                "def" => Ok(vec![self.funcdef(t, Vec::new())?]),
                "class" => Ok(vec![self.classdef(t, Vec::new())?]),
                "async" if self.peek_at(1).is_name("def") => {
                    self.advance();
                    Ok(vec![self.funcdef(t, Vec::new())?])
                }
                "async" if self.peek_at(1).is_name("for") || self.peek_at(1).is_name("with") => {
                    self.advance();
                    Ok(vec![self.compound(t)?])
                }
                "if" | "while" | "for" | "with" | "try" => Ok(vec![self.compound(t)?]),
                "match" | "case" if self.soft_keyword_block() => Ok(vec![self.compound(t)?]),
                _ => self.simple_line(),
            },
            _ => self.simple_line(),
        }
    }

    fn soft_keyword_block(&self) -> bool {
        let next = self.peek_at(1);
        let starts_expr = match &next.kind {
            TokenKind::Name(_) | TokenKind::Number(_) | TokenKind::Str(_) => true,
            TokenKind::Op(op) => matches!(*op, "(" | "[" | "{" | "-" | "*"),
            _ => false,
        };
        if !starts_expr {
            return false;
        }
        let Some(colon) = self.find_header_colon() else {
            return false;
        };
        // an assignment or annotation before the colon means an ordinary statement
        !self.toks[self.pos..colon].iter().any(|t| t.is_op("="))
    }

    fn decorated(&mut self) -> PResult<Stmt> {
        let first = self.peek();
        let mut decorators = Vec::new();
        while self.eat_op("@") {
            decorators.push(self.namedexpr_test()?);
            if !matches!(self.peek().kind, TokenKind::Newline) {
                return self.err("expected newline after decorator");
            }
            self.advance();
        }
        if self.is_kw("async") {
            self.advance();
        }
        if self.is_kw("def") {
            self.funcdef(first, decorators)
        } else if self.is_kw("class") {
            self.classdef(first, decorators)
        } else {
            self.err("expected def or class after decorator")
        }
    }

    fn funcdef(&mut self, first: &Token, decorators: Vec<Expr>) -> PResult<Stmt> {
        self.expect_kw("def")?;
        let name = self.expect_name()?;
        self.expect_op("(")?;
        let params = self.params_until_close()?;
        if self.eat_op("->") {
            let Some(colon) = self.find_header_colon() else {
                return self.err("expected ':'");
            };
            while self.pos < colon {
                self.advance();
            }
        }
        self.expect_op(":")?;
        let body = self.suite()?;
        Ok(self.make_stmt(StmtKind::FunctionDef { name, params, decorators, body }, first))
    }

    /// Parameter names of a `def`, consuming through the closing parenthesis.
    fn params_until_close(&mut self) -> PResult<Vec<String>> {
        let mut params = Vec::new();
        let mut depth = 0usize;
        let mut expecting_name = true;
        loop {
            let t = self.advance();
            match &t.kind {
                TokenKind::EndMarker => return self.err("unclosed parameter list"),
                TokenKind::Op("(") | TokenKind::Op("[") | TokenKind::Op("{") => depth += 1,
                TokenKind::Op(")") if depth == 0 => return Ok(params),
                TokenKind::Op(")") | TokenKind::Op("]") | TokenKind::Op("}") => depth -= 1,
                TokenKind::Op(",") if depth == 0 => expecting_name = true,
                TokenKind::Name(n) if depth == 0 && expecting_name => {
                    params.push(n.clone());
                    expecting_name = false;
                }
                _ => {}
            }
        }
    }

    fn classdef(&mut self, first: &Token, decorators: Vec<Expr>) -> PResult<Stmt> {
        self.expect_kw("class")?;
        let name = self.expect_name()?;
        let mut bases = Vec::new();
        if self.eat_op("(") {
            bases = self.arglist(")")?;
            self.expect_op(")")?;
        }
        self.expect_op(":")?;
        let body = self.suite()?;
        Ok(self.make_stmt(StmtKind::ClassDef { name, bases, decorators, body }, first))
    }

    fn compound(&mut self, first: &Token) -> PResult<Stmt> {
        let keyword = self.advance().name().unwrap_or_default().to_string();
        let mut header = Vec::new();
        let mut bodies = Vec::new();
        let mut clause_kw = keyword.clone();
        loop {
            if clause_kw == "except" {
                self.eat_op("*");
            }
            header.extend(self.clause_header(&clause_kw)?);
            self.expect_op(":")?;
            bodies.push(self.suite()?);
            let continuation: &[&str] = match keyword.as_str() {
                "if" => &["elif", "else"],
                "for" | "while" => &["else"],
                "try" => &["except", "else", "finally"],
                _ => &[],
            };
            match self.peek().name() {
                Some(n) if continuation.contains(&n) => {
                    clause_kw = n.to_string();
                    self.advance();
                }
                _ => break,
            }
        }
        Ok(self.make_stmt(StmtKind::Compound { keyword, header, bodies }, first))
    }

    fn clause_header(&mut self, kw: &str) -> PResult<Vec<Expr>> {
        let Some(colon) = self.find_header_colon() else {
            return self.err("expected ':'");
        };
        let start = self.pos;
        let parsed = self.sub_parse(colon, |p| p.header_exprs(kw));
        match parsed {
            Ok(v) => Ok(v),
            Err(_) => {
                let calls = self.scan_calls(start, colon);
                self.pos = start;
                while self.pos < colon {
                    self.advance();
                }
                Ok(vec![Expr::Opaque(calls)])
            }
        }
    }

    fn header_exprs(&mut self, kw: &str) -> PResult<Vec<Expr>> {
        let mut out = Vec::new();
        match kw {
            "if" | "elif" | "while" => out.push(self.namedexpr_test()?),
            "for" => {
                out.push(self.exprlist()?);
                self.expect_kw("in")?;
                out.push(self.testlist_star_expr()?);
            }
            "with" => loop {
                out.push(self.test()?);
                if self.eat_kw("as") {
                    out.push(self.expr()?);
                }
                if !self.eat_op(",") {
                    break;
                }
            },
            "except" => {
                if !self.at_end() {
                    out.push(self.test()?);
                    if self.eat_kw("as") {
                        out.push(Expr::Name(self.expect_name()?));
                    }
                }
            }
            "match" => out.push(self.testlist_star_expr()?),
            // case patterns are not expressions
            "case" => return self.err("pattern"),
            _ => {}
        }
        Ok(out)
    }

    fn suite(&mut self) -> PResult<Vec<Stmt>> {
        if !matches!(self.peek().kind, TokenKind::Newline) {
            return self.simple_line();
        }
        self.advance();
        if !matches!(self.peek().kind, TokenKind::Indent) {
            return self.err("expected an indented block");
        }
        self.advance();
        let mut body = Vec::new();
        loop {
            match &self.peek().kind {
                TokenKind::Dedent => {
                    self.advance();
                    break;
                }
                TokenKind::EndMarker => break,
                TokenKind::Newline => {
                    self.advance();
                }
                _ => body.extend(self.statement()?),
            }
        }
        Ok(body)
    }

    fn simple_line(&mut self) -> PResult<Vec<Stmt>> {
        let first = self.peek();
        let start = self.pos;
        let mut nl = start;
        while nl < self.toks.len() && !matches!(self.toks[nl].kind, TokenKind::Newline | TokenKind::EndMarker) {
            nl += 1;
        }
        if nl >= self.toks.len() || !matches!(self.toks[nl].kind, TokenKind::Newline) {
            return self.err("expected newline");
        }
        let kinds = self.sub_parse(nl, |p| {
            let mut kinds = vec![p.small_stmt()?];
            while p.eat_op(";") {
                if p.at_end() {
                    break;
                }
                kinds.push(p.small_stmt()?);
            }
            Ok(kinds)
        });
        let kinds = match kinds {
            Ok(k) => k,
            Err(_) => {
                let calls = self.scan_calls(start, nl);
                vec![StmtKind::Opaque { calls }]
            }
        };
        self.pos = start;
        while self.pos <= nl {
            self.advance();
        }
        Ok(kinds.into_iter().map(|k| self.make_stmt(k, first)).collect())
    }

    fn small_stmt(&mut self) -> PResult<StmtKind> {
        if let Some(n) = self.peek().name() {
            match n {
                "import" | "from" => {
                    while !self.at_end() && !self.is_op(";") {
                        self.advance();
                    }
                    return Ok(StmtKind::Import);
                }
                "return" => {
                    self.advance();
                    let v = if self.at_end() || self.is_op(";") {
                        None
                    } else {
                        Some(self.testlist_star_expr()?)
                    };
                    return Ok(StmtKind::Return(v));
                }
                "pass" | "break" | "continue" => {
                    self.advance();
                    return Ok(StmtKind::Simple { keyword: n.to_string(), exprs: vec![] });
                }
                "raise" | "del" | "assert" | "global" | "nonlocal" => {
                    self.advance();
                    let mut exprs = Vec::new();
                    while !self.at_end() && !self.is_op(";") {
                        exprs.push(self.test()?);
                        if !(self.eat_op(",") || self.eat_kw("from")) {
                            break;
                        }
                    }
                    return Ok(StmtKind::Simple { keyword: n.to_string(), exprs });
                }
                _ => {}
            }
        }
        let first = if self.is_kw("yield") { self.yield_expr()? } else { self.testlist_star_expr()? };
        if self.is_op("=") {
            let mut chain = vec![first];
            while self.eat_op("=") {
                let v = if self.is_kw("yield") { self.yield_expr()? } else { self.testlist_star_expr()? };
                chain.push(v);
            }
            let value = chain.pop().expect("chain has a value");
            return Ok(StmtKind::Assign { targets: chain, value });
        }
        if self.eat_op(":") {
            let annotation = self.test()?;
            let value = if self.eat_op("=") {
                Some(if self.is_kw("yield") { self.yield_expr()? } else { self.testlist_star_expr()? })
            } else {
                None
            };
            return Ok(StmtKind::AnnAssign { target: first, annotation, value });
        }
        if let TokenKind::Op(op) = self.peek().kind {
            if AUGASSIGN.contains(&op) && !self.at_end() {
                self.advance();
                let value = if self.is_kw("yield") { self.yield_expr()? } else { self.testlist_star_expr()? };
                return Ok(StmtKind::AugAssign { target: first, op, value });
            }
        }
        Ok(StmtKind::Expr(first))
    }

    /// Call sites found by scanning tokens `[from, to)`: dotted names directly
    /// followed by `(`.
    fn scan_calls(&self, from: usize, to: usize) -> Vec<Expr> {
        let mut calls = Vec::new();
        let mut i = from;
        while i < to {
            let starts_chain = matches!(&self.toks[i].kind, TokenKind::Name(n) if !KEYWORDS.contains(&n.as_str()))
                && !(i > from && self.toks[i - 1].is_op("."));
            if !starts_chain {
                i += 1;
                continue;
            }
            let mut expr = Expr::Name(self.toks[i].name().unwrap().to_string());
            let mut j = i + 1;
            while j + 1 < to && self.toks[j].is_op(".") {
                match self.toks[j + 1].name() {
                    Some(attr) => {
                        expr = Expr::Attribute { value: Box::new(expr), attr: attr.to_string() };
                        j += 2;
                    }
                    None => break,
                }
            }
            if j < to && self.toks[j].is_op("(") {
                calls.push(Expr::Call { func: Box::new(expr), args: vec![], line: self.toks[j].line });
            }
            i = j.max(i + 1);
        }
        calls
    }

    // --------------------------------------------------------------- expressions

    fn starts_expr(&self) -> bool {
        if self.at_end() {
            return false;
        }
        match &self.peek().kind {
            TokenKind::Name(n) => {
                !KEYWORDS.contains(&n.as_str())
                    || matches!(n.as_str(), "None" | "True" | "False" | "not" | "lambda" | "await" | "yield")
            }
            TokenKind::Number(_) | TokenKind::Str(_) => true,
            TokenKind::Op(op) => matches!(*op, "(" | "[" | "{" | "-" | "+" | "~" | "*" | "**" | "..."),
            _ => false,
        }
    }

    fn testlist_star_expr(&mut self) -> PResult<Expr> {
        let first = self.test_or_star()?;
        if !self.is_op(",") {
            return Ok(first);
        }
        let mut items = vec![first];
        while self.eat_op(",") {
            if !self.starts_expr() {
                break;
            }
            items.push(self.test_or_star()?);
        }
        Ok(Expr::Tuple(items))
    }

    fn exprlist(&mut self) -> PResult<Expr> {
        let first = self.expr_or_star()?;
        if !self.is_op(",") {
            return Ok(first);
        }
        let mut items = vec![first];
        while self.eat_op(",") {
            if !self.starts_expr() || self.is_kw("in") {
                break;
            }
            items.push(self.expr_or_star()?);
        }
        Ok(Expr::Tuple(items))
    }

    fn test_or_star(&mut self) -> PResult<Expr> {
        if self.eat_op("*") {
            return Ok(Expr::Starred(Box::new(self.expr()?)));
        }
        self.namedexpr_test()
    }

    fn expr_or_star(&mut self) -> PResult<Expr> {
        if self.eat_op("*") {
            return Ok(Expr::Starred(Box::new(self.expr()?)));
        }
        self.expr()
    }

    fn yield_expr(&mut self) -> PResult<Expr> {
        self.expect_kw("yield")?;
        if self.eat_kw("from") {
            return Ok(Expr::Yield(Some(Box::new(self.test()?))));
        }
        if self.starts_expr() {
            Ok(Expr::Yield(Some(Box::new(self.testlist_star_expr()?))))
        } else {
            Ok(Expr::Yield(None))
        }
    }

    fn namedexpr_test(&mut self) -> PResult<Expr> {
        let e = self.test()?;
        if self.eat_op(":=") {
            let value = self.test()?;
            return Ok(Expr::NamedExpr { target: Box::new(e), value: Box::new(value) });
        }
        Ok(e)
    }

    fn test(&mut self) -> PResult<Expr> {
        if self.eat_kw("lambda") {
            let Some(colon) = self.find_header_colon() else {
                return self.err("expected ':' in lambda");
            };
            while self.pos < colon {
                self.advance();
            }
            self.expect_op(":")?;
            return Ok(Expr::Lambda(Box::new(self.test()?)));
        }
        let body = self.or_test()?;
        if self.eat_kw("if") {
            let test = self.or_test()?;
            self.expect_kw("else")?;
            let orelse = self.test()?;
            return Ok(Expr::IfExp { body: Box::new(body), test: Box::new(test), orelse: Box::new(orelse) });
        }
        Ok(body)
    }

    fn or_test(&mut self) -> PResult<Expr> {
        let first = self.and_test()?;
        if !self.is_kw("or") {
            return Ok(first);
        }
        let mut values = vec![first];
        while self.eat_kw("or") {
            values.push(self.and_test()?);
        }
        Ok(Expr::BoolOp { op: "or", values })
    }

    fn and_test(&mut self) -> PResult<Expr> {
        let first = self.not_test()?;
        if !self.is_kw("and") {
            return Ok(first);
        }
        let mut values = vec![first];
        while self.eat_kw("and") {
            values.push(self.not_test()?);
        }
        Ok(Expr::BoolOp { op: "and", values })
    }

    fn not_test(&mut self) -> PResult<Expr> {
        if self.eat_kw("not") {
            return Ok(Expr::UnaryOp { op: "not", operand: Box::new(self.not_test()?) });
        }
        self.comparison()
    }

    fn comparison(&mut self) -> PResult<Expr> {
        let left = self.expr()?;
        let mut rest = Vec::new();
        loop {
            let op = match &self.peek().kind {
                _ if self.at_end() => break,
                TokenKind::Op(o) if matches!(*o, "<" | ">" | "==" | ">=" | "<=" | "!=") => {
                    self.advance();
                    o.to_string()
                }
                TokenKind::Name(n) if n == "in" => {
                    self.advance();
                    "in".to_string()
                }
                TokenKind::Name(n) if n == "not" && self.peek_at(1).is_name("in") => {
                    self.advance();
                    self.advance();
                    "not in".to_string()
                }
                TokenKind::Name(n) if n == "is" => {
                    self.advance();
                    if self.eat_kw("not") {
                        "is not".to_string()
                    } else {
                        "is".to_string()
                    }
                }
                _ => break,
            };
            rest.push((op, self.expr()?));
        }
        if rest.is_empty() {
            Ok(left)
        } else {
            Ok(Expr::Compare { left: Box::new(left), rest })
        }
    }

    /// Bitwise-or level and below, by precedence climbing.
    fn expr(&mut self) -> PResult<Expr> {
        self.binary(0)
    }

    fn binary(&mut self, level: usize) -> PResult<Expr> {
        const LEVELS: &[&[&str]] = &[
            &["|"],
            &["^"],
            &["&"],
            &["<<", ">>"],
            &["+", "-"],
            &["*", "@", "/", "//", "%"],
        ];
        if level == LEVELS.len() {
            return self.factor();
        }
        let mut left = self.binary(level + 1)?;
        while let TokenKind::Op(op) = self.peek().kind {
            if self.at_end() || !LEVELS[level].contains(&op) {
                break;
            }
            self.advance();
            let right = self.binary(level + 1)?;
            left = Expr::BinOp { left: Box::new(left), op, right: Box::new(right) };
        }
        Ok(left)
    }

    fn factor(&mut self) -> PResult<Expr> {
        if let TokenKind::Op(op) = self.peek().kind {
            if !self.at_end() && matches!(op, "+" | "-" | "~") {
                self.advance();
                return Ok(Expr::UnaryOp { op, operand: Box::new(self.factor()?) });
            }
        }
        self.power()
    }

    fn power(&mut self) -> PResult<Expr> {
        let base = if self.eat_kw("await") {
            Expr::Await(Box::new(self.atom_expr()?))
        } else {
            self.atom_expr()?
        };
        if self.eat_op("**") {
            let exp = self.factor()?;
            return Ok(Expr::BinOp { left: Box::new(base), op: "**", right: Box::new(exp) });
        }
        Ok(base)
    }

    fn atom_expr(&mut self) -> PResult<Expr> {
        let mut e = self.atom()?;
        loop {
            if self.is_op("(") {
                let line = self.advance().line;
                let args = self.arglist(")")?;
                self.expect_op(")")?;
                e = Expr::Call { func: Box::new(e), args, line };
            } else if self.eat_op("[") {
                let index = self.subscript_list()?;
                self.expect_op("]")?;
                e = Expr::Subscript { value: Box::new(e), index: Box::new(index) };
            } else if self.eat_op(".") {
                let attr = self.expect_name()?;
                e = Expr::Attribute { value: Box::new(e), attr };
            } else {
                return Ok(e);
            }
        }
    }

    fn atom(&mut self) -> PResult<Expr> {
        if self.at_end() {
            return self.err("unexpected end of expression");
        }
        let t = self.peek();
        match &t.kind {
            TokenKind::Name(n) => {
                if KEYWORDS.contains(&n.as_str()) && !matches!(n.as_str(), "None" | "True" | "False") {
                    return self.err(format!("unexpected keyword '{n}'"));
                }
                self.advance();
                Ok(Expr::Name(n.clone()))
            }
            TokenKind::Number(n) => {
                self.advance();
                Ok(Expr::Num(n.clone()))
            }
            TokenKind::Str(first) => {
                let mut lit = StrLit {
                    value: String::new(),
                    raw: first.raw,
                    bytes: first.bytes,
                    formatted: first.formatted,
                };
                while let TokenKind::Str(s) = &self.peek().kind {
                    if self.at_end() {
                        break;
                    }
                    lit.value.push_str(&s.value);
                    lit.formatted |= s.formatted;
                    self.advance();
                }
                Ok(Expr::Str(lit))
            }
            TokenKind::Op("...") => {
                self.advance();
                Ok(Expr::Ellipsis)
            }
            TokenKind::Op("(") => {
                self.advance();
                if self.eat_op(")") {
                    return Ok(Expr::Tuple(vec![]));
                }
                if self.is_kw("yield") {
                    let y = self.yield_expr()?;
                    self.expect_op(")")?;
                    return Ok(y);
                }
                let first = self.test_or_star()?;
                if self.is_kw("for") || self.is_kw("async") {
                    let clauses = self.comp_for()?;
                    self.expect_op(")")?;
                    return Ok(Expr::Comprehension { elt: Box::new(first), clauses });
                }
                if !self.is_op(",") {
                    self.expect_op(")")?;
                    return Ok(first);
                }
                let mut items = vec![first];
                while self.eat_op(",") {
                    if self.is_op(")") {
                        break;
                    }
                    items.push(self.test_or_star()?);
                }
                self.expect_op(")")?;
                Ok(Expr::Tuple(items))
            }
            TokenKind::Op("[") => {
                self.advance();
                if self.eat_op("]") {
                    return Ok(Expr::List(vec![]));
                }
                let first = self.test_or_star()?;
                if self.is_kw("for") || self.is_kw("async") {
                    let clauses = self.comp_for()?;
                    self.expect_op("]")?;
                    return Ok(Expr::Comprehension { elt: Box::new(first), clauses });
                }
                let mut items = vec![first];
                while self.eat_op(",") {
                    if self.is_op("]") {
                        break;
                    }
                    items.push(self.test_or_star()?);
                }
                self.expect_op("]")?;
                Ok(Expr::List(items))
            }
            TokenKind::Op("{") => {
                self.advance();
                self.brace_display()
            }
            _ => self.err("unexpected token in expression"),
        }
    }

    fn brace_display(&mut self) -> PResult<Expr> {
        if self.eat_op("}") {
            return Ok(Expr::Dict(vec![]));
        }
        let mut entries: Vec<(Option<Expr>, Expr)> = Vec::new();
        let mut set_items = Vec::new();
        let is_dict;
        if self.eat_op("**") {
            entries.push((None, self.expr()?));
            is_dict = true;
        } else {
            let first = self.test_or_star()?;
            if self.eat_op(":") {
                let value = self.test()?;
                if self.is_kw("for") || self.is_kw("async") {
                    let clauses = self.comp_for()?;
                    self.expect_op("}")?;
                    let elt = Expr::Tuple(vec![first, value]);
                    return Ok(Expr::Comprehension { elt: Box::new(elt), clauses });
                }
                entries.push((Some(first), value));
                is_dict = true;
            } else {
                if self.is_kw("for") || self.is_kw("async") {
                    let clauses = self.comp_for()?;
                    self.expect_op("}")?;
                    return Ok(Expr::Comprehension { elt: Box::new(first), clauses });
                }
                set_items.push(first);
                is_dict = false;
            }
        }
        while self.eat_op(",") {
            if self.is_op("}") {
                break;
            }
            if is_dict {
                if self.eat_op("**") {
                    entries.push((None, self.expr()?));
                } else {
                    let k = self.test()?;
                    self.expect_op(":")?;
                    entries.push((Some(k), self.test()?));
                }
            } else {
                set_items.push(self.test_or_star()?);
            }
        }
        self.expect_op("}")?;
        Ok(if is_dict { Expr::Dict(entries) } else { Expr::Set(set_items) })
    }

    fn comp_for(&mut self) -> PResult<Vec<Expr>> {
        let mut clauses = Vec::new();
        loop {
            self.eat_kw("async");
            if !self.eat_kw("for") {
                break;
            }
            clauses.push(self.exprlist()?);
            self.expect_kw("in")?;
            clauses.push(self.or_test()?);
            while self.eat_kw("if") {
                clauses.push(self.or_test()?);
            }
        }
        Ok(clauses)
    }

    fn arglist(&mut self, close: &str) -> PResult<Vec<Arg>> {
        let mut args = Vec::new();
        while !self.is_op(close) {
            if self.eat_op("*") {
                args.push(Arg { keyword: None, value: self.test()?, star: Star::Single });
            } else if self.eat_op("**") {
                args.push(Arg { keyword: None, value: self.test()?, star: Star::Double });
            } else if self.peek().name().is_some() && self.peek_at(1).is_op("=") {
                let keyword = self.expect_name()?;
                self.advance();
                args.push(Arg { keyword: Some(keyword), value: self.test()?, star: Star::None });
            } else {
                let value = self.namedexpr_test()?;
                if self.is_kw("for") || self.is_kw("async") {
                    let clauses = self.comp_for()?;
                    args.push(Arg::positional(Expr::Comprehension { elt: Box::new(value), clauses }));
                } else {
                    args.push(Arg::positional(value));
                }
            }
            if !self.eat_op(",") {
                break;
            }
        }
        Ok(args)
    }

    fn subscript_list(&mut self) -> PResult<Expr> {
        let first = self.subscript()?;
        if !self.is_op(",") {
            return Ok(first);
        }
        let mut items = vec![first];
        while self.eat_op(",") {
            if self.is_op("]") {
                break;
            }
            items.push(self.subscript()?);
        }
        Ok(Expr::Tuple(items))
    }

    fn subscript(&mut self) -> PResult<Expr> {
        let lower = if self.is_op(":") { None } else { Some(self.test_or_star()?) };
        if !self.is_op(":") {
            return lower.ok_or_else(|| HostParseError::new(self.peek().line, "empty subscript"));
        }
        let mut parts = vec![lower];
        while self.eat_op(":") {
            if self.is_op(":") || self.is_op(",") || self.is_op("]") {
                parts.push(None);
            } else {
                parts.push(Some(self.test()?));
            }
        }
        Ok(Expr::Slice(parts))
    }
}
