use std::ops::Range;

#[derive(Debug, Clone, PartialEq)]
pub struct Stmt {
    pub kind: StmtKind,
    /// Byte span from the start of the statement's first line through its
    /// terminating line break (inclusive). Compound statements cover their
    /// whole body.
    pub span: Range<usize>,
    /// 1-based line of the first token.
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StmtKind {
    Import,
    Assign {
        targets: Vec<Expr>,
        value: Expr,
    },
    AnnAssign {
        target: Expr,
        annotation: Expr,
        value: Option<Expr>,
    },
    AugAssign {
        target: Expr,
        op: &'static str,
        value: Expr,
    },
    Expr(Expr),
    Return(Option<Expr>),
    FunctionDef {
        name: String,
        params: Vec<String>,
        decorators: Vec<Expr>,
        body: Vec<Stmt>,
    },
    ClassDef {
        name: String,
        bases: Vec<Arg>,
        decorators: Vec<Expr>,
        body: Vec<Stmt>,
    },
    /// `if`, `for`, `while`, `with`, `try`, `match` and their clauses.
    Compound {
        keyword: String,
        header: Vec<Expr>,
        bodies: Vec<Vec<Stmt>>,
    },
    /// `pass`, `raise`, `del`, `assert`, `global`, ...
    Simple {
        keyword: String,
        exprs: Vec<Expr>,
    },
    /// A statement whose expression grammar was not understood. Calls found by
    /// scanning its tokens are kept so reachability analysis still sees them.
    Opaque {
        calls: Vec<Expr>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Name(String),
    Attribute {
        value: Box<Expr>,
        attr: String,
    },
    Call {
        func: Box<Expr>,
        args: Vec<Arg>,
        line: usize,
    },
    Str(StrLit),
    Num(String),
    Ellipsis,
    List(Vec<Expr>),
    Tuple(Vec<Expr>),
    Set(Vec<Expr>),
    /// `None` key marks a `**mapping` entry.
    Dict(Vec<(Option<Expr>, Expr)>),
    Subscript {
        value: Box<Expr>,
        index: Box<Expr>,
    },
    Slice(Vec<Option<Expr>>),
    BinOp {
        left: Box<Expr>,
        op: &'static str,
        right: Box<Expr>,
    },
    UnaryOp {
        op: &'static str,
        operand: Box<Expr>,
    },
    BoolOp {
        op: &'static str,
        values: Vec<Expr>,
    },
    Compare {
        left: Box<Expr>,
        rest: Vec<(String, Expr)>,
    },
    IfExp {
        body: Box<Expr>,
        test: Box<Expr>,
        orelse: Box<Expr>,
    },
    Lambda(Box<Expr>),
    Comprehension {
        elt: Box<Expr>,
        clauses: Vec<Expr>,
    },
    Starred(Box<Expr>),
    NamedExpr {
        target: Box<Expr>,
        value: Box<Expr>,
    },
    Await(Box<Expr>),
    Yield(Option<Box<Expr>>),
    Opaque(Vec<Expr>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrLit {
    pub value: String,
    pub raw: bool,
    pub bytes: bool,
    pub formatted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Star {
    None,
    Single,
    Double,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Arg {
    pub keyword: Option<String>,
    pub value: Expr,
    pub star: Star,
}

impl Arg {
    pub fn positional(value: Expr) -> Self {
        Self { keyword: None, value, star: Star::None }
    }
}

impl Expr {
    /// `a.b.c` for a chain of attribute accesses rooted at a name.
    pub fn dotted_name(&self) -> Option<String> {
        match self {
            Expr::Name(n) => Some(n.clone()),
            Expr::Attribute { value, attr } => value.dotted_name().map(|v| format!("{v}.{attr}")),
            _ => None,
        }
    }

    /// Final component of a dotted name (`load_inline` for
    /// `torch.utils.cpp_extension.load_inline`).
    pub fn tail_name(&self) -> Option<&str> {
        match self {
            Expr::Name(n) => Some(n),
            Expr::Attribute { attr, .. } => Some(attr),
            _ => None,
        }
    }

    pub fn as_name(&self) -> Option<&str> {
        match self {
            Expr::Name(n) => Some(n),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Expr::Str(s) => Some(&s.value),
            _ => None,
        }
    }

    /// Pre-order traversal over this expression and all sub-expressions.
    pub fn walk<'a>(&'a self, f: &mut dyn FnMut(&'a Expr)) {
        f(self);
        match self {
            Expr::Name(_) | Expr::Str(_) | Expr::Num(_) | Expr::Ellipsis => {}
            Expr::Attribute { value, .. } => value.walk(f),
            Expr::Call { func, args, .. } => {
                func.walk(f);
                for a in args {
                    a.value.walk(f);
                }
            }
            Expr::List(items) | Expr::Tuple(items) | Expr::Set(items) | Expr::Opaque(items) => {
                for e in items {
                    e.walk(f);
                }
            }
            Expr::BoolOp { values, .. } => {
                for e in values {
                    e.walk(f);
                }
            }
            Expr::Dict(entries) => {
                for (k, v) in entries {
                    if let Some(k) = k {
                        k.walk(f);
                    }
                    v.walk(f);
                }
            }
            Expr::Subscript { value, index } => {
                value.walk(f);
                index.walk(f);
            }
            Expr::Slice(parts) => {
                for p in parts.iter().flatten() {
                    p.walk(f);
                }
            }
            Expr::BinOp { left, right, .. } => {
                left.walk(f);
                right.walk(f);
            }
            Expr::UnaryOp { operand, .. } => operand.walk(f),
            Expr::Compare { left, rest } => {
                left.walk(f);
                for (_, e) in rest {
                    e.walk(f);
                }
            }
            Expr::IfExp { body, test, orelse } => {
                body.walk(f);
                test.walk(f);
                orelse.walk(f);
            }
            Expr::Lambda(body) | Expr::Starred(body) | Expr::Await(body) => body.walk(f),
            Expr::Comprehension { elt, clauses } => {
                elt.walk(f);
                for c in clauses {
                    c.walk(f);
                }
            }
            Expr::NamedExpr { target, value } => {
                target.walk(f);
                value.walk(f);
            }
            Expr::Yield(v) => {
                if let Some(v) = v {
                    v.walk(f);
                }
            }
        }
    }
}

impl Stmt {
    /// Expressions that belong directly to this statement (not nested bodies).
    pub fn own_exprs(&self) -> Vec<&Expr> {
        match &self.kind {
            StmtKind::Import => vec![],
            StmtKind::Assign { targets, value } => targets.iter().chain(Some(value)).collect(),
            StmtKind::AnnAssign { target, annotation, value } => {
                let mut v = vec![target, annotation];
                v.extend(value.iter());
                v
            }
            StmtKind::AugAssign { target, value, .. } => vec![target, value],
            StmtKind::Expr(e) => vec![e],
            StmtKind::Return(e) => e.iter().collect(),
            StmtKind::FunctionDef { decorators, .. } => decorators.iter().collect(),
            StmtKind::ClassDef { bases, decorators, .. } => {
                decorators.iter().chain(bases.iter().map(|a| &a.value)).collect()
            }
            StmtKind::Compound { header, .. } => header.iter().collect(),
            StmtKind::Simple { exprs, .. } => exprs.iter().collect(),
            StmtKind::Opaque { calls } => calls.iter().collect(),
        }
    }

    /// Nested statement bodies, excluding function and class definitions.
    pub fn inline_bodies(&self) -> Vec<&[Stmt]> {
        match &self.kind {
            StmtKind::Compound { bodies, .. } => bodies.iter().map(Vec::as_slice).collect(),
            _ => vec![],
        }
    }

    /// Visits every expression in this statement and in nested control-flow
    /// bodies. Nested `def`/`class` bodies are not entered.
    pub fn walk_exprs<'a>(&'a self, f: &mut dyn FnMut(&'a Expr)) {
        for e in self.own_exprs() {
            e.walk(f);
        }
        for body in self.inline_bodies() {
            for s in body {
                s.walk_exprs(f);
            }
        }
    }
}

/// Finds the class named `name` among top-level statements.
pub fn find_class<'a>(stmts: &'a [Stmt], name: &str) -> Option<&'a Stmt> {
    stmts
        .iter()
        .find(|s| matches!(&s.kind, StmtKind::ClassDef { name: n, .. } if n == name))
}

/// Finds a method defined directly in a class body, including one nested in
/// top-level control flow of the body.
pub fn find_method<'a>(class: &'a Stmt, method: &str) -> Option<&'a Stmt> {
    let StmtKind::ClassDef { body, .. } = &class.kind else {
        return None;
    };
    fn search<'a>(stmts: &'a [Stmt], method: &str) -> Option<&'a Stmt> {
        for s in stmts {
            if matches!(&s.kind, StmtKind::FunctionDef { name, .. } if name == method) {
                return Some(s);
            }
            for b in s.inline_bodies() {
                if let Some(found) = search(b, method) {
                    return Some(found);
                }
            }
        }
        None
    }
    search(body, method)
}

pub fn function_body(stmt: &Stmt) -> &[Stmt] {
    match &stmt.kind {
        StmtKind::FunctionDef { body, .. } | StmtKind::ClassDef { body, .. } => body,
        _ => &[],
    }
}
