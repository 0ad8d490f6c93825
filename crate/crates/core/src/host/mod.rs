//! Structural parsing of host-format module files: the Python sources that
//! embed CUDA as string literals and compile it through an inline loader.

pub mod ast;
mod lexer;
mod parser;

use std::fmt;

pub use ast::{find_class, find_method, function_body, Arg, Expr, Star, Stmt, StmtKind, StrLit};
pub use parser::parse_module;

/// Names recognised as the inline-compilation entry point, matched on the
/// final component of the callee (`load_inline`,
/// `torch.utils.cpp_extension.load_inline`, `cpp_extension.load_inline`).
pub const INLINE_COMPILE_FUNCTIONS: &[&str] = &["load_inline"];

/// Positional index of the device-source parameter of the inline loader
/// (`load_inline(name, cpp_sources, cuda_sources, functions, ...)`).
pub const CUDA_SOURCES_POSITION: usize = 2;
pub const FUNCTIONS_POSITION: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct HostParseError {
    pub line: usize,
    pub message: String,
}

impl HostParseError {
    pub fn new(line: usize, message: impl Into<String>) -> Self {
        Self { line, message: message.into() }
    }
}

impl fmt::Display for HostParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

/// A call to the inline loader, with the arguments the analyses care about.
#[derive(Debug, Clone, PartialEq)]
pub struct InlineCompileCall<'a> {
    pub line: usize,
    /// Expression given for the device sources (`cuda_sources=`).
    pub cuda_sources: Option<&'a Expr>,
    /// Exported function names when `functions=` is a literal list of strings.
    pub functions: Option<Vec<String>>,
}

impl<'a> InlineCompileCall<'a> {
    pub fn from_expr(expr: &'a Expr) -> Option<Self> {
        let Expr::Call { func, args, line } = expr else {
            return None;
        };
        if !func.tail_name().is_some_and(|n| INLINE_COMPILE_FUNCTIONS.contains(&n)) {
            return None;
        }
        let find = |keyword: &str, position: usize| -> Option<&'a Expr> {
            args.iter()
                .find(|a| a.keyword.as_deref() == Some(keyword))
                .or_else(|| {
                    args.iter()
                        .filter(|a| a.keyword.is_none() && a.star == Star::None)
                        .nth(position)
                })
                .map(|a| &a.value)
        };
        let functions = find("functions", FUNCTIONS_POSITION).and_then(|e| {
            let items = match e {
                Expr::List(items) | Expr::Tuple(items) => items.as_slice(),
                Expr::Str(_) => std::slice::from_ref(e),
                _ => return None,
            };
            items.iter().map(|i| i.as_str().map(str::to_string)).collect()
        });
        Some(Self {
            line: *line,
            cuda_sources: find("cuda_sources", CUDA_SOURCES_POSITION),
            functions,
        })
    }

    /// Names referenced by the device-source argument, in order. A bare name
    /// or a list/tuple of names.
    pub fn cuda_source_names(&self) -> Vec<&'a str> {
        match self.cuda_sources {
            Some(Expr::Name(n)) => vec![n.as_str()],
            Some(Expr::List(items)) | Some(Expr::Tuple(items)) => {
                items.iter().filter_map(Expr::as_name).collect()
            }
            _ => vec![],
        }
    }
}

/// Every inline loader call anywhere in the statements, including nested
/// function and class bodies, in source order.
pub fn inline_compile_calls(stmts: &[Stmt]) -> Vec<InlineCompileCall<'_>> {
    let mut out = Vec::new();
    visit_all_exprs(stmts, &mut |e| {
        if let Some(c) = InlineCompileCall::from_expr(e) {
            out.push(c);
        }
    });
    out
}

/// Visits every expression in `stmts`, descending into all nested bodies
/// including function and class definitions.
pub fn visit_all_exprs<'a>(stmts: &'a [Stmt], f: &mut dyn FnMut(&'a Expr)) {
    for s in stmts {
        for e in s.own_exprs() {
            e.walk(f);
        }
        match &s.kind {
            StmtKind::FunctionDef { body, .. } | StmtKind::ClassDef { body, .. } => visit_all_exprs(body, f),
            StmtKind::Compound { bodies, .. } => {
                for b in bodies {
                    visit_all_exprs(b, f);
                }
            }
            _ => {}
        }
    }
}

/// When `stmt` is a single-target top-level assignment `name = value`,
/// returns `(name, value)`.
pub fn simple_assignment(stmt: &Stmt) -> Option<(&str, &Expr)> {
    match &stmt.kind {
        StmtKind::Assign { targets, value } if targets.len() == 1 => Some((targets[0].as_name()?, value)),
        StmtKind::AnnAssign { target, value: Some(value), .. } => Some((target.as_name()?, value)),
        _ => None,
    }
}
