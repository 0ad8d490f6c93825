//! Prefix / core / suffix split of an inline-CUDA module file.
//!
//! The core is the single top-level statement that binds the device-source
//! string passed to the inline loader. It runs from the first byte of that
//! statement's line through its terminating line break. Everything before it
//! (imports, comments) is the prefix; everything after it (host
//! declarations, the loader call, the module class) is the suffix.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::host::{self, Expr, HostParseError, Stmt};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripartiteKernel {
    pub prefix: String,
    pub core: String,
    pub suffix: String,
    /// Variable holding the device source string.
    pub core_symbol: String,
    /// Other device-source bindings that were not selected as the core.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl TripartiteKernel {
    /// Byte ranges of prefix, core and suffix in the original file.
    pub fn spans(&self) -> [Range<usize>; 3] {
        let a = self.prefix.len();
        let b = a + self.core.len();
        let c = b + self.suffix.len();
        [0..a, a..b, b..c]
    }

    pub fn original(&self) -> String {
        reassemble(self, &self.core)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecomposeError {
    #[error("no inline compilation call found")]
    NoInlineCompileCall,
    #[error("device-source argument is not a named top-level string binding: {0}")]
    NoCudaSourceBinding(String),
    #[error("multiple device-source bindings: {}", .0.join(", "))]
    AmbiguousCore(Vec<String>),
    #[error("host parse error: {0}")]
    HostParse(#[from] HostParseError),
}

/// Splits `source` into prefix, core and suffix. With several device-source
/// bindings the lexically first is chosen and the rest are listed in
/// `warnings`.
pub fn decompose(source: &str) -> Result<TripartiteKernel, DecomposeError> {
    let stmts = host::parse_module(source)?;
    let bindings = device_source_bindings(&stmts)?;
    let (chosen, others) = bindings.split_first().expect("at least one binding");
    Ok(build(source, chosen, others))
}

/// Like [`decompose`] but rejects files with more than one device-source
/// binding.
pub fn decompose_strict(source: &str) -> Result<TripartiteKernel, DecomposeError> {
    let stmts = host::parse_module(source)?;
    let bindings = device_source_bindings(&stmts)?;
    if bindings.len() > 1 {
        return Err(DecomposeError::AmbiguousCore(bindings.into_iter().map(|b| b.name).collect()));
    }
    Ok(build(source, &bindings[0], &[]))
}

pub fn reassemble(t: &TripartiteKernel, new_core: &str) -> String {
    let mut out = String::with_capacity(t.prefix.len() + new_core.len() + t.suffix.len());
    out.push_str(&t.prefix);
    out.push_str(new_core);
    out.push_str(&t.suffix);
    out
}

struct Binding {
    name: String,
    span: Range<usize>,
    line: usize,
}

fn build(source: &str, chosen: &Binding, others: &[Binding]) -> TripartiteKernel {
    let Range { start, end } = chosen.span.clone();
    TripartiteKernel {
        prefix: source[..start].to_string(),
        core: source[start..end].to_string(),
        suffix: source[end..].to_string(),
        core_symbol: chosen.name.clone(),
        warnings: others
            .iter()
            .map(|b| format!("additional device-source binding `{}` at line {} left in place", b.name, b.line))
            .collect(),
    }
}

/// Top-level string bindings that flow into an inline loader's device-source
/// argument, ordered by position and deduplicated.
fn device_source_bindings(stmts: &[Stmt]) -> Result<Vec<Binding>, DecomposeError> {
    let calls = host::inline_compile_calls(stmts);
    if calls.is_empty() {
        return Err(DecomposeError::NoInlineCompileCall);
    }
    let mut found: Vec<Binding> = Vec::new();
    let mut unresolved = Vec::new();
    for call in &calls {
        let names = call.cuda_source_names();
        if names.is_empty() {
            unresolved.push(match call.cuda_sources {
                None => format!("loader call at line {} has no device sources", call.line),
                Some(Expr::Str(_)) => format!("loader call at line {} passes an inline string literal", call.line),
                Some(_) => format!("loader call at line {} passes a computed expression", call.line),
            });
        }
        for name in names {
            match string_binding(stmts, name, call.line) {
                Some(stmt) => {
                    if !found.iter().any(|b| b.span == stmt.span) {
                        found.push(Binding { name: name.to_string(), span: stmt.span.clone(), line: stmt.line });
                    }
                }
                None => unresolved.push(format!("`{name}` is not bound to a top-level string literal")),
            }
        }
    }
    if found.is_empty() {
        return Err(DecomposeError::NoCudaSourceBinding(unresolved.join("; ")));
    }
    found.sort_by_key(|b| b.span.start);
    Ok(found)
}

/// The top-level statement binding `name` to a string literal: the last such
/// binding before `call_line`, else the first one anywhere.
fn string_binding<'a>(stmts: &'a [Stmt], name: &str, call_line: usize) -> Option<&'a Stmt> {
    let candidates: Vec<&Stmt> = stmts
        .iter()
        .filter(|s| matches!(host::simple_assignment(s), Some((n, Expr::Str(_))) if n == name))
        .collect();
    candidates
        .iter()
        .rev()
        .find(|s| s.line < call_line)
        .or_else(|| candidates.first())
        .copied()
}
