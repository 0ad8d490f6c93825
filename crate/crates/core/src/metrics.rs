//! Per-level Exec and fast_p aggregates and their tabular rendering.
//!
//! fast_p = (1/N)·|{i : correct_i ∧ speedup_i > p}|, with N the number of tasks
//! in the level. Tasks without an outcome count as incorrect.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::num::Scalar;
use crate::types::{EvalOutcome, Level};

pub const SPEEDUP_NOTE: &str = "speedup = median(reference ms) / median(candidate ms) over timed trials";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("p must be positive, got {0}")]
    InvalidP(String),
    #[error("{outcomes} outcomes exceed N = {n}")]
    NExceeded { outcomes: usize, n: usize },
    #[error("N must be positive")]
    ZeroN,
    #[error("duplicate aggregate for {0}")]
    DuplicateLevel(String),
    #[error("task `{0}` has more than one outcome")]
    DuplicateTask(String),
    #[error("outcome `{0}` carries no level")]
    MissingLevel(String),
}

fn check_n(outcomes: usize, n: usize) -> Result<(), MetricsError> {
    if n == 0 {
        return Err(MetricsError::ZeroN);
    }
    if outcomes > n {
        return Err(MetricsError::NExceeded { outcomes, n });
    }
    Ok(())
}

fn check_p<T: Scalar>(p: T) -> Result<(), MetricsError> {
    if p <= T::zero() || !p.is_finite() {
        return Err(MetricsError::InvalidP(p.to_string()));
    }
    Ok(())
}

fn ratio<T: Scalar>(count: usize, n: usize) -> T {
    T::from_usize_lossy(count) / T::from_usize_lossy(n)
}

/// Fraction of the level's N tasks that are correct and faster than `p`×.
/// With `robust_check`, deceptive outcomes count as incorrect.
pub fn fast_p_with<T: Scalar>(outcomes: &[EvalOutcome<T>], p: T, n: usize, robust_check: bool) -> Result<T, MetricsError> {
    check_p(p)?;
    check_n(outcomes.len(), n)?;
    let hits = outcomes.iter().filter(|o| o.counts_correct(robust_check) && o.speedup > p).count();
    Ok(ratio(hits, n))
}

pub fn fast_p<T: Scalar>(outcomes: &[EvalOutcome<T>], p: T, n: usize) -> Result<T, MetricsError> {
    fast_p_with(outcomes, p, n, false)
}

pub fn exec_rate_with<T: Scalar>(outcomes: &[EvalOutcome<T>], n: usize, robust_check: bool) -> Result<T, MetricsError> {
    check_n(outcomes.len(), n)?;
    Ok(ratio(outcomes.iter().filter(|o| o.counts_correct(robust_check)).count(), n))
}

pub fn exec_rate<T: Scalar>(outcomes: &[EvalOutcome<T>], n: usize) -> Result<T, MetricsError> {
    exec_rate_with(outcomes, n, false)
}

/// Which correctness view an aggregate uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum View {
    Unchecked,
    Checked,
}

impl View {
    fn label(self) -> &'static str {
        match self {
            View::Unchecked => "w/o robust check",
            View::Checked => "w/ robust check",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelAggregate<T = f64> {
    pub level: Level,
    pub view: Option<View>,
    pub n: usize,
    pub exec_pct: T,
    /// `(p, pct)` in ascending p.
    pub fast: Vec<(T, T)>,
}

/// Builds one aggregate per level present in `outcomes` or `n_by_level`.
/// A level's N comes from `n_by_level` when given there, else from the number
/// of distinct tasks with an outcome at that level.
pub fn aggregate<T: Scalar>(
    outcomes: &[EvalOutcome<T>],
    ps: &[T],
    n_by_level: &BTreeMap<Level, usize>,
    view: Option<View>,
) -> Result<Vec<LevelAggregate<T>>, MetricsError> {
    for p in ps {
        check_p(*p)?;
    }
    let mut ps = ps.to_vec();
    ps.sort_by(|a, b| a.partial_cmp(b).expect("finite p"));
    ps.dedup();

    let mut by_level: BTreeMap<Level, Vec<EvalOutcome<T>>> = n_by_level.keys().map(|l| (*l, Vec::new())).collect();
    let mut seen = BTreeSet::new();
    for o in outcomes {
        let level = o.level.ok_or_else(|| MetricsError::MissingLevel(o.candidate_id.clone()))?;
        if !seen.insert(o.task_id.clone()) {
            return Err(MetricsError::DuplicateTask(o.task_id.clone()));
        }
        by_level.entry(level).or_default().push(o.clone());
    }

    let robust = view == Some(View::Checked);
    by_level
        .into_iter()
        .map(|(level, outs)| {
            let n = n_by_level.get(&level).copied().unwrap_or(outs.len());
            let exec: T = exec_rate_with(&outs, n, robust)?;
            let fast = ps
                .iter()
                .map(|p| Ok((*p, fast_p_with(&outs, *p, n, robust)? * T::hundred())))
                .collect::<Result<_, MetricsError>>()?;
            Ok(LevelAggregate { level, view, n, exec_pct: exec * T::hundred(), fast })
        })
        .collect()
}

/// Aggregates without and with the robust check, interleaved per level.
pub fn aggregate_both<T: Scalar>(
    outcomes: &[EvalOutcome<T>],
    ps: &[T],
    n_by_level: &BTreeMap<Level, usize>,
) -> Result<Vec<LevelAggregate<T>>, MetricsError> {
    let unchecked = aggregate(outcomes, ps, n_by_level, Some(View::Unchecked))?;
    let checked = aggregate(outcomes, ps, n_by_level, Some(View::Checked))?;
    Ok(unchecked.into_iter().zip(checked).flat_map(|(a, b)| [a, b]).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Markdown,
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "markdown" | "md" => Ok(Self::Markdown),
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            _ => Err(format!("unknown format `{s}` (expected markdown, csv or json)")),
        }
    }
}

fn pct<T: Scalar>(x: T) -> String {
    format!("{:.1}", x.to_f64().unwrap_or(f64::NAN))
}

fn round1<T: Scalar>(x: T) -> f64 {
    (x.to_f64().unwrap_or(f64::NAN) * 10.0).round() / 10.0
}

/// Renders aggregates as a table. `ps` fixes the fast_p columns so an empty
/// aggregate list still yields a header.
pub fn render_report<T: Scalar>(aggregates: &[LevelAggregate<T>], ps: &[T], format: Format) -> Result<String, MetricsError> {
    let mut keys = BTreeSet::new();
    for a in aggregates {
        if !keys.insert((a.level, a.view)) {
            let what = match a.view {
                Some(v) => format!("{} ({})", a.level, v.label()),
                None => a.level.to_string(),
            };
            return Err(MetricsError::DuplicateLevel(what));
        }
    }
    let with_view = aggregates.iter().any(|a| a.view.is_some());
    let fast_at = |a: &LevelAggregate<T>, p: T| a.fast.iter().find(|(q, _)| *q == p).map(|(_, v)| *v);
    let cell = |a: &LevelAggregate<T>, p: T| fast_at(a, p).map_or_else(|| "-".to_string(), pct);

    let mut out = String::new();
    match format {
        Format::Markdown => {
            let fast_head = ps.iter().map(|p| format!("fast_{p}")).collect::<Vec<_>>().join(" / ");
            let _ = writeln!(out, "<!-- {SPEEDUP_NOTE} -->");
            if with_view {
                let _ = writeln!(out, "| Level | Robust check | N | Exec | {fast_head} |");
                out.push_str("|---|---|---|---|---|\n");
            } else {
                let _ = writeln!(out, "| Level | N | Exec | {fast_head} |");
                out.push_str("|---|---|---|---|\n");
            }
            for a in aggregates {
                let fast = ps.iter().map(|p| cell(a, *p)).collect::<Vec<_>>().join(" / ");
                if with_view {
                    let view = a.view.map_or("", View::label);
                    let _ = writeln!(out, "| {} | {view} | {} | {} | {fast} |", a.level, a.n, pct(a.exec_pct));
                } else {
                    let _ = writeln!(out, "| {} | {} | {} | {fast} |", a.level, a.n, pct(a.exec_pct));
                }
            }
        }
        Format::Csv => {
            let mut head = vec!["level".to_string()];
            if with_view {
                head.push("view".into());
            }
            head.extend(["n".into(), "exec".into()]);
            head.extend(ps.iter().map(|p| format!("fast_{p}")));
            let _ = writeln!(out, "{}", head.join(","));
            for a in aggregates {
                let mut row = vec![a.level.to_string()];
                if with_view {
                    row.push(a.view.map_or(String::new(), |v| format!("{v:?}").to_lowercase()));
                }
                row.extend([a.n.to_string(), pct(a.exec_pct)]);
                row.extend(ps.iter().map(|p| cell(a, *p)));
                let _ = writeln!(out, "{}", row.join(","));
            }
        }
        Format::Json => {
            let rows: Vec<Value> = aggregates
                .iter()
                .map(|a| {
                    let mut fast = Map::new();
                    for p in ps {
                        fast.insert(p.to_string(), fast_at(a, *p).map_or(Value::Null, |v| json!(round1(v))));
                    }
                    let mut row = Map::new();
                    row.insert("level".into(), json!(a.level));
                    if let Some(v) = a.view {
                        row.insert("view".into(), json!(v));
                    }
                    row.insert("n".into(), json!(a.n));
                    row.insert("exec".into(), json!(round1(a.exec_pct)));
                    row.insert("fast".into(), Value::Object(fast));
                    Value::Object(row)
                })
                .collect();
            let doc = json!({ "speedup": SPEEDUP_NOTE, "rows": rows });
            out = serde_json::to_string_pretty(&doc).expect("json value");
            out.push('\n');
        }
    }
    Ok(out)
}
