//! Dataset curation: verify reference/kernel pairs by execution, keep those
//! with a confirmed speedup, label their difficulty and export a training
//! corpus.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::evaluator::{self, Backend};
use crate::host::{self, Expr, Stmt, StmtKind};
use crate::num::Scalar;
use crate::types::{DifficultyClass, EvalOutcome, KernelCandidate, KernelTask, Level, RunConfig, SchemaVersion};

/// Hard cap on execution attempts per structural candidate.
pub const MAX_ATTEMPTS: u32 = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurationPair {
    #[serde(default)]
    pub v: SchemaVersion,
    pub pair_id: String,
    pub reference_source: String,
    pub kernel_source: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RejectReason {
    BelowThreshold,
    Incorrect,
    CompileFail,
    Deceptive,
    NoConfirmedSpeedup,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DifficultyLabel {
    pub class: DifficultyClass,
    /// `heuristic`, `command`, or `heuristic` with the reason the command
    /// was not used.
    pub provenance: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationRecord {
    #[serde(default)]
    pub v: SchemaVersion,
    pub pair_id: String,
    pub reference_source: String,
    pub kernel_source: String,
    pub measured_speedups: Vec<f64>,
    pub attempts: u32,
    pub retained: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reject_reason: Option<RejectReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<DifficultyLabel>,
}

impl CurationRecord {
    fn new(pair: &CurationPair) -> Self {
        Self {
            v: SchemaVersion,
            pair_id: pair.pair_id.clone(),
            reference_source: pair.reference_source.clone(),
            kernel_source: pair.kernel_source.clone(),
            measured_speedups: Vec::new(),
            attempts: 0,
            retained: false,
            reject_reason: None,
            message: None,
            difficulty: None,
        }
    }
}

/// Indices of speedups at or above `threshold`.
pub fn select_by_threshold<T: Scalar>(speedups: &[T], threshold: T) -> Vec<usize> {
    speedups.iter().enumerate().filter(|(_, s)| **s >= threshold).map(|(i, _)| i).collect()
}

fn pair_task(pair: &CurationPair) -> (KernelTask, KernelCandidate) {
    let task = KernelTask::new(&pair.pair_id, Level::L1, &pair.reference_source);
    let cand = KernelCandidate::generated(&pair.pair_id, &pair.pair_id, &pair.kernel_source);
    (task, cand)
}

/// Failure reason of one evaluation, or `None` when it compiled, passed and
/// was not flagged.
fn failure(o: &EvalOutcome) -> Option<RejectReason> {
    if o.is_deceptive() {
        Some(RejectReason::Deceptive)
    } else if !o.compiled {
        Some(RejectReason::CompileFail)
    } else if !o.correct {
        Some(RejectReason::Incorrect)
    } else {
        None
    }
}

/// Evaluates each pair once and keeps those that pass the robust check and
/// correctness with speedup ≥ `cfg.speedup_threshold`. Every input lands in
/// exactly one of the two lists.
pub fn filter_by_threshold(
    backend: &dyn Backend,
    pairs: &[CurationPair],
    cfg: &RunConfig,
    jobs: usize,
) -> Result<(Vec<CurationRecord>, Vec<CurationRecord>), evaluator::EvalError> {
    let (tasks, cands): (Vec<_>, Vec<_>) = pairs.iter().map(pair_task).unzip();
    let outcomes = evaluator::evaluate_set(backend, &tasks, &cands, cfg, jobs)?;
    let mut retained = Vec::new();
    let mut rejected = Vec::new();
    for (pair, o) in pairs.iter().zip(outcomes) {
        let mut rec = CurationRecord::new(pair);
        rec.attempts = 1;
        rec.measured_speedups.push(o.speedup);
        rec.message = o.error.clone();
        rec.reject_reason = failure(&o).or((o.speedup < cfg.speedup_threshold).then_some(RejectReason::BelowThreshold));
        rec.retained = rec.reject_reason.is_none();
        if rec.retained {
            retained.push(rec);
        } else {
            rejected.push(rec);
        }
    }
    Ok((retained, rejected))
}

/// Runs up to `max_attempts` (capped at [`MAX_ATTEMPTS`]) evaluations with
/// seeds `cfg.seed + attempt`, stopping at the first correct attempt with
/// speedup > 1.0. A deceptive verdict ends validation at once.
pub fn validate_structural(
    backend: &dyn Backend,
    pair: &CurationPair,
    cfg: &RunConfig,
    max_attempts: u32,
) -> CurationRecord {
    let (task, cand) = pair_task(pair);
    let mut rec = CurationRecord::new(pair);
    let mut last_failure = None;
    for attempt in 0..max_attempts.min(MAX_ATTEMPTS) {
        let cfg = RunConfig { seed: cfg.seed.wrapping_add(attempt as u64), ..cfg.clone() };
        rec.attempts += 1;
        let outcome = match evaluator::evaluate(backend, &task, &cand, &cfg) {
            Ok(o) => o,
            Err(e) => {
                rec.measured_speedups.push(0.0);
                rec.message = Some(e.to_string());
                last_failure = Some(RejectReason::CompileFail);
                continue;
            }
        };
        rec.measured_speedups.push(outcome.speedup);
        rec.message = outcome.error.clone();
        match failure(&outcome) {
            Some(RejectReason::Deceptive) => {
                rec.reject_reason = Some(RejectReason::Deceptive);
                return rec;
            }
            Some(reason) => last_failure = Some(reason),
            None if outcome.speedup > 1.0 => {
                rec.retained = true;
                rec.message = None;
                return rec;
            }
            None => last_failure = Some(RejectReason::NoConfirmedSpeedup),
        }
    }
    let any_correct = rec.measured_speedups.iter().any(|s| *s > 0.0);
    rec.reject_reason = Some(if any_correct {
        RejectReason::NoConfirmedSpeedup
    } else {
        last_failure.unwrap_or(RejectReason::NoConfirmedSpeedup)
    });
    rec
}

// ----------------------------------------------------------------- difficulty

pub trait DifficultyClassifier: Send + Sync {
    fn classify(&self, reference_source: &str) -> DifficultyLabel;
}

/// Structural heuristic over the reference `Model` class.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicClassifier;

impl DifficultyClassifier for HeuristicClassifier {
    fn classify(&self, reference_source: &str) -> DifficultyLabel {
        DifficultyLabel { class: classify_difficulty(reference_source), provenance: "heuristic".into() }
    }
}

/// Sends the reference source to an external command on standard input and
/// reads a label from its standard output. Falls back to the heuristic when
/// the command fails or prints an unknown label.
#[derive(Debug, Clone)]
pub struct CommandClassifier {
    pub cmd: String,
    pub timeout: Duration,
}

impl CommandClassifier {
    fn run(&self, reference_source: &str) -> Result<DifficultyClass, String> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.cmd)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| format!("cannot start classifier: {e}"))?;
        let mut stdin = child.stdin.take().expect("piped stdin");
        let input = reference_source.to_string();
        let writer = std::thread::spawn(move || {
            let _ = stdin.write_all(input.as_bytes());
        });
        let (tx, rx) = std::sync::mpsc::channel();
        std::thread::spawn(move || {
            let _ = tx.send(child.wait_with_output());
        });
        let output = rx
            .recv_timeout(self.timeout)
            .map_err(|_| format!("classifier exceeded {} s", self.timeout.as_secs()))?
            .map_err(|e| format!("classifier failed: {e}"))?;
        let _ = writer.join();
        if !output.status.success() {
            return Err(format!("classifier exited with {}", output.status));
        }
        let text = String::from_utf8_lossy(&output.stdout);
        let label = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("").trim().to_string();
        DifficultyClass::parse_label(&label).ok_or_else(|| format!("unknown label `{label}`"))
    }
}

impl DifficultyClassifier for CommandClassifier {
    fn classify(&self, reference_source: &str) -> DifficultyLabel {
        match self.run(reference_source) {
            Ok(class) => DifficultyLabel { class, provenance: "command".into() },
            Err(reason) => {
                tracing::warn!("difficulty classifier fallback: {reason}");
                DifficultyLabel {
                    class: classify_difficulty(reference_source),
                    provenance: format!("heuristic ({reason})"),
                }
            }
        }
    }
}

/// Calls that do not count as framework operations.
const NON_OPS: &[&str] = &[
    "super", "len", "range", "int", "float", "bool", "tuple", "list", "print", "isinstance", "size", "dim", "shape",
    "contiguous", "item", "numel",
];

/// Container constructors that make a submodule composite.
const CONTAINERS: &[&str] = &["Sequential", "ModuleList", "ModuleDict"];

/// SingleOp: `forward` performs one framework operation and the module holds
/// at most one primitive submodule. Fusion: several chained operations, no
/// composite submodules. Architecture: submodules built from other modules.
/// Unparsable sources and sources without `Model.forward` are Unclassified.
pub fn classify_difficulty(reference_source: &str) -> DifficultyClass {
    let Ok(stmts) = host::parse_module(reference_source) else {
        return DifficultyClass::Unclassified;
    };
    let Some(class) = host::find_class(&stmts, "Model") else {
        return DifficultyClass::Unclassified;
    };
    let Some(forward) = host::find_method(class, "forward") else {
        return DifficultyClass::Unclassified;
    };

    let local_classes: Vec<&str> = stmts
        .iter()
        .filter_map(|s| match &s.kind {
            StmtKind::ClassDef { name, .. } if name != "Model" => Some(name.as_str()),
            _ => None,
        })
        .collect();

    let (mut primitives, mut composite) = (0usize, false);
    if let Some(init) = host::find_method(class, "__init__") {
        for_each_stmt(host::function_body(init), &mut |s| {
            let StmtKind::Assign { targets, value } = &s.kind else { return };
            let on_self = targets.iter().any(|t| matches!(t, Expr::Attribute { value, .. } if value.as_name() == Some("self")));
            if !on_self {
                return;
            }
            match value {
                Expr::Call { func, .. } => {
                    let tail = func.tail_name().unwrap_or("");
                    if CONTAINERS.contains(&tail) || local_classes.contains(&tail) {
                        composite = true;
                    } else if tail.chars().next().is_some_and(char::is_uppercase) {
                        primitives += 1;
                    }
                }
                Expr::Comprehension { .. } | Expr::List(_) => composite = true,
                _ => {}
            }
        });
    }
    if composite {
        return DifficultyClass::Architecture;
    }

    let mut ops = 0usize;
    for_each_stmt(host::function_body(forward), &mut |s| {
        for e in s.own_exprs() {
            e.walk(&mut |e| match e {
                Expr::Call { func, .. } if !func.tail_name().is_some_and(|n| NON_OPS.contains(&n)) => ops += 1,
                Expr::BinOp { op, .. } if !matches!(*op, "<<" | ">>" | "&" | "|" | "^") => ops += 1,
                _ => {}
            });
        }
    });
    if ops <= 1 && primitives <= 1 {
        DifficultyClass::SingleOp
    } else {
        DifficultyClass::Fusion
    }
}

fn for_each_stmt<'a>(stmts: &'a [Stmt], f: &mut dyn FnMut(&'a Stmt)) {
    for s in stmts {
        f(s);
        for b in s.inline_bodies() {
            for_each_stmt(b, f);
        }
    }
}

// --------------------------------------------------------------------- export

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    #[serde(default)]
    pub v: SchemaVersion,
    pub pair_id: String,
    pub reference_source: String,
    pub kernel_source: String,
    pub difficulty: DifficultyClass,
    pub provenance: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default)]
    pub v: SchemaVersion,
    pub total: usize,
    pub by_difficulty: BTreeMap<DifficultyClass, usize>,
}

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("record `{0}` is not retained")]
    NotRetained(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Writes retained records as JSONL to `path`. Records without a difficulty
/// label are labelled with `classifier`.
pub fn export_sft(
    records: &[CurationRecord],
    path: &Path,
    classifier: &dyn DifficultyClassifier,
) -> Result<Manifest, ExportError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let manifest = export_sft_to(records, &mut file, classifier)?;
    file.flush()?;
    Ok(manifest)
}

/// Like [`export_sft`] but writes to any sink. Nothing is written when a
/// record is not retained.
pub fn export_sft_to<W: Write>(
    records: &[CurationRecord],
    out: W,
    classifier: &dyn DifficultyClassifier,
) -> Result<Manifest, ExportError> {
    let mut by_difficulty: BTreeMap<DifficultyClass, usize> = DifficultyClass::ALL.into_iter().map(|c| (c, 0)).collect();
    let mut lines = Vec::with_capacity(records.len());
    for r in records {
        if !r.retained {
            return Err(ExportError::NotRetained(r.pair_id.clone()));
        }
        let label = r.difficulty.clone().unwrap_or_else(|| classifier.classify(&r.reference_source));
        *by_difficulty.entry(label.class).or_default() += 1;
        lines.push(SftRecord {
            v: SchemaVersion,
            pair_id: r.pair_id.clone(),
            reference_source: r.reference_source.clone(),
            kernel_source: r.kernel_source.clone(),
            difficulty: label.class,
            provenance: label.provenance,
        });
    }
    crate::types::write_jsonl(out, &lines)?;
    Ok(Manifest { v: SchemaVersion, total: lines.len(), by_difficulty })
}
