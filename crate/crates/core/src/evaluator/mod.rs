//! Candidate evaluation: robust check, backend execution, outcome assembly.

mod mock;
mod shim;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub use mock::{source_digest, MockBackend, MockScript, ScriptEntry};
pub use shim::ShimBackend;

use crate::assets;
use crate::robustcheck;
use crate::timing;
use crate::types::{CheckMode, EvalOutcome, KernelCandidate, KernelTask, RunConfig, SchemaVersion};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendRequest {
    #[serde(default)]
    pub v: SchemaVersion,
    pub id: String,
    pub reference_source: String,
    pub candidate_source: String,
    pub seed: u64,
    pub trials: u32,
    pub warmups: u32,
    pub tolerance: f64,
}

impl BackendRequest {
    pub fn new(id: impl Into<String>, reference: &str, candidate: &str, cfg: &RunConfig) -> Self {
        Self {
            v: SchemaVersion,
            id: id.into(),
            reference_source: reference.to_string(),
            candidate_source: candidate.to_string(),
            seed: cfg.seed,
            trials: cfg.trials,
            warmups: cfg.warmups,
            tolerance: cfg.tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendResponse {
    #[serde(default)]
    pub v: SchemaVersion,
    pub id: String,
    pub compiled: bool,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub ref_times_ms: Vec<f64>,
    #[serde(default)]
    pub cand_times_ms: Vec<f64>,
}

impl BackendResponse {
    pub fn failed(id: impl Into<String>, compiled: bool, error: impl Into<String>) -> Self {
        Self {
            v: SchemaVersion,
            id: id.into(),
            compiled,
            correct: false,
            error: Some(error.into()),
            ref_times_ms: Vec::new(),
            cand_times_ms: Vec::new(),
        }
    }

    /// Checks the response against the request it answers.
    pub fn check(&self, req: &BackendRequest) -> Result<(), BackendError> {
        let fail = |m: String| Err(BackendError::Protocol(m));
        if self.id != req.id {
            return fail(format!("response id `{}` does not match request id `{}`", self.id, req.id));
        }
        if self.correct && !self.compiled {
            return fail("correct without compiled".into());
        }
        let timed = !self.ref_times_ms.is_empty() || !self.cand_times_ms.is_empty();
        if timed && !self.correct {
            return fail("timings reported for an incorrect candidate".into());
        }
        if self.correct {
            let n = req.trials as usize;
            if self.ref_times_ms.len() != n || self.cand_times_ms.len() != n {
                return fail(format!(
                    "expected {n} timings per side, got {} and {}",
                    self.ref_times_ms.len(),
                    self.cand_times_ms.len()
                ));
            }
            if self.ref_times_ms.iter().chain(&self.cand_times_ms).any(|t| !t.is_finite() || *t < 0.0) {
                return fail("negative or non-finite timing".into());
            }
            if timing::speedup(&self.ref_times_ms, &self.cand_times_ms).is_none_or(|s| s <= 0.0) {
                return fail("speedup undefined for the reported timings".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("backend protocol error: {0}")]
    Protocol(String),
    #[error("evaluation exceeded {secs} s")]
    Timeout { secs: u64 },
}

pub trait Backend: Send + Sync {
    fn execute(&self, req: &BackendRequest) -> Result<BackendResponse, BackendError>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn execute(&self, req: &BackendRequest) -> Result<BackendResponse, BackendError> {
        (**self).execute(req)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn execute(&self, req: &BackendRequest) -> Result<BackendResponse, BackendError> {
        (**self).execute(req)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("candidate `{candidate_id}` references unknown task `{task_id}`")]
    UnknownTaskReference { candidate_id: String, task_id: String },
    #[error("could not start worker pool: {0}")]
    Pool(String),
}

/// Evaluates one candidate against the shipped prompt example.
pub fn evaluate(
    backend: &dyn Backend,
    task: &KernelTask,
    cand: &KernelCandidate,
    cfg: &RunConfig,
) -> Result<EvalOutcome, EvalError> {
    evaluate_with_example(backend, task, cand, cfg, assets::EXAMPLE_NEW_ARCH)
}

pub fn evaluate_with_example(
    backend: &dyn Backend,
    task: &KernelTask,
    cand: &KernelCandidate,
    cfg: &RunConfig,
    example_kernel: &str,
) -> Result<EvalOutcome, EvalError> {
    let mut outcome = EvalOutcome { level: Some(task.level), ..EvalOutcome::not_run(&cand.candidate_id, &task.task_id) };

    if cfg.robust_check != CheckMode::Off {
        match robustcheck::analyze(&cand.source, example_kernel) {
            Ok(report) => {
                let gate = cfg.robust_check == CheckMode::Gate && report.deceptive;
                outcome.deceptive = Some(report);
                if gate {
                    outcome.error = Some("robust check: deceptive candidate not executed".into());
                    return Ok(outcome);
                }
            }
            Err(e) => {
                outcome.error = Some(format!("robust check: {e}"));
                return Ok(outcome);
            }
        }
    }

    let req = BackendRequest::new(&cand.candidate_id, &task.reference_source, &cand.source, cfg);
    let resp = backend.execute(&req)?;
    resp.check(&req)?;

    outcome.compiled = resp.compiled;
    outcome.correct = resp.correct;
    outcome.error = resp.error;
    if resp.correct {
        outcome.speedup = timing::speedup(&resp.ref_times_ms, &resp.cand_times_ms).unwrap_or(0.0);
        outcome.ref_times_ms = resp.ref_times_ms;
        outcome.cand_times_ms = resp.cand_times_ms;
    }
    Ok(outcome)
}

/// Evaluates every candidate on a pool of `jobs` workers. Output order
/// follows input order; a backend failure becomes that candidate's `error`.
pub fn evaluate_set(
    backend: &dyn Backend,
    tasks: &[KernelTask],
    candidates: &[KernelCandidate],
    cfg: &RunConfig,
    jobs: usize,
) -> Result<Vec<EvalOutcome>, EvalError> {
    use rayon::prelude::*;

    let by_id: HashMap<&str, &KernelTask> = tasks.iter().map(|t| (t.task_id.as_str(), t)).collect();
    let mut pairs = Vec::with_capacity(candidates.len());
    for c in candidates {
        let task = by_id.get(c.task_id.as_str()).ok_or_else(|| EvalError::UnknownTaskReference {
            candidate_id: c.candidate_id.clone(),
            task_id: c.task_id.clone(),
        })?;
        pairs.push((*task, c));
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| EvalError::Pool(e.to_string()))?;
    Ok(pool.install(|| {
        pairs
            .par_iter()
            .map(|(task, cand)| {
                evaluate(backend, task, cand, cfg).unwrap_or_else(|e| {
                    tracing::warn!(candidate = %cand.candidate_id, "evaluation failed: {e}");
                    EvalOutcome {
                        level: Some(task.level),
                        error: Some(e.to_string()),
                        ..EvalOutcome::not_run(&cand.candidate_id, &task.task_id)
                    }
                })
            })
            .collect()
    }))
}
