//! Two-stage curriculum environment: kernel infilling, then end-to-end
//! generation, with a compile-and-correct reward gate.

pub mod prompts;
mod protocol;

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use prompts::{build_prompt, PromptError, Templates};
pub use protocol::{serve, EnvRequest};

use crate::decompose::{self, TripartiteKernel};
use crate::evaluator::{self, Backend};
use crate::num::Scalar;
use crate::types::{DifficultyClass, EvalOutcome, KernelCandidate, KernelTask, RunConfig};

pub const INFILL_STEPS: u32 = 20;
pub const GENERATE_STEPS: u32 = 100;
pub const PROBLEMS_PER_STEP: usize = 64;
pub const RESPONSES_PER_PROBLEM: usize = 16;
pub const SHAPING_CAP: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    Infill,
    Generate,
}

/// Optimizer and decoding settings of the reference training run. Nothing
/// here is used by the environment; trainers can log them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerMetadata {
    pub learning_rate: f64,
    pub clip_epsilon: f64,
    pub kl_beta: f64,
    pub infill_pool_size: usize,
    pub generate_pool_size: usize,
    pub block_size: usize,
    pub decoding_threshold: f64,
    pub top_p: f64,
    pub top_k: usize,
    pub temperature: f64,
    pub max_new_tokens: usize,
    pub infill_steps: u32,
    pub generate_steps: u32,
    pub problems_per_step: usize,
    pub responses_per_problem: usize,
}

impl Default for TrainerMetadata {
    fn default() -> Self {
        Self {
            learning_rate: 1e-6,
            clip_epsilon: 0.2,
            kl_beta: 0.01,
            infill_pool_size: 992,
            generate_pool_size: 4000,
            block_size: 4,
            decoding_threshold: 0.9,
            top_p: 1.0,
            top_k: 0,
            temperature: 1.0,
            max_new_tokens: 4096,
            infill_steps: INFILL_STEPS,
            generate_steps: GENERATE_STEPS,
            problems_per_step: PROBLEMS_PER_STEP,
            responses_per_problem: RESPONSES_PER_PROBLEM,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolItem {
    pub task: KernelTask,
    /// Present for infill items: the task's paired kernel split around its core.
    pub scaffold: Option<TripartiteKernel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumStage {
    pub stage: Stage,
    /// Sorted by difficulty class, stable within a class.
    pub pool: Vec<PoolItem>,
    pub step_budget: u32,
}

impl CurriculumStage {
    pub fn new(stage: Stage, mut pool: Vec<PoolItem>, step_budget: u32) -> Self {
        pool.sort_by_key(|p| p.task.difficulty_class);
        Self { stage, pool, step_budget }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("step {step} is beyond the schedule budget of {total} steps")]
    BudgetExhausted { step: u32, total: u32 },
    #[error("stage {0:?} has an empty pool")]
    EmptyPool(Stage),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("expected {expected_p} × {expected_g} responses, got {got}")]
    DimensionMismatch { expected_p: usize, expected_g: usize, got: String },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Eval(#[from] evaluator::EvalError),
}

#[derive(Debug, Clone)]
pub struct Schedule {
    pub stages: Vec<CurriculumStage>,
    pub problems_per_step: usize,
    pub responses_per_problem: usize,
    pub templates: Templates,
}

impl Schedule {
    pub fn new(stages: Vec<CurriculumStage>, problems_per_step: usize, responses_per_problem: usize) -> Result<Self, EnvError> {
        if problems_per_step == 0 || responses_per_problem == 0 {
            return Err(EnvError::InvalidSchedule("P and G must be positive".into()));
        }
        if stages.windows(2).any(|w| w[0].stage > w[1].stage) {
            return Err(EnvError::InvalidSchedule("infill must precede generation".into()));
        }
        for s in &stages {
            if s.step_budget > 0 && s.pool.is_empty() {
                return Err(EnvError::EmptyPool(s.stage));
            }
            if s.stage == Stage::Infill && s.pool.iter().any(|p| p.scaffold.is_none()) {
                return Err(EnvError::InvalidSchedule("infill items need a scaffold".into()));
            }
        }
        Ok(Self { stages, problems_per_step, responses_per_problem, templates: Templates::default() })
    }

    /// Default two-stage schedule. Tasks whose paired kernel decomposes form
    /// the infill pool; every task is in the generation pool.
    pub fn from_tasks(tasks: &[KernelTask], paired_kernels: &BTreeMap<String, String>) -> Result<Self, EnvError> {
        let infill: Vec<PoolItem> = tasks
            .iter()
            .filter_map(|t| {
                let kernel = paired_kernels.get(&t.task_id)?;
                match decompose::decompose(kernel) {
                    Ok(s) => Some(PoolItem { task: t.clone(), scaffold: Some(s) }),
                    Err(e) => {
                        tracing::warn!(task = %t.task_id, "excluded from infill pool: {e}");
                        None
                    }
                }
            })
            .collect();
        let generate = tasks.iter().map(|t| PoolItem { task: t.clone(), scaffold: None }).collect();
        Self::new(
            vec![
                CurriculumStage::new(Stage::Infill, infill, INFILL_STEPS),
                CurriculumStage::new(Stage::Generate, generate, GENERATE_STEPS),
            ],
            PROBLEMS_PER_STEP,
            RESPONSES_PER_PROBLEM,
        )
    }

    pub fn total_steps(&self) -> u32 {
        self.stages.iter().map(|s| s.step_budget).sum()
    }

    /// Stage index and step within that stage.
    pub fn locate(&self, step: u32) -> Result<(usize, u32), EnvError> {
        let mut base = 0;
        for (i, s) in self.stages.iter().enumerate() {
            if step < base + s.step_budget {
                return Ok((i, step - base));
            }
            base += s.step_budget;
        }
        Err(EnvError::BudgetExhausted { step, total: self.total_steps() })
    }

    pub fn stage_at(&self, step: u32) -> Result<Stage, EnvError> {
        self.locate(step).map(|(i, _)| self.stages[i].stage)
    }

    /// Pool order for one epoch: difficulty buckets in curriculum order, each
    /// shuffled under `(seed, stage, epoch, bucket)`.
    pub fn epoch_order(&self, stage_index: usize, epoch: u64, seed: u64) -> Vec<usize> {
        let pool = &self.stages[stage_index].pool;
        let mut buckets: BTreeMap<DifficultyClass, Vec<usize>> = BTreeMap::new();
        for (i, item) in pool.iter().enumerate() {
            buckets.entry(item.task.difficulty_class).or_default().push(i);
        }
        let mut order = Vec::with_capacity(pool.len());
        for (class, mut idx) in buckets {
            let mut h = Sha256::new();
            h.update(seed.to_le_bytes());
            h.update((stage_index as u64).to_le_bytes());
            h.update(epoch.to_le_bytes());
            h.update([class as u8]);
            idx.shuffle(&mut ChaCha8Rng::from_seed(h.finalize().into()));
            order.extend(idx);
        }
        order
    }

    pub fn next_batch(&self, step: u32, seed: u64) -> Result<RolloutBatch, EnvError> {
        let (si, local) = self.locate(step)?;
        let stage = &self.stages[si];
        let len = stage.pool.len();
        let p = self.problems_per_step;
        let start = local as usize * p;
        let mut cached: Option<(usize, Vec<usize>)> = None;
        let mut problems = Vec::with_capacity(p);
        for pos in start..start + p {
            let epoch = pos / len;
            if cached.as_ref().is_none_or(|(e, _)| *e != epoch) {
                cached = Some((epoch, self.epoch_order(si, epoch as u64, seed)));
            }
            let index = cached.as_ref().expect("filled above").1[pos % len];
            let item = &stage.pool[index];
            let prompt = build_prompt(&item.task, stage.stage, &self.templates, item.scaffold.as_ref())?;
            problems.push(Problem { task_id: item.task.task_id.clone(), pool_index: index, prompt });
        }
        Ok(RolloutBatch { step, stage: stage.stage, problems, responses_per_problem: self.responses_per_problem })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub task_id: String,
    pub pool_index: usize,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutBatch {
    pub step: u32,
    pub stage: Stage,
    pub problems: Vec<Problem>,
    pub responses_per_problem: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardSignal<T = f64> {
    pub reward: T,
    pub compiled: bool,
    pub correct: bool,
    pub speedup: T,
    pub deceptive: bool,
    pub shaping_enabled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Gated reward: zero unless compiled, correct and not deceptive. With a
/// shaping cap `c`, a passing response earns `1 + min(speedup, c) / c`.
pub fn reward<T: Scalar>(compiled: bool, correct: bool, deceptive: bool, speedup: T, shaping_cap: Option<T>) -> T {
    if !(compiled && correct) || deceptive {
        return T::zero();
    }
    match shaping_cap {
        Some(cap) if cap > T::zero() => {
            let s = if speedup.is_finite() { speedup.max(T::zero()) } else { T::zero() };
            T::one() + s.min(cap) / cap
        }
        _ => T::one(),
    }
}

pub fn reward_signal<T: Scalar>(o: &EvalOutcome<T>, shaping_cap: Option<T>) -> RewardSignal<T> {
    let deceptive = o.is_deceptive();
    RewardSignal {
        reward: reward(o.compiled, o.correct, deceptive, o.speedup, shaping_cap),
        compiled: o.compiled,
        correct: o.correct,
        speedup: o.speedup,
        deceptive,
        shaping_enabled: shaping_cap.is_some(),
        error: o.error.clone(),
    }
}

/// Code inside the first fenced block, or the whole text when unfenced.
pub fn extract_code(response: &str) -> String {
    let Some(open) = response.find("```") else {
        return response.to_string();
    };
    let body_start = response[open..].find('\n').map_or(response.len(), |n| open + n + 1);
    let body_end = response[body_start..].find("```").map_or(response.len(), |n| body_start + n);
    response[body_start..body_end].to_string()
}

/// Source of the full candidate for an infill response: the response's own
/// core when it is a complete file, else the response itself, placed into the
/// scaffold.
pub fn infill_source(scaffold: &TripartiteKernel, response: &str) -> (String, String) {
    let code = extract_code(response);
    let mut core = match decompose::decompose(&code) {
        Ok(t) => t.core,
        Err(_) => code,
    };
    if !core.ends_with('\n') && !scaffold.core.is_empty() && scaffold.core.ends_with('\n') {
        core.push('\n');
    }
    (decompose::reassemble(scaffold, &core), core)
}

/// The environment: schedule plus evaluation settings.
pub struct Environment<'b> {
    pub schedule: Schedule,
    pub backend: &'b dyn Backend,
    pub cfg: RunConfig,
    pub seed: u64,
    pub shaping_cap: Option<f64>,
    pub jobs: usize,
}

impl Environment<'_> {
    pub fn next_batch(&self, step: u32) -> Result<RolloutBatch, EnvError> {
        self.schedule.next_batch(step, self.seed)
    }

    /// Rewards for a `P × G` response matrix answering `batch`.
    pub fn score(&self, batch: &RolloutBatch, responses: &[Vec<String>]) -> Result<Vec<Vec<RewardSignal>>, EnvError> {
        let (p, g) = (batch.problems.len(), batch.responses_per_problem);
        if responses.len() != p || responses.iter().any(|r| r.len() != g) {
            let shape: Vec<String> = responses.iter().map(|r| r.len().to_string()).collect();
            return Err(EnvError::DimensionMismatch {
                expected_p: p,
                expected_g: g,
                got: format!("{} rows [{}]", responses.len(), shape.join(", ")),
            });
        }
        let (si, _) = self.schedule.locate(batch.step)?;
        let pool = &self.schedule.stages[si].pool;

        let mut tasks: HashMap<&str, KernelTask> = HashMap::new();
        let mut cands = Vec::with_capacity(p * g);
        for (i, (problem, row)) in batch.problems.iter().zip(responses).enumerate() {
            let item = &pool[problem.pool_index];
            tasks.entry(item.task.task_id.as_str()).or_insert_with(|| item.task.clone());
            for (j, response) in row.iter().enumerate() {
                let id = format!("s{}-p{i}-g{j}", batch.step);
                let cand = match (batch.stage, &item.scaffold) {
                    (Stage::Infill, Some(scaffold)) => {
                        let (_, core) = infill_source(scaffold, response);
                        KernelCandidate::infilled(id, &item.task.task_id, scaffold, core)
                    }
                    _ => KernelCandidate::generated(id, &item.task.task_id, extract_code(response)),
                };
                cands.push(cand);
            }
        }
        let tasks: Vec<KernelTask> = tasks.into_values().collect();
        let outcomes = evaluator::evaluate_set(self.backend, &tasks, &cands, &self.cfg, self.jobs)?;
        let signals: Vec<RewardSignal> = outcomes.iter().map(|o| reward_signal(o, self.shaping_cap)).collect();
        Ok(signals.chunks(g).map(<[RewardSignal]>::to_vec).collect())
    }
}
