//! Evaluation, curation and reinforcement-learning harness for generated
//! CUDA kernels embedded in Python module files.

pub mod assets;
pub mod curation;
pub mod decompose;
pub mod evaluator;
pub mod host;
pub mod metrics;
pub mod num;
pub mod rlenv;
pub mod robustcheck;
pub mod timing;
pub mod types;

pub use decompose::{decompose, reassemble, TripartiteKernel};
pub use evaluator::{evaluate, evaluate_set, Backend, MockBackend, ShimBackend};
pub use robustcheck::{analyze, DeceptionCategory, DeceptionReport};
pub use types::{CheckMode, DifficultyClass, KernelCandidate, KernelTask, Level, RunConfig};

/// Evaluation outcome with `f64` timings.
pub type Outcome = types::EvalOutcome<f64>;
/// Per-level metrics row with `f64` percentages.
pub type Aggregate = metrics::LevelAggregate<f64>;
/// Reward and diagnostics with an `f64` reward.
pub type Reward = rlenv::RewardSignal<f64>;
