//! Shared domain records and their JSONL schemas.
//!
//! Every record carries `"v": 1`. Field order in the serialized form follows
//! declaration order, which keeps encoded output byte-stable.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::host;
use crate::num::Scalar;
use crate::robustcheck::DeceptionReport;
use crate::timing;

pub const SCHEMA_VERSION: u32 = 1;

/// The `"v"` field present on every record. Decoding rejects any other
/// version; a missing field is read as the current version.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct SchemaVersion;

impl Serialize for SchemaVersion {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u32(SCHEMA_VERSION)
    }
}

impl<'de> Deserialize<'de> for SchemaVersion {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = u32::deserialize(d)?;
        if v == SCHEMA_VERSION {
            Ok(SchemaVersion)
        } else {
            Err(serde::de::Error::custom(format!("unsupported schema version {v}, expected {SCHEMA_VERSION}")))
        }
    }
}

/// Benchmark tier: single kernels, fusion patterns, whole architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Level {
    L1,
    L2,
    L3,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::L1, Level::L2, Level::L3];

    pub fn label(self) -> &'static str {
        match self {
            Level::L1 => "Level 1",
            Level::L2 => "Level 2",
            Level::L3 => "Level 3",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::L1 => "L1",
            Level::L2 => "L2",
            Level::L3 => "L3",
        })
    }
}

/// Curriculum difficulty bucket. Declaration order is the curriculum order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DifficultyClass {
    SingleOp,
    Fusion,
    Architecture,
    #[default]
    Unclassified,
}

impl DifficultyClass {
    pub const ALL: [DifficultyClass; 4] = [
        DifficultyClass::SingleOp,
        DifficultyClass::Fusion,
        DifficultyClass::Architecture,
        DifficultyClass::Unclassified,
    ];

    /// Lenient label parsing used for external classifier output.
    pub fn parse_label(label: &str) -> Option<Self> {
        let norm: String = label
            .trim()
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match norm.as_str() {
            "singleop" | "single" | "operator" | "op" => Some(Self::SingleOp),
            "fusion" | "fused" => Some(Self::Fusion),
            "architecture" | "arch" | "model" => Some(Self::Architecture),
            "unclassified" => Some(Self::Unclassified),
            _ => None,
        }
    }
}

impl fmt::Display for DifficultyClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelTask {
    #[serde(default)]
    pub v: SchemaVersion,
    pub task_id: String,
    pub level: Level,
    #[serde(default)]
    pub difficulty_class: DifficultyClass,
    /// Module source defining `Model`, `get_inputs` and `get_init_inputs`.
    pub reference_source: String,
    #[serde(default)]
    pub origin: String,
}

impl KernelTask {
    pub fn new(task_id: impl Into<String>, level: Level, reference_source: impl Into<String>) -> Self {
        Self {
            v: SchemaVersion,
            task_id: task_id.into(),
            level,
            difficulty_class: DifficultyClass::Unclassified,
            reference_source: reference_source.into(),
            origin: String::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CandidateMode {
    #[default]
    Generated,
    InfilledCore,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelCandidate {
    #[serde(default)]
    pub v: SchemaVersion,
    pub candidate_id: String,
    pub task_id: String,
    /// Complete module source expected to define `ModelNew`.
    pub source: String,
    #[serde(default)]
    pub mode: CandidateMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub core_only: Option<String>,
}

impl KernelCandidate {
    pub fn generated(candidate_id: impl Into<String>, task_id: impl Into<String>, source: impl Into<String>) -> Self {
        Self {
            v: SchemaVersion,
            candidate_id: candidate_id.into(),
            task_id: task_id.into(),
            source: source.into(),
            mode: CandidateMode::Generated,
            core_only: None,
        }
    }

    /// A candidate whose full source is the scaffold with `core` in the hole.
    pub fn infilled(
        candidate_id: impl Into<String>,
        task_id: impl Into<String>,
        scaffold: &crate::decompose::TripartiteKernel,
        core: impl Into<String>,
    ) -> Self {
        let core = core.into();
        Self {
            v: SchemaVersion,
            candidate_id: candidate_id.into(),
            task_id: task_id.into(),
            source: crate::decompose::reassemble(scaffold, &core),
            mode: CandidateMode::InfilledCore,
            core_only: Some(core),
        }
    }
}

/// Result of evaluating one candidate against its task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome<T = f64> {
    #[serde(default)]
    pub v: SchemaVersion,
    pub candidate_id: String,
    #[serde(default)]
    pub task_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<Level>,
    pub compiled: bool,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deceptive: Option<DeceptionReport>,
    pub ref_times_ms: Vec<T>,
    pub cand_times_ms: Vec<T>,
    pub speedup: T,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl<T: Scalar> EvalOutcome<T> {
    /// An outcome with nothing run: not compiled, not correct, no timings.
    pub fn not_run(candidate_id: impl Into<String>, task_id: impl Into<String>) -> Self {
        Self {
            v: SchemaVersion,
            candidate_id: candidate_id.into(),
            task_id: task_id.into(),
            level: None,
            compiled: false,
            correct: false,
            deceptive: None,
            ref_times_ms: Vec::new(),
            cand_times_ms: Vec::new(),
            speedup: T::zero(),
            error: None,
        }
    }

    /// True when the attached robust-check verdict flags the candidate.
    pub fn is_deceptive(&self) -> bool {
        self.deceptive.as_ref().is_some_and(|d| d.deceptive)
    }

    /// Correctness as counted by metrics: with the robust check applied a
    /// deceptive candidate is never correct.
    pub fn counts_correct(&self, robust_check: bool) -> bool {
        self.correct && !(robust_check && self.is_deceptive())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackendKind {
    #[default]
    Mock,
    Shim,
}

/// How the robust check participates in evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum CheckMode {
    /// Deceptive candidates are failed without execution.
    #[default]
    Gate,
    /// Every candidate executes; the verdict is attached for later filtering.
    Annotate,
    /// No static check.
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub warmups: u32,
    pub trials: u32,
    /// Maximum absolute output difference accepted as correct.
    pub tolerance: f64,
    pub seed: u64,
    /// Minimum verified speedup retained by the curation filter.
    pub speedup_threshold: f64,
    pub device_tag: String,
    pub backend: BackendKind,
    /// Wall-clock budget per candidate.
    pub timeout_secs: u64,
    pub robust_check: CheckMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            warmups: 3,
            trials: 5,
            tolerance: 1e-2,
            seed: 0,
            speedup_threshold: 2.0,
            device_tag: "cuda:0".to_string(),
            backend: BackendKind::Mock,
            timeout_secs: 300,
            robust_check: CheckMode::Gate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("trials must be at least 1")]
    ZeroTrials,
    #[error("tolerance must be positive and finite, got {0}")]
    Tolerance(f64),
    #[error("speedup threshold must be positive and finite, got {0}")]
    Threshold(f64),
    #[error("timeout must be at least one second")]
    ZeroTimeout,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.trials == 0 {
            return Err(ConfigError::ZeroTrials);
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(ConfigError::Tolerance(self.tolerance));
        }
        if !(self.speedup_threshold > 0.0 && self.speedup_threshold.is_finite()) {
            return Err(ConfigError::Threshold(self.speedup_threshold));
        }
        if self.timeout_secs == 0 {
            return Err(ConfigError::ZeroTimeout);
        }
        Ok(())
    }
}

// ----------------------------------------------------------------------- JSONL

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed record: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: missing field `{field}`")]
    MissingField { line: usize, field: String },
    #[error("line {line}: duplicate id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: invalid reference source for `{id}`: {message}")]
    InvalidReference { line: usize, id: String, message: String },
}

/// Decodes one record per non-blank line. Returns `(line_number, record)`.
pub fn read_jsonl<T: DeserializeOwned, R: BufRead>(reader: R) -> Result<Vec<(usize, T)>, LoadError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| classify_json_error(lineno, e))?;
        out.push((lineno, rec));
    }
    Ok(out)
}

fn classify_json_error(line: usize, e: serde_json::Error) -> LoadError {
    let msg = e.to_string();
    if let Some(rest) = msg.strip_prefix("missing field `") {
        if let Some(field) = rest.split('`').next() {
            return LoadError::MissingField { line, field: field.to_string() };
        }
    }
    LoadError::Parse { line, message: msg }
}

pub fn write_jsonl<T: Serialize, W: Write>(mut w: W, records: &[T]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_jsonl_file<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>, LoadError> {
    let f = std::fs::File::open(path)?;
    read_jsonl(BufReader::new(f))
}

/// Loads a task set, enforcing unique ids and parseable reference sources.
pub fn load_task_set(path: &Path) -> Result<Vec<KernelTask>, LoadError> {
    let f = std::fs::File::open(path)?;
    parse_task_set(BufReader::new(f))
}

pub fn parse_task_set<R: BufRead>(reader: R) -> Result<Vec<KernelTask>, LoadError> {
    let records: Vec<(usize, KernelTask)> = read_jsonl(reader)?;
    let mut seen = HashSet::new();
    let mut tasks = Vec::with_capacity(records.len());
    for (line, task) in records {
        if !seen.insert(task.task_id.clone()) {
            return Err(LoadError::DuplicateId { line, id: task.task_id });
        }
        if task.reference_source.trim().is_empty() {
            return Err(LoadError::InvalidReference {
                line,
                id: task.task_id,
                message: "empty reference source".into(),
            });
        }
        if let Err(e) = host::parse_module(&task.reference_source) {
            return Err(LoadError::InvalidReference { line, id: task.task_id, message: e.to_string() });
        }
        tasks.push(task);
    }
    Ok(tasks)
}

// ----------------------------------------------------------------- validation

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OutcomeViolation {
    /// correct ⇒ compiled
    CorrectWithoutCompile,
    /// compiled ∧ correct ∧ timings present, but speedup not positive
    SpeedupUndefined,
    /// speedup nonzero although it is undefined
    SpeedupWithoutTiming,
    /// speedup differs from median(ref) / median(cand)
    SpeedupInconsistent,
    /// only one of the timing lists is populated, or they differ in length
    TimingLengthMismatch,
    /// timings reported for a candidate that did not compile and pass
    TimingWithoutSuccess,
    /// negative or non-finite timing or speedup value
    InvalidNumber,
    /// the attached robust-check report is internally inconsistent
    InconsistentReport(String),
}

impl fmt::Display for OutcomeViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::CorrectWithoutCompile => f.write_str("correct ⇒ compiled"),
            Self::SpeedupUndefined => f.write_str("speedup defined"),
            Self::SpeedupWithoutTiming => f.write_str("speedup = 0 when undefined"),
            Self::SpeedupInconsistent => f.write_str("speedup = median(ref) / median(cand)"),
            Self::TimingLengthMismatch => f.write_str("timing lists have equal length"),
            Self::TimingWithoutSuccess => f.write_str("timings only when compiled and correct"),
            Self::InvalidNumber => f.write_str("timings and speedup are finite and nonnegative"),
            Self::InconsistentReport(m) => write!(f, "deception report: {m}"),
        }
    }
}

/// Lists every violated outcome invariant; `Ok` when there are none.
pub fn validate_outcome<T: Scalar>(o: &EvalOutcome<T>) -> Result<(), Vec<OutcomeViolation>> {
    let mut v = Vec::new();
    if o.correct && !o.compiled {
        v.push(OutcomeViolation::CorrectWithoutCompile);
    }
    let numbers_ok = o
        .ref_times_ms
        .iter()
        .chain(&o.cand_times_ms)
        .chain(std::iter::once(&o.speedup))
        .all(|x| x.is_finite() && *x >= T::zero());
    if !numbers_ok {
        v.push(OutcomeViolation::InvalidNumber);
    }
    if o.ref_times_ms.len() != o.cand_times_ms.len() {
        v.push(OutcomeViolation::TimingLengthMismatch);
    }
    let timed = !o.ref_times_ms.is_empty() && !o.cand_times_ms.is_empty();
    if timed && !(o.compiled && o.correct) {
        v.push(OutcomeViolation::TimingWithoutSuccess);
    }
    let defined = o.compiled && o.correct && timed;
    if defined {
        if o.speedup.is_nan() || o.speedup <= T::zero() {
            v.push(OutcomeViolation::SpeedupUndefined);
        } else if let Some(expected) = timing::speedup(&o.ref_times_ms, &o.cand_times_ms) {
            let tol = T::from_f64_lossy(1e-9) * expected.max(T::one());
            if (expected - o.speedup).abs() > tol {
                v.push(OutcomeViolation::SpeedupInconsistent);
            }
        } else {
            v.push(OutcomeViolation::SpeedupUndefined);
        }
    } else if o.speedup != T::zero() {
        v.push(OutcomeViolation::SpeedupWithoutTiming);
    }
    if let Some(report) = &o.deceptive {
        if let Err(m) = report.check_invariants() {
            v.push(OutcomeViolation::InconsistentReport(m));
        }
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn good() -> EvalOutcome {
        EvalOutcome {
            compiled: true,
            correct: true,
            ref_times_ms: vec![10.0, 10.0, 10.0, 12.0, 10.0],
            cand_times_ms: vec![5.0, 5.0, 5.0, 5.0, 7.0],
            speedup: 2.0,
            ..EvalOutcome::not_run("c", "t")
        }
    }

    #[test]
    fn consistent_outcome_is_ok() {
        assert_eq!(validate_outcome(&good()), Ok(()));
        assert_eq!(validate_outcome(&EvalOutcome::<f64>::not_run("c", "t")), Ok(()));
    }

    #[test]
    fn correct_without_compile() {
        let o = EvalOutcome { compiled: false, ..good() };
        let v = validate_outcome(&o).unwrap_err();
        assert!(v.contains(&OutcomeViolation::CorrectWithoutCompile));
        assert_eq!(v[0].to_string(), "correct ⇒ compiled");
    }

    #[test]
    fn zero_speedup_with_timings() {
        let o = EvalOutcome { speedup: 0.0, ..good() };
        let v = validate_outcome(&o).unwrap_err();
        assert_eq!(v, vec![OutcomeViolation::SpeedupUndefined]);
        assert_eq!(v[0].to_string(), "speedup defined");
    }

    #[test]
    fn other_violations() {
        let o = EvalOutcome { speedup: 3.0, ..good() };
        assert_eq!(validate_outcome(&o).unwrap_err(), vec![OutcomeViolation::SpeedupInconsistent]);
        let o = EvalOutcome { speedup: 1.0, ..EvalOutcome::not_run("c", "t") };
        assert_eq!(validate_outcome(&o).unwrap_err(), vec![OutcomeViolation::SpeedupWithoutTiming]);
        let o = EvalOutcome { cand_times_ms: vec![5.0], ..good() };
        assert!(validate_outcome(&o).unwrap_err().contains(&OutcomeViolation::TimingLengthMismatch));
        let o = EvalOutcome { correct: false, speedup: 0.0, ..good() };
        assert_eq!(validate_outcome(&o).unwrap_err(), vec![OutcomeViolation::TimingWithoutSuccess]);
        let o = EvalOutcome { ref_times_ms: vec![-1.0; 5], ..good() };
        assert!(validate_outcome(&o).unwrap_err().contains(&OutcomeViolation::InvalidNumber));
    }

    #[test]
    fn schema_version_round_trip() {
        let o = good();
        let s = serde_json::to_string(&o).unwrap();
        assert!(s.starts_with("{\"v\":1,\"candidate_id\":\"c\""));
        let back: EvalOutcome = serde_json::from_str(&s).unwrap();
        assert_eq!(back, o);
        let bad = s.replacen("\"v\":1", "\"v\":2", 1);
        assert!(serde_json::from_str::<EvalOutcome>(&bad).is_err());
    }

    const ADD_REF: &str = include_str!("../assets/example_reference.py");

    fn task_line(id: &str) -> String {
        serde_json::to_string(&KernelTask::new(id, Level::L1, ADD_REF)).unwrap()
    }

    #[test]
    fn loads_well_formed_task_set() {
        let data = format!("{}\n\n{}\n", task_line("a"), task_line("b"));
        let tasks = parse_task_set(data.as_bytes()).unwrap();
        assert_eq!(tasks.len(), 2);
        assert_eq!(tasks[0].level, Level::L1);
    }

    #[test]
    fn elementwise_add_reference_is_one_l1_task() {
        let line = format!(
            "{{\"v\":1,\"task_id\":\"1_elementwise_add\",\"level\":\"L1\",\"reference_source\":{}}}",
            serde_json::to_string(ADD_REF).unwrap()
        );
        let tasks = parse_task_set(line.as_bytes()).unwrap();
        assert_eq!(tasks.len(), 1);
        assert_eq!(tasks[0].level, Level::L1);
        assert_eq!(tasks[0].difficulty_class, DifficultyClass::Unclassified);
    }

    #[test]
    fn task_set_errors() {
        let dup = format!("{}\n{}\n", task_line("a"), task_line("a"));
        assert!(matches!(parse_task_set(dup.as_bytes()), Err(LoadError::DuplicateId { line: 2, .. })));
        let bad = format!("{}\n{{not json\n", task_line("a"));
        assert!(matches!(parse_task_set(bad.as_bytes()), Err(LoadError::Parse { line: 2, .. })));
        let missing = "{\"v\":1,\"task_id\":\"x\",\"level\":\"L1\"}\n";
        match parse_task_set(missing.as_bytes()) {
            Err(LoadError::MissingField { line: 1, field }) => assert_eq!(field, "reference_source"),
            other => panic!("{other:?}"),
        }
        let unparsable = "{\"task_id\":\"x\",\"level\":\"L2\",\"reference_source\":\"def f(:\\n\"}\n";
        assert!(matches!(parse_task_set(unparsable.as_bytes()), Err(LoadError::InvalidReference { .. })));
    }

    #[test]
    fn run_config_bounds() {
        assert_eq!(RunConfig::default().validate(), Ok(()));
        let c = RunConfig { trials: 0, ..Default::default() };
        assert_eq!(c.validate(), Err(ConfigError::ZeroTrials));
        let c = RunConfig { tolerance: 0.0, ..Default::default() };
        assert!(c.validate().is_err());
        let c = RunConfig { speedup_threshold: -2.0, ..Default::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn difficulty_labels() {
        assert_eq!(DifficultyClass::parse_label(" single_op\n"), Some(DifficultyClass::SingleOp));
        assert_eq!(DifficultyClass::parse_label("Fusion"), Some(DifficultyClass::Fusion));
        assert_eq!(DifficultyClass::parse_label("ARCHITECTURE"), Some(DifficultyClass::Architecture));
        assert_eq!(DifficultyClass::parse_label("???"), None);
    }
}
