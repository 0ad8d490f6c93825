use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, BackendError, BackendRequest, BackendResponse};
use crate::host;
use crate::types::SchemaVersion;

/// Hex SHA-256 of a candidate source; the key of mock script entries.
pub fn source_digest(source: &str) -> String {
    hex::encode(Sha256::digest(source.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub compiled: bool,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub ref_times_ms: Vec<f64>,
    #[serde(default)]
    pub cand_times_ms: Vec<f64>,
}

impl ScriptEntry {
    pub fn timed(ref_times_ms: Vec<f64>, cand_times_ms: Vec<f64>) -> Self {
        Self { compiled: true, correct: true, error: None, ref_times_ms, cand_times_ms }
    }

    pub fn compile_error(message: impl Into<String>) -> Self {
        Self { compiled: false, correct: false, error: Some(message.into()), ref_times_ms: vec![], cand_times_ms: vec![] }
    }

    pub fn incorrect(message: impl Into<String>) -> Self {
        Self { compiled: true, ..Self::compile_error(message) }
    }
}

/// Scripted responses keyed by `digest@seed`, `digest` or request id, looked
/// up in that order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MockScript(pub BTreeMap<String, ScriptEntry>);

impl MockScript {
    pub fn insert(&mut self, key: String, entry: ScriptEntry) {
        self.0.insert(key, entry);
    }

    fn lookup(&self, req: &BackendRequest, digest: &str) -> Option<&ScriptEntry> {
        self.0
            .get(&format!("{digest}@{}", req.seed))
            .or_else(|| self.0.get(digest))
            .or_else(|| self.0.get(&req.id))
    }
}

/// Deterministic in-process backend. Unscripted candidates that parse are
/// reported compiled and correct with pseudo-timings drawn from a generator
/// seeded by the candidate digest and the request seed.
#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    script: MockScript,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        Self { script }
    }

    pub fn respond(&self, req: &BackendRequest) -> BackendResponse {
        let digest = source_digest(&req.candidate_source);
        if let Some(e) = self.script.lookup(req, &digest) {
            return BackendResponse {
                v: SchemaVersion,
                id: req.id.clone(),
                compiled: e.compiled,
                correct: e.correct,
                error: e.error.clone(),
                ref_times_ms: e.ref_times_ms.clone(),
                cand_times_ms: e.cand_times_ms.clone(),
            };
        }
        if let Err(e) = host::parse_module(&req.candidate_source) {
            return BackendResponse::failed(&req.id, false, format!("compilation failed: {e}"));
        }
        let mut hasher = Sha256::new();
        hasher.update(digest.as_bytes());
        hasher.update(req.seed.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(hasher.finalize().into());
        let ref_base: f64 = rng.random_range(0.5..20.0);
        let factor: f64 = rng.random_range(0.25..4.0);
        let n = req.trials as usize;
        let mut jitter = |base: f64| (0..n).map(|_| base * rng.random_range(0.95..1.05)).collect::<Vec<f64>>();
        let ref_times_ms = jitter(ref_base);
        let cand_times_ms = jitter(ref_base / factor);
        BackendResponse {
            v: SchemaVersion,
            id: req.id.clone(),
            compiled: true,
            correct: true,
            error: None,
            ref_times_ms,
            cand_times_ms,
        }
    }
}

impl Backend for MockBackend {
    fn execute(&self, req: &BackendRequest) -> Result<BackendResponse, BackendError> {
        Ok(self.respond(req))
    }
}
