//! Layered settings: flags, then the `--config` TOML file, then `KFORGE_*`
//! environment variables, then built-in defaults.
//!
//! Config file keys (all optional):
//!
//! ```toml
//! backend = "mock"          # or "shim"
//! shim_cmd = "python3 shim.py"
//! device = "cuda:0"
//! jobs = 4
//! seed = 0
//! warmups = 3
//! trials = 5
//! tolerance = 0.01
//! threshold = 2.0
//! timeout_secs = 300
//! mock_script = "script.json"
//! log_level = "warn"
//! ```

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use kforge::types::{BackendKind, RunConfig};
use serde::Deserialize;

pub const ENV_BACKEND: &str = "KFORGE_BACKEND";
pub const ENV_SHIM_CMD: &str = "KFORGE_SHIM_CMD";
pub const ENV_DEVICE: &str = "KFORGE_DEVICE";
pub const ENV_JOBS: &str = "KFORGE_JOBS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendArg {
    Mock,
    Shim,
}

impl From<BackendArg> for BackendKind {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Mock => BackendKind::Mock,
            BackendArg::Shim => BackendKind::Shim,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogLevel {
    Error,
    #[default]
    Warn,
    Info,
    Debug,
    Trace,
}

impl LogLevel {
    pub fn directive(self) -> &'static str {
        match self {
            LogLevel::Error => "error",
            LogLevel::Warn => "warn",
            LogLevel::Info => "info",
            LogLevel::Debug => "debug",
            LogLevel::Trace => "trace",
        }
    }
}

/// One source of settings. `None` means "not given here".
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layer {
    pub backend: Option<BackendArg>,
    pub shim_cmd: Option<String>,
    pub device: Option<String>,
    pub jobs: Option<usize>,
    pub seed: Option<u64>,
    pub warmups: Option<u32>,
    pub trials: Option<u32>,
    pub tolerance: Option<f64>,
    pub threshold: Option<f64>,
    pub timeout_secs: Option<u64>,
    pub mock_script: Option<PathBuf>,
    pub log_level: Option<LogLevel>,
}

impl Layer {
    /// Fills every field missing from `self` with the one from `lower`.
    pub fn over(self, lower: Layer) -> Layer {
        Layer {
            backend: self.backend.or(lower.backend),
            shim_cmd: self.shim_cmd.or(lower.shim_cmd),
            device: self.device.or(lower.device),
            jobs: self.jobs.or(lower.jobs),
            seed: self.seed.or(lower.seed),
            warmups: self.warmups.or(lower.warmups),
            trials: self.trials.or(lower.trials),
            tolerance: self.tolerance.or(lower.tolerance),
            threshold: self.threshold.or(lower.threshold),
            timeout_secs: self.timeout_secs.or(lower.timeout_secs),
            mock_script: self.mock_script.or(lower.mock_script),
            log_level: self.log_level.or(lower.log_level),
        }
    }

    /// Reads the four `KFORGE_*` variables through `get`.
    pub fn from_env(get: &dyn Fn(&str) -> Option<String>) -> Result<Layer, String> {
        let backend = match get(ENV_BACKEND) {
            Some(v) => Some(
                BackendArg::from_str(v.trim(), true)
                    .map_err(|_| format!("{ENV_BACKEND}={v} is not a backend; use `mock` or `shim`"))?,
            ),
            None => None,
        };
        let jobs = match get(ENV_JOBS) {
            Some(v) => {
                Some(v.trim().parse().map_err(|_| format!("{ENV_JOBS}={v} is not a number; set a positive integer"))?)
            }
            None => None,
        };
        Ok(Layer {
            backend,
            shim_cmd: get(ENV_SHIM_CMD).filter(|s| !s.trim().is_empty()),
            device: get(ENV_DEVICE).filter(|s| !s.trim().is_empty()),
            jobs,
            ..Layer::default()
        })
    }

    /// Parses a TOML config file. Relative `mock_script` paths resolve
    /// against the file's directory.
    pub fn from_file(path: &Path) -> Result<Layer, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}; check the --config path", path.display()))?;
        let mut layer: Layer =
            toml::from_str(&text).map_err(|e| format!("invalid config {}: {}", path.display(), e.message()))?;
        if let (Some(p), Some(dir)) = (&layer.mock_script, path.parent()) {
            if p.is_relative() {
                layer.mock_script = Some(dir.join(p));
            }
        }
        Ok(layer)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub run: RunConfig,
    pub jobs: usize,
    pub shim_cmd: Option<String>,
    pub mock_script: Option<PathBuf>,
    pub log_level: LogLevel,
}

/// Merges the layers (highest precedence first) over the defaults and
/// validates the result.
pub fn resolve(flags: Layer, file: Option<Layer>, env: Layer) -> Result<Settings, String> {
    let l = flags.over(file.unwrap_or_default()).over(env);
    let d = RunConfig::default();
    let run = RunConfig {
        warmups: l.warmups.unwrap_or(d.warmups),
        trials: l.trials.unwrap_or(d.trials),
        tolerance: l.tolerance.unwrap_or(d.tolerance),
        seed: l.seed.unwrap_or(d.seed),
        speedup_threshold: l.threshold.unwrap_or(d.speedup_threshold),
        device_tag: l.device.unwrap_or(d.device_tag),
        backend: l.backend.map_or(d.backend, Into::into),
        timeout_secs: l.timeout_secs.unwrap_or(d.timeout_secs),
        robust_check: d.robust_check,
    };
    run.validate().map_err(|e| e.to_string())?;
    let jobs = l.jobs.unwrap_or(1);
    if jobs == 0 {
        return Err("jobs must be at least 1".into());
    }
    Ok(Settings { run, jobs, shim_cmd: l.shim_cmd, mock_script: l.mock_script, log_level: l.log_level.unwrap_or_default() })
}
