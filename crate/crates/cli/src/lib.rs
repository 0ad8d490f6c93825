//! `kforge` command line: subcommands over the `kforge` library.
//!
//! Exit codes: 0 success, 1 operational error, 2 usage or parse error,
//! 3 deceptive verdict from `check`.

pub mod config;

use std::collections::{BTreeMap, HashMap};
use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufRead, BufWriter, IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kforge::curation::{
    self, CommandClassifier, CurationPair, CurationRecord, DifficultyClassifier, HeuristicClassifier, MAX_ATTEMPTS,
};
use kforge::decompose::{self, TripartiteKernel};
use kforge::evaluator::{self, Backend, MockBackend, MockScript, ShimBackend};
use kforge::metrics::{self, Format, View};
use kforge::rlenv::{self, Environment, Schedule, Templates};
use kforge::robustcheck;
use kforge::types::{self, BackendKind, CheckMode, EvalOutcome, KernelCandidate, KernelTask, Level, SchemaVersion};
use serde::{Deserialize, Serialize};

use config::{BackendArg, Layer, LogLevel, Settings};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DECEPTIVE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "kforge", version, about = "Evaluate, curate and train on inline-CUDA kernel files")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML settings file; flags override it, it overrides KFORGE_* variables.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendArg>,
    /// Shell command starting one shim worker.
    #[arg(long, global = true, value_name = "CMD")]
    pub shim_cmd: Option<String>,
    /// Device tag; requests with the same tag never time concurrently.
    #[arg(long, global = true)]
    pub device: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub warmups: Option<u32>,
    #[arg(long, global = true)]
    pub trials: Option<u32>,
    /// Maximum absolute output difference accepted as correct.
    #[arg(long, global = true)]
    pub tolerance: Option<f64>,
    /// Per-candidate wall-clock budget in seconds.
    #[arg(long, global = true, value_name = "SECS")]
    pub timeout: Option<u64>,
    /// JSON map of scripted mock responses.
    #[arg(long, global = true, value_name = "PATH")]
    pub mock_script: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub log_level: Option<LogLevel>,
    /// Write machine output here instead of standard output.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split a kernel file into prefix, core and suffix (JSON).
    Decompose {
        file: PathBuf,
        /// Reject files with more than one device-source binding.
        #[arg(long)]
        strict: bool,
    },
    /// Rebuild a file from `decompose` output and a new core.
    Reassemble {
        /// JSON written by `decompose`.
        scaffold: PathBuf,
        /// File holding the replacement core.
        core: PathBuf,
    },
    /// Static deception check; exit 3 when deceptive.
    Check {
        file: PathBuf,
        /// Example answer compared against for mimicry.
        #[arg(long, value_name = "PATH")]
        example: Option<PathBuf>,
    },
    /// Evaluate candidates and write outcome JSONL.
    Eval {
        #[arg(long, value_name = "JSONL")]
        tasks: PathBuf,
        #[arg(long, value_name = "JSONL")]
        candidates: PathBuf,
        #[arg(long, value_enum, default_value_t = EvalCheck::Gate)]
        robust_check: EvalCheck,
    },
    /// Aggregate outcome JSONL into Exec and fast_p per level.
    Report {
        outcomes: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [1.0, 2.0])]
        p: Vec<f64>,
        #[arg(long, default_value = "markdown")]
        format: Format,
        #[arg(long, value_enum, default_value_t = ReportCheck::On)]
        robust_check: ReportCheck,
        /// Task set fixing N per level; missing tasks count as failures.
        #[arg(long, value_name = "JSONL")]
        tasks: Option<PathBuf>,
    },
    /// Filter reference/kernel pairs and export the retained ones.
    Curate {
        pairs: PathBuf,
        #[arg(long, value_enum, default_value_t = CurateMode::Threshold)]
        mode: CurateMode,
        /// Minimum speedup retained in threshold mode.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long, default_value_t = MAX_ATTEMPTS, value_parser = clap::value_parser!(u32).range(1..=MAX_ATTEMPTS as i64))]
        max_attempts: u32,
        /// Command reading a reference on stdin and printing a difficulty label.
        #[arg(long, value_name = "CMD")]
        classifier_cmd: Option<String>,
        /// Write the manifest here (default: standard error).
        #[arg(long, value_name = "PATH")]
        manifest: Option<PathBuf>,
        /// Write every curation record, retained or not.
        #[arg(long, value_name = "PATH")]
        records: Option<PathBuf>,
    },
    /// Serve the RL environment over standard streams.
    Env {
        #[arg(long, value_name = "JSONL")]
        tasks: PathBuf,
        /// Lines of {"task_id", "kernel_source"} pairing tasks with kernels for infilling.
        #[arg(long, value_name = "JSONL")]
        pairs: Option<PathBuf>,
        /// Directory with infill_prompt.txt and generate_prompt.txt.
        #[arg(long, value_name = "DIR")]
        templates: Option<PathBuf>,
        /// Add the capped speedup bonus to passing rewards.
        #[arg(long)]
        shaping: bool,
        #[arg(long, requires = "shaping")]
        shaping_cap: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalCheck {
    Gate,
    Annotate,
    Off,
}

impl From<EvalCheck> for CheckMode {
    fn from(c: EvalCheck) -> Self {
        match c {
            EvalCheck::Gate => CheckMode::Gate,
            EvalCheck::Annotate => CheckMode::Annotate,
            EvalCheck::Off => CheckMode::Off,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportCheck {
    On,
    Off,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CurateMode {
    /// One measurement per pair, keep speedup ≥ threshold.
    Threshold,
    /// Up to --max-attempts seeded runs, keep the first confirmed speedup > 1.
    Structural,
}

/// Task-to-kernel pairing consumed by `env --pairs`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedKernel {
    #[serde(default)]
    pub v: SchemaVersion,
    pub task_id: String,
    pub kernel_source: String,
}

enum Failure {
    Usage(String),
    Op(String),
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Op(e.to_string())
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// Runs with the process environment and standard streams.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdin = io::stdin();
    let mut input = stdin.lock();
    let stdout = io::stdout();
    let mut output = stdout.lock();
    let mut err = io::stderr();
    run_with(argv, &|k| std::env::var(k).ok(), &mut input, &mut output, &mut err)
}

/// Runs with an explicit environment lookup and streams.
pub fn run_with<I, T>(
    argv: I,
    env: &dyn Fn(&str) -> Option<String>,
    stdin: &mut dyn BufRead,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(stderr, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };
    match dispatch(cli, env, stdin, stdout, stderr) {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(stderr, "error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Op(msg)) => {
            let _ = writeln!(stderr, "error: {msg}");
            EXIT_FAILURE
        }
    }
}

fn settings(g: &GlobalArgs, threshold: Option<f64>, env: &dyn Fn(&str) -> Option<String>) -> Result<Settings, Failure> {
    let flags = Layer {
        backend: g.backend,
        shim_cmd: g.shim_cmd.clone(),
        device: g.device.clone(),
        jobs: g.jobs,
        seed: g.seed,
        warmups: g.warmups,
        trials: g.trials,
        tolerance: g.tolerance,
        threshold,
        timeout_secs: g.timeout,
        mock_script: g.mock_script.clone(),
        log_level: g.log_level,
    };
    let file = g.config.as_deref().map(Layer::from_file).transpose().map_err(Failure::Usage)?;
    let env = Layer::from_env(env).map_err(Failure::Usage)?;
    config::resolve(flags, file, env).map_err(|e| usage(format!("{e}; fix the flag, config file or KFORGE_* variable")))
}

fn init_logging(level: LogLevel) {
    let filter = tracing_subscriber::EnvFilter::new(level.directive());
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(io::stderr).with_ansi(io::stderr().is_terminal()).with_target(false).try_init();
}

fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}; check the path", path.display())))
}

fn read_records<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, Failure> {
    if !path.exists() {
        return Err(usage(format!("{} does not exist; check the path", path.display())));
    }
    types::read_jsonl_file(path)
        .map(|rows| rows.into_iter().map(|(_, r)| r).collect())
        .map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn load_tasks(path: &Path) -> Result<Vec<KernelTask>, Failure> {
    if !path.exists() {
        return Err(usage(format!("{} does not exist; check the --tasks path", path.display())));
    }
    types::load_task_set(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// Output sink: `--out` when given, else standard output.
fn emit(out: &Option<PathBuf>, stdout: &mut dyn Write, f: impl FnOnce(&mut dyn Write) -> Result<(), Failure>) -> Result<(), Failure> {
    match out {
        Some(path) => {
            let file = File::create(path).map_err(|e| format!("cannot create {}: {e}", path.display()))?;
            let mut w = BufWriter::new(file);
            f(&mut w)?;
            w.flush()?;
            Ok(())
        }
        None => {
            f(stdout)?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn json_line<T: Serialize>(w: &mut dyn Write, value: &T) -> Result<(), Failure> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

fn backend(s: &Settings) -> Result<Box<dyn Backend>, Failure> {
    match s.run.backend {
        BackendKind::Mock => {
            let script = match &s.mock_script {
                Some(p) => serde_json::from_str::<MockScript>(&read_text(p)?)
                    .map_err(|e| usage(format!("invalid mock script {}: {e}", p.display())))?,
                None => MockScript::default(),
            };
            Ok(Box::new(MockBackend::new(script)))
        }
        BackendKind::Shim => {
            let cmd = s
                .shim_cmd
                .clone()
                .ok_or_else(|| usage("the shim backend needs a worker command; pass --shim-cmd or set KFORGE_SHIM_CMD"))?;
            let b = ShimBackend::new(cmd, s.run.device_tag.clone(), Duration::from_secs(s.run.timeout_secs))?;
            Ok(Box::new(b))
        }
    }
}

fn dispatch(
    cli: Cli,
    env: &dyn Fn(&str) -> Option<String>,
    stdin: &mut dyn BufRead,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<i32, Failure> {
    let threshold = match &cli.command {
        Command::Curate { threshold, .. } => *threshold,
        _ => None,
    };
    let s = settings(&cli.global, threshold, env)?;
    init_logging(s.log_level);
    let out = &cli.global.out;

    match cli.command {
        Command::Decompose { file, strict } => {
            let src = read_text(&file)?;
            let parts = if strict { decompose::decompose_strict(&src) } else { decompose::decompose(&src) }
                .map_err(|e| usage(format!("{}: {e}", file.display())))?;
            emit(out, stdout, |w| json_line(w, &parts))?;
            Ok(EXIT_OK)
        }
        Command::Reassemble { scaffold, core } => {
            let t: TripartiteKernel = serde_json::from_str(&read_text(&scaffold)?)
                .map_err(|e| usage(format!("{} is not decompose output: {e}", scaffold.display())))?;
            let core = read_text(&core)?;
            let text = decompose::reassemble(&t, &core);
            emit(out, stdout, |w| Ok(w.write_all(text.as_bytes())?))?;
            Ok(EXIT_OK)
        }
        Command::Check { file, example } => {
            let src = read_text(&file)?;
            let example = match example {
                Some(p) => read_text(&p)?,
                None => kforge::assets::EXAMPLE_NEW_ARCH.to_string(),
            };
            let report = robustcheck::analyze(&src, &example).map_err(|e| usage(format!("{}: {e}", file.display())))?;
            emit(out, stdout, |w| json_line(w, &report))?;
            Ok(if report.deceptive { EXIT_DECEPTIVE } else { EXIT_OK })
        }
        Command::Eval { tasks, candidates, robust_check } => {
            let tasks = load_tasks(&tasks)?;
            let cands: Vec<KernelCandidate> = read_records(&candidates)?;
            let b = backend(&s)?;
            let cfg = types::RunConfig { robust_check: robust_check.into(), ..s.run };
            let outcomes = evaluator::evaluate_set(b.as_ref(), &tasks, &cands, &cfg, s.jobs).map_err(|e| match e {
                evaluator::EvalError::UnknownTaskReference { .. } => usage(format!("{e}; add the task to --tasks")),
                other => Failure::Op(other.to_string()),
            })?;
            emit(out, stdout, |w| Ok(types::write_jsonl(w, &outcomes)?))?;
            Ok(EXIT_OK)
        }
        Command::Report { outcomes, p, format, robust_check, tasks } => {
            let mut outs: Vec<EvalOutcome> = read_records(&outcomes)?;
            let mut n_by_level = BTreeMap::new();
            if let Some(path) = tasks {
                let tasks = load_tasks(&path)?;
                let levels: HashMap<&str, Level> = tasks.iter().map(|t| (t.task_id.as_str(), t.level)).collect();
                for t in &tasks {
                    *n_by_level.entry(t.level).or_insert(0usize) += 1;
                }
                for o in &mut outs {
                    if o.level.is_none() {
                        o.level = levels.get(o.task_id.as_str()).copied();
                    }
                }
            }
            let aggs = match robust_check {
                ReportCheck::On => metrics::aggregate(&outs, &p, &n_by_level, Some(View::Checked)),
                ReportCheck::Off => metrics::aggregate(&outs, &p, &n_by_level, Some(View::Unchecked)),
                ReportCheck::Both => metrics::aggregate_both(&outs, &p, &n_by_level),
            }
            .map_err(|e| usage(e.to_string()))?;
            let text = metrics::render_report(&aggs, &p, format).map_err(|e| usage(e.to_string()))?;
            emit(out, stdout, |w| {
                w.write_all(text.as_bytes())?;
                if !text.ends_with('\n') {
                    w.write_all(b"\n")?;
                }
                Ok(())
            })?;
            Ok(EXIT_OK)
        }
        Command::Curate { pairs, mode, threshold: _, max_attempts, classifier_cmd, manifest, records } => {
            let pairs: Vec<CurationPair> = read_records(&pairs)?;
            let b = backend(&s)?;
            let all: Vec<CurationRecord> = match mode {
                CurateMode::Threshold => {
                    let (kept, dropped) = curation::filter_by_threshold(b.as_ref(), &pairs, &s.run, s.jobs)?;
                    let mut all: Vec<_> = kept.into_iter().chain(dropped).collect();
                    let order: HashMap<&str, usize> =
                        pairs.iter().enumerate().map(|(i, p)| (p.pair_id.as_str(), i)).collect();
                    all.sort_by_key(|r| order[r.pair_id.as_str()]);
                    all
                }
                CurateMode::Structural => {
                    pairs.iter().map(|p| curation::validate_structural(b.as_ref(), p, &s.run, max_attempts)).collect()
                }
            };
            let classifier: Box<dyn DifficultyClassifier> = match classifier_cmd {
                Some(cmd) => Box::new(CommandClassifier { cmd, timeout: Duration::from_secs(s.run.timeout_secs) }),
                None => Box::new(HeuristicClassifier),
            };
            if let Some(path) = records {
                let mut w = BufWriter::new(File::create(&path).map_err(|e| format!("cannot create {}: {e}", path.display()))?);
                types::write_jsonl(&mut w, &all)?;
                w.flush()?;
            }
            let retained: Vec<CurationRecord> = all.into_iter().filter(|r| r.retained).collect();
            let mut m = None;
            emit(out, stdout, |w| {
                m = Some(curation::export_sft_to(&retained, w, classifier.as_ref())?);
                Ok(())
            })?;
            let m = serde_json::to_string(&m.expect("manifest written"))?;
            match manifest {
                Some(path) => std::fs::write(&path, format!("{m}\n")).map_err(|e| format!("cannot write {}: {e}", path.display()))?,
                None => writeln!(stderr, "{m}")?,
            }
            Ok(EXIT_OK)
        }
        Command::Env { tasks, pairs, templates, shaping, shaping_cap } => {
            let tasks = load_tasks(&tasks)?;
            let paired: BTreeMap<String, String> = match pairs {
                Some(p) => read_records::<PairedKernel>(&p)?.into_iter().map(|k| (k.task_id, k.kernel_source)).collect(),
                None => BTreeMap::new(),
            };
            let mut schedule = Schedule::from_tasks(&tasks, &paired).map_err(|e| usage(e.to_string()))?;
            if let Some(dir) = templates {
                schedule.templates = Templates::from_dir(&dir).map_err(|e| usage(e.to_string()))?;
            }
            let cap = shaping.then(|| shaping_cap.unwrap_or(rlenv::SHAPING_CAP));
            if cap.is_some_and(|c| !(c > 0.0 && c.is_finite())) {
                return Err(usage("--shaping-cap must be positive"));
            }
            let b = backend(&s)?;
            let environment =
                Environment { schedule, backend: b.as_ref(), cfg: s.run.clone(), seed: s.run.seed, shaping_cap: cap, jobs: s.jobs };
            rlenv::serve(&environment, stdin, stdout)?;
            Ok(EXIT_OK)
        }
    }
}
