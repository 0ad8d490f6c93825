use std::collections::HashMap;
use std::path::{Path, PathBuf};

use kforge::assets;
use kforge::curation::{CurationPair, Manifest, SftRecord};
use kforge::decompose::TripartiteKernel;
use kforge::evaluator::{source_digest, MockScript, ScriptEntry};
use kforge::robustcheck::{DeceptionCategory, DeceptionReport};
use kforge::types::{read_jsonl, validate_outcome, write_jsonl, EvalOutcome, KernelCandidate, KernelTask, Level, SchemaVersion};
use kforge_cli::{run_with, PairedKernel, EXIT_DECEPTIVE, EXIT_OK, EXIT_USAGE};
use serde_json::Value;

struct Run {
    code: i32,
    out: String,
    err: String,
}

fn run_env(args: &[&str], env: &[(&str, &str)], stdin: &str) -> Run {
    let vars: HashMap<String, String> = env.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    let mut input = stdin.as_bytes();
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let mut argv = vec!["kforge"];
    argv.extend_from_slice(args);
    let code = run_with(argv, &|k| vars.get(k).cloned(), &mut input, &mut out, &mut err);
    Run { code, out: String::from_utf8(out).unwrap(), err: String::from_utf8(err).unwrap() }
}

fn run(args: &[&str]) -> Run {
    run_env(args, &[], "")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_records<T: serde::Serialize>(dir: &Path, name: &str, rows: &[T]) -> PathBuf {
    let path = dir.join(name);
    write_jsonl(std::fs::File::create(&path).unwrap(), rows).unwrap();
    path
}

/// Tasks t0..t5 over three levels with candidates: clean answers, the three
/// deceptive cases and one unparsable file.
fn eval_fixture(dir: &Path) -> (PathBuf, PathBuf, usize) {
    let levels = [Level::L1, Level::L2, Level::L3];
    let tasks: Vec<KernelTask> =
        (0..6).map(|i| KernelTask::new(format!("t{i}"), levels[i % 3], assets::EXAMPLE_REFERENCE)).collect();
    let sources = [
        assets::EXAMPLE_NEW_ARCH.to_string(),
        std::fs::read_to_string(fixture("deceptive_case1.py")).unwrap(),
        std::fs::read_to_string(fixture("deceptive_case2.py")).unwrap(),
        std::fs::read_to_string(fixture("deceptive_case3.py")).unwrap(),
        format!("{}# second\n", assets::EXAMPLE_NEW_ARCH),
        "class ModelNew(:\n".to_string(),
    ];
    let cands: Vec<KernelCandidate> = sources
        .iter()
        .enumerate()
        .map(|(i, src)| KernelCandidate::generated(format!("c{i}"), format!("t{i}"), src.clone()))
        .collect();
    (write_records(dir, "tasks.jsonl", &tasks), write_records(dir, "cands.jsonl", &cands), cands.len())
}

#[test]
fn help_and_usage_errors() {
    let r = run(&["--help"]);
    assert_eq!(r.code, EXIT_OK);
    assert!(r.out.contains("Usage"));
    let r = run(&["frobnicate"]);
    assert_eq!(r.code, EXIT_USAGE);
    assert!(r.err.contains("--help"), "{}", r.err);
    let r = run(&["check"]);
    assert_eq!(r.code, EXIT_USAGE);
    let r = run(&["curate", "pairs.jsonl", "--max-attempts", "6"]);
    assert_eq!(r.code, EXIT_USAGE);
}

#[test]
fn check_exit_codes() {
    let r = run(&["check", s(&fixture("deceptive_case1.py"))]);
    assert_eq!(r.code, EXIT_DECEPTIVE);
    let report: DeceptionReport = serde_json::from_str(&r.out).unwrap();
    assert_eq!(report.category, Some(DeceptionCategory::C1ExampleMimicry));

    let dir = tempfile::tempdir().unwrap();
    let clean = dir.path().join("clean.py");
    std::fs::write(&clean, assets::EXAMPLE_NEW_ARCH).unwrap();
    assert_eq!(run(&["check", s(&clean)]).code, EXIT_OK);

    let broken = dir.path().join("broken.py");
    std::fs::write(&broken, "class ModelNew(:\n").unwrap();
    let r = run(&["check", s(&broken)]);
    assert_eq!(r.code, EXIT_USAGE);
    assert!(r.err.starts_with("error: "));
    assert_eq!(run(&["check", s(&dir.path().join("missing.py"))]).code, EXIT_USAGE);
}

#[test]
fn decompose_then_reassemble() {
    let dir = tempfile::tempdir().unwrap();
    let src = fixture("corpus/softmax_crlf.py");
    let parts = dir.path().join("parts.json");
    assert_eq!(run(&["decompose", s(&src), "--out", s(&parts)]).code, EXIT_OK);
    let t: TripartiteKernel = serde_json::from_str(&std::fs::read_to_string(&parts).unwrap()).unwrap();
    let core = dir.path().join("core.txt");
    std::fs::write(&core, &t.core).unwrap();
    let r = run(&["reassemble", s(&parts), s(&core)]);
    assert_eq!(r.code, EXIT_OK);
    assert_eq!(r.out, std::fs::read_to_string(&src).unwrap());

    let ambiguous = fixture("corpus/two_sources_list.py");
    assert_eq!(run(&["decompose", s(&ambiguous)]).code, EXIT_OK);
    assert_eq!(run(&["decompose", s(&ambiguous), "--strict"]).code, EXIT_USAGE);
}

#[test]
fn eval_writes_one_valid_outcome_per_candidate() {
    let dir = tempfile::tempdir().unwrap();
    let (tasks, cands, n) = eval_fixture(dir.path());
    for mode in ["gate", "annotate", "off"] {
        let r = run(&["eval", "--tasks", s(&tasks), "--candidates", s(&cands), "--robust-check", mode, "--jobs", "3"]);
        assert_eq!(r.code, EXIT_OK, "{}", r.err);
        let outs: Vec<(usize, EvalOutcome)> = read_jsonl(r.out.as_bytes()).unwrap();
        assert_eq!(outs.len(), n);
        assert!(outs.iter().all(|(_, o)| validate_outcome(o).is_ok()));
        let deceptive = outs.iter().filter(|(_, o)| o.is_deceptive()).count();
        assert_eq!(deceptive, if mode == "off" { 0 } else { 3 }, "{mode}");
    }
}

#[test]
fn eval_unknown_task_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let (_, cands, _) = eval_fixture(dir.path());
    let tasks = write_records(dir.path(), "few.jsonl", &[KernelTask::new("t0", Level::L1, assets::EXAMPLE_REFERENCE)]);
    let r = run(&["eval", "--tasks", s(&tasks), "--candidates", s(&cands)]);
    assert_eq!(r.code, EXIT_USAGE);
    assert!(r.err.contains("unknown task"), "{}", r.err);
}

#[test]
fn mock_script_drives_outcomes() {
    let dir = tempfile::tempdir().unwrap();
    let (tasks, cands, _) = eval_fixture(dir.path());
    let mut script = MockScript::default();
    script.insert("c0".into(), ScriptEntry::timed(vec![6.0; 5], vec![2.0; 5]));
    script.insert(source_digest(&format!("{}# second\n", assets::EXAMPLE_NEW_ARCH)), ScriptEntry::compile_error("nvcc"));
    let path = dir.path().join("script.json");
    std::fs::write(&path, serde_json::to_string(&script).unwrap()).unwrap();
    let r = run(&["eval", "--tasks", s(&tasks), "--candidates", s(&cands), "--mock-script", s(&path)]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    let outs: Vec<(usize, EvalOutcome)> = read_jsonl(r.out.as_bytes()).unwrap();
    assert_eq!(outs[0].1.speedup, 3.0);
    assert!(!outs[4].1.compiled);

    std::fs::write(&path, "{not json").unwrap();
    let r = run(&["eval", "--tasks", s(&tasks), "--candidates", s(&cands), "--mock-script", s(&path)]);
    assert_eq!(r.code, EXIT_USAGE);
}

#[test]
fn report_formats_and_views() {
    let dir = tempfile::tempdir().unwrap();
    let (tasks, cands, _) = eval_fixture(dir.path());
    let outcomes = dir.path().join("outcomes.jsonl");
    let r = run(&["eval", "--tasks", s(&tasks), "--candidates", s(&cands), "--robust-check", "annotate", "--out", s(&outcomes)]);
    assert_eq!(r.code, EXIT_OK);
    assert!(r.out.is_empty());

    let md = run(&["report", s(&outcomes), "--robust-check", "both"]);
    assert_eq!(md.code, EXIT_OK, "{}", md.err);
    assert!(md.out.contains("w/o robust check") && md.out.contains("w/ robust check"));
    assert!(md.out.starts_with("<!-- speedup = median"));

    let csv = run(&["report", s(&outcomes), "--format", "csv", "--p", "1,2,3"]);
    assert!(csv.out.starts_with("level,view,n,exec,fast_1,fast_2,fast_3\n"), "{}", csv.out);

    let json = run(&["report", s(&outcomes), "--format", "json", "--robust-check", "off"]);
    let v: Value = serde_json::from_str(&json.out).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 3);

    // Without levels in the outcomes, N and levels come from --tasks.
    let bare: Vec<EvalOutcome> = (0..2).map(|i| EvalOutcome::not_run(format!("c{i}"), format!("t{i}"))).collect();
    let bare_path = write_records(dir.path(), "bare.jsonl", &bare);
    assert_eq!(run(&["report", s(&bare_path)]).code, EXIT_USAGE);
    let r = run(&["report", s(&bare_path), "--tasks", s(&tasks), "--format", "csv"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    assert!(r.out.contains("L1,checked,2,0.0"), "{}", r.out);
    assert_eq!(run(&["report", s(&bare_path), "--p", "0"]).code, EXIT_USAGE);
}

#[test]
fn curate_threshold_and_structural() {
    let dir = tempfile::tempdir().unwrap();
    let speedups = [2.0, 1.5, 3.0, 0.5];
    let pairs: Vec<CurationPair> = (0..4)
        .map(|i| CurationPair {
            v: SchemaVersion,
            pair_id: format!("p{i}"),
            reference_source: assets::EXAMPLE_REFERENCE.into(),
            kernel_source: format!("{}# {i}\n", assets::EXAMPLE_NEW_ARCH),
        })
        .collect();
    let mut script = MockScript::default();
    for (p, s) in pairs.iter().zip(speedups) {
        script.insert(source_digest(&p.kernel_source), ScriptEntry::timed(vec![s; 5], vec![1.0; 5]));
    }
    let script_path = dir.path().join("script.json");
    std::fs::write(&script_path, serde_json::to_string(&script).unwrap()).unwrap();
    let pairs_path = write_records(dir.path(), "pairs.jsonl", &pairs);
    let manifest = dir.path().join("manifest.json");
    let records = dir.path().join("records.jsonl");

    let r = run(&[
        "curate", s(&pairs_path), "--mock-script", s(&script_path), "--manifest", s(&manifest), "--records", s(&records),
    ]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    let sft: Vec<(usize, SftRecord)> = read_jsonl(r.out.as_bytes()).unwrap();
    let ids: Vec<&str> = sft.iter().map(|(_, r)| r.pair_id.as_str()).collect();
    assert_eq!(ids, ["p0", "p2"]);
    assert!(sft.iter().all(|(_, r)| r.provenance == "heuristic"));
    let m: Manifest = serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_eq!(m.total, 2);
    assert_eq!(std::fs::read_to_string(&records).unwrap().lines().count(), 4);

    let r = run(&["curate", s(&pairs_path), "--mock-script", s(&script_path), "--threshold", "2.5"]);
    let sft: Vec<(usize, SftRecord)> = read_jsonl(r.out.as_bytes()).unwrap();
    assert_eq!(sft.len(), 1);
    assert!(r.err.contains("\"total\":1"), "{}", r.err);

    let r = run(&["curate", s(&pairs_path), "--mock-script", s(&script_path), "--mode", "structural"]);
    let sft: Vec<(usize, SftRecord)> = read_jsonl(r.out.as_bytes()).unwrap();
    assert_eq!(sft.len(), 3);

    let r = run(&[
        "curate", s(&pairs_path), "--mock-script", s(&script_path), "--classifier-cmd", "echo Fusion",
    ]);
    let sft: Vec<(usize, SftRecord)> = read_jsonl(r.out.as_bytes()).unwrap();
    assert!(sft.iter().all(|(_, r)| r.difficulty == kforge::types::DifficultyClass::Fusion && r.provenance != "heuristic"));
}

#[test]
fn env_loop_over_stdin() {
    let dir = tempfile::tempdir().unwrap();
    let tasks: Vec<KernelTask> = (0..3).map(|i| KernelTask::new(format!("t{i}"), Level::L1, assets::EXAMPLE_REFERENCE)).collect();
    let pairs: Vec<PairedKernel> = tasks
        .iter()
        .map(|t| PairedKernel { v: SchemaVersion, task_id: t.task_id.clone(), kernel_source: assets::EXAMPLE_NEW_ARCH.into() })
        .collect();
    let tasks_path = write_records(dir.path(), "tasks.jsonl", &tasks);
    let pairs_path = write_records(dir.path(), "pairs.jsonl", &pairs);
    let input = "{\"op\":\"metadata\"}\n{\"op\":\"next_batch\",\"step\":0}\nnot json\n{\"op\":\"next_batch\",\"step\":20}\n";
    let r = run_env(&["env", "--tasks", s(&tasks_path), "--pairs", s(&pairs_path), "--shaping"], &[], input);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    let replies: Vec<Value> = r.out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(replies.len(), 4);
    assert_eq!(replies[0]["total_steps"], 120);
    assert_eq!(replies[1]["batch"]["stage"], "Infill");
    assert_eq!(replies[1]["batch"]["problems"].as_array().unwrap().len(), 64);
    assert_eq!(replies[2]["ok"], false);
    assert_eq!(replies[3]["batch"]["stage"], "Generate");

    let r = run(&["env", "--tasks", s(&tasks_path), "--shaping-cap", "2"]);
    assert_eq!(r.code, EXIT_USAGE);
}

#[test]
fn config_file_and_environment_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let (tasks, cands, _) = eval_fixture(dir.path());
    let eval = ["eval", "--tasks", s(&tasks), "--candidates", s(&cands)];

    // Environment alone selects the shim backend, which needs a command.
    let r = run_env(&eval, &[("KFORGE_BACKEND", "shim")], "");
    assert_eq!(r.code, EXIT_USAGE);
    assert!(r.err.contains("KFORGE_SHIM_CMD"), "{}", r.err);

    // The config file overrides the environment.
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "backend = \"mock\"\njobs = 2\n").unwrap();
    let mut with_cfg = eval.to_vec();
    with_cfg.extend(["--config", s(&cfg)]);
    assert_eq!(run_env(&with_cfg, &[("KFORGE_BACKEND", "shim")], "").code, EXIT_OK);

    // Flags override the config file.
    std::fs::write(&cfg, "backend = \"shim\"\n").unwrap();
    assert_eq!(run_env(&with_cfg, &[], "").code, EXIT_USAGE);
    let mut with_flag = with_cfg.clone();
    with_flag.extend(["--backend", "mock"]);
    assert_eq!(run_env(&with_flag, &[], "").code, EXIT_OK);

    assert_eq!(run_env(&eval, &[("KFORGE_JOBS", "zero")], "").code, EXIT_USAGE);
    assert_eq!(run_env(&eval, &[("KFORGE_JOBS", "0")], "").code, EXIT_USAGE);
    std::fs::write(&cfg, "unknown_key = 1\n").unwrap();
    assert_eq!(run_env(&with_cfg, &[], "").code, EXIT_USAGE);
}

#[test]
fn shim_backend_through_the_cli() {
    if std::process::Command::new("python3").arg("--version").output().is_err() {
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let (tasks, cands, n) = eval_fixture(dir.path());
    let worker = dir.path().join("worker.py");
    std::fs::write(
        &worker,
        "import json, sys\nfor line in sys.stdin:\n    r = json.loads(line)\n    \
         print(json.dumps({\"v\": 1, \"id\": r[\"id\"], \"compiled\": False, \"correct\": False, \"error\": \"no device\"}), flush=True)\n",
    )
    .unwrap();
    let cmd = format!("python3 {}", worker.display());
    let r = run_env(
        &["eval", "--tasks", s(&tasks), "--candidates", s(&cands), "--robust-check", "off", "--jobs", "2"],
        &[("KFORGE_BACKEND", "shim"), ("KFORGE_SHIM_CMD", &cmd), ("KFORGE_DEVICE", "cpu-cli")],
        "",
    );
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    let outs: Vec<(usize, EvalOutcome)> = read_jsonl(r.out.as_bytes()).unwrap();
    assert_eq!(outs.len(), n);
    assert!(outs.iter().all(|(_, o)| !o.compiled && o.error.as_deref() == Some("no device")));

    let r = run_env(
        &["eval", "--tasks", s(&tasks), "--candidates", s(&cands), "--robust-check", "off"],
        &[("KFORGE_BACKEND", "shim"), ("KFORGE_SHIM_CMD", "exit 0")],
        "",
    );
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    let outs: Vec<(usize, EvalOutcome)> = read_jsonl(r.out.as_bytes()).unwrap();
    assert!(outs.iter().all(|(_, o)| o.error.as_deref().is_some_and(|e| e.contains("exited without a response"))));
}
