//! Exercises the subprocess wire protocol against small stand-in workers.

use std::time::Duration;

use kforge::assets;
use kforge::evaluator::{evaluate, Backend, BackendError, BackendRequest, ShimBackend};
use kforge::types::{KernelCandidate, KernelTask, Level, RunConfig};

fn python() -> Option<&'static str> {
    std::process::Command::new("python3").arg("--version").output().ok().map(|_| "python3")
}

const ECHO_WORKER: &str = r#"
import json, sys
for line in sys.stdin:
    req = json.loads(line)
    n = req["trials"]
    if "NO_DEVICE" in req["candidate_source"]:
        out = {"v": 1, "id": req["id"], "compiled": False, "correct": False, "error": "no device"}
    else:
        out = {"v": 1, "id": req["id"], "compiled": True, "correct": True,
               "ref_times_ms": [4.0] * n, "cand_times_ms": [2.0] * n}
    print(json.dumps(out), flush=True)
"#;

fn worker(py: &str, body: &str, dir: &tempfile::TempDir) -> String {
    let path = dir.path().join("worker.py");
    std::fs::write(&path, body).unwrap();
    format!("{py} {}", path.display())
}

fn request(id: &str, candidate: &str) -> BackendRequest {
    BackendRequest::new(id, assets::EXAMPLE_REFERENCE, candidate, &RunConfig::default())
}

#[test]
fn round_trip_and_pool_reuse() {
    let Some(py) = python() else { return };
    let dir = tempfile::tempdir().unwrap();
    let b = ShimBackend::new(worker(py, ECHO_WORKER, &dir), "cpu-test-a", Duration::from_secs(30)).unwrap();
    for i in 0..3 {
        let r = b.execute(&request(&format!("r{i}"), "x = 1\n")).unwrap();
        assert_eq!(r.id, format!("r{i}"));
        assert_eq!(r.ref_times_ms.len(), 5);
    }
    let r = b.execute(&request("nd", "NO_DEVICE")).unwrap();
    assert!(!r.compiled);
    assert_eq!(r.error.as_deref(), Some("no device"));

    let task = KernelTask::new("add", Level::L1, assets::EXAMPLE_REFERENCE);
    let cand = KernelCandidate::generated("c", "add", assets::EXAMPLE_NEW_ARCH);
    let o = evaluate(&b, &task, &cand, &RunConfig::default()).unwrap();
    assert_eq!(o.speedup, 2.0);
}

#[test]
fn concurrent_requests_share_the_pool() {
    let Some(py) = python() else { return };
    let dir = tempfile::tempdir().unwrap();
    let b = ShimBackend::new(worker(py, ECHO_WORKER, &dir), "cpu-test-b", Duration::from_secs(30)).unwrap();
    std::thread::scope(|s| {
        for i in 0..4 {
            let b = &b;
            s.spawn(move || {
                let r = b.execute(&request(&format!("t{i}"), "x")).unwrap();
                assert_eq!(r.id, format!("t{i}"));
            });
        }
    });
}

#[test]
fn malformed_reply_is_protocol_error() {
    let Some(py) = python() else { return };
    let dir = tempfile::tempdir().unwrap();
    let body = "import sys\nfor line in sys.stdin:\n    print('not json', flush=True)\n";
    let b = ShimBackend::new(worker(py, body, &dir), "cpu-test-c", Duration::from_secs(30)).unwrap();
    assert!(matches!(b.execute(&request("a", "x")), Err(BackendError::Protocol(_))));
}

#[test]
fn silent_worker_times_out() {
    let Some(py) = python() else { return };
    let dir = tempfile::tempdir().unwrap();
    let body = "import sys, time\nfor line in sys.stdin:\n    time.sleep(30)\n";
    let b = ShimBackend::new(worker(py, body, &dir), "cpu-test-d", Duration::from_millis(300)).unwrap();
    assert!(matches!(b.execute(&request("a", "x")), Err(BackendError::Timeout { .. })));
}

#[test]
fn exiting_worker_and_missing_command() {
    let b = ShimBackend::new("exit 0", "cpu-test-e", Duration::from_secs(5)).unwrap();
    assert!(matches!(
        b.execute(&request("a", "x")),
        Err(BackendError::Protocol(_)) | Err(BackendError::Unavailable(_))
    ));
    assert!(matches!(ShimBackend::new("  ", "x", Duration::from_secs(1)), Err(BackendError::Unavailable(_))));
}
