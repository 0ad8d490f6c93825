use kforge::types::{
    BackendKind, CandidateMode, CheckMode, DifficultyClass, EvalOutcome, KernelCandidate, KernelTask, Level, RunConfig,
    SchemaVersion,
};
use proptest::prelude::*;

fn level() -> impl Strategy<Value = Level> {
    prop_oneof![Just(Level::L1), Just(Level::L2), Just(Level::L3)]
}

fn task() -> impl Strategy<Value = KernelTask> {
    ("[a-z0-9_-]{1,12}", level(), 0usize..4, "\\PC{0,80}", "[a-z]{0,8}").prop_map(|(id, level, d, src, origin)| KernelTask {
        v: SchemaVersion,
        task_id: id,
        level,
        difficulty_class: DifficultyClass::ALL[d],
        reference_source: src,
        origin,
    })
}

fn candidate() -> impl Strategy<Value = KernelCandidate> {
    ("[a-z0-9]{1,8}", "[a-z0-9]{1,8}", "\\PC{0,80}", proptest::option::of("\\PC{0,20}")).prop_map(|(c, t, s, core)| {
        KernelCandidate {
            v: SchemaVersion,
            candidate_id: c,
            task_id: t,
            source: s,
            mode: if core.is_some() { CandidateMode::InfilledCore } else { CandidateMode::Generated },
            core_only: core,
        }
    })
}

fn outcome() -> impl Strategy<Value = EvalOutcome> {
    (
        "[a-z0-9]{1,8}",
        proptest::option::of(level()),
        any::<bool>(),
        any::<bool>(),
        prop::collection::vec(0.0f64..1e6, 0..6),
        prop::collection::vec(0.0f64..1e6, 0..6),
        0.0f64..100.0,
        proptest::option::of("\\PC{0,20}"),
    )
        .prop_map(|(id, level, compiled, correct, r, c, s, error)| EvalOutcome {
            level,
            compiled,
            correct,
            ref_times_ms: r,
            cand_times_ms: c,
            speedup: s,
            error,
            ..EvalOutcome::not_run(id.clone(), id)
        })
}

fn config() -> impl Strategy<Value = RunConfig> {
    (0u32..10, 1u32..20, 1e-6f64..1.0, any::<u64>(), 0.1f64..10.0, "[a-z0-9:]{1,8}", any::<bool>(), 1u64..1000, 0usize..3)
        .prop_map(|(w, t, tol, seed, thr, dev, shim, timeout, mode)| RunConfig {
            warmups: w,
            trials: t,
            tolerance: tol,
            seed,
            speedup_threshold: thr,
            device_tag: dev,
            backend: if shim { BackendKind::Shim } else { BackendKind::Mock },
            timeout_secs: timeout,
            robust_check: [CheckMode::Gate, CheckMode::Annotate, CheckMode::Off][mode],
        })
}

proptest! {
    #[test]
    fn task_round_trip(x in task()) {
        let s = serde_json::to_string(&x).unwrap();
        let versioned = s.starts_with(r#"{"v":1,"#);
        prop_assert!(versioned);
        prop_assert_eq!(serde_json::from_str::<KernelTask>(&s).unwrap(), x.clone());
        prop_assert_eq!(serde_json::to_string(&serde_json::from_str::<KernelTask>(&s).unwrap()).unwrap(), s);
    }

    #[test]
    fn candidate_round_trip(x in candidate()) {
        let s = serde_json::to_string(&x).unwrap();
        prop_assert_eq!(serde_json::from_str::<KernelCandidate>(&s).unwrap(), x);
    }

    #[test]
    fn outcome_round_trip(x in outcome()) {
        let s = serde_json::to_string(&x).unwrap();
        let back: EvalOutcome = serde_json::from_str(&s).unwrap();
        prop_assert_eq!(&back, &x);
        prop_assert_eq!(serde_json::to_string(&back).unwrap(), s);
    }

    #[test]
    fn config_round_trip(x in config()) {
        let s = serde_json::to_string(&x).unwrap();
        prop_assert_eq!(serde_json::from_str::<RunConfig>(&s).unwrap(), x);
    }
}

#[test]
fn wrong_schema_version_is_rejected() {
    let line = r#"{"v":2,"task_id":"a","level":"L1","reference_source":"x = 1\n"}"#;
    assert!(serde_json::from_str::<KernelTask>(line).is_err());
}
