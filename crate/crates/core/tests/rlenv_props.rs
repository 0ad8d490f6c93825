use std::collections::BTreeMap;

use kforge::assets;
use kforge::rlenv::prompts::placeholder_spans;
use kforge::rlenv::{reward, reward_signal, CurriculumStage, PoolItem, Schedule, Stage, Templates};
use kforge::robustcheck::{DeceptionCategory, DeceptionReport};
use kforge::types::{DifficultyClass, EvalOutcome, KernelTask, Level};
use proptest::prelude::*;

fn pool_tasks(n: usize) -> Vec<KernelTask> {
    (0..n)
        .map(|i| KernelTask {
            difficulty_class: DifficultyClass::ALL[(i * 7) % 4],
            ..KernelTask::new(format!("t{i}"), Level::L1, assets::EXAMPLE_REFERENCE)
        })
        .collect()
}

#[test]
fn every_item_once_per_epoch() {
    let tasks = pool_tasks(992);
    let pool: Vec<_> = tasks.iter().map(|t| PoolItem { task: t.clone(), scaffold: None }).collect();
    let s = Schedule::new(vec![CurriculumStage::new(Stage::Generate, pool, 31)], 64, 16).unwrap();
    // 31 steps × 64 = 1984 = two full epochs
    let mut counts = vec![0usize; 992];
    let mut first_epoch = vec![0usize; 992];
    for step in 0..31 {
        for (k, p) in s.next_batch(step, 5).unwrap().problems.iter().enumerate() {
            counts[p.pool_index] += 1;
            if (step as usize * 64 + k) < 992 {
                first_epoch[p.pool_index] += 1;
            }
        }
    }
    assert!(first_epoch.iter().all(|c| *c == 1));
    assert!(counts.iter().all(|c| *c == 2));
}

#[test]
fn stage_sequence_is_monotone() {
    let tasks = pool_tasks(70);
    let pairs: BTreeMap<_, _> = tasks.iter().map(|t| (t.task_id.clone(), assets::EXAMPLE_NEW_ARCH.to_string())).collect();
    let s = Schedule::from_tasks(&tasks, &pairs).unwrap();
    let stages: Vec<Stage> = (0..s.total_steps()).map(|i| s.stage_at(i).unwrap()).collect();
    assert_eq!(stages.iter().filter(|s| **s == Stage::Infill).count(), 20);
    assert!(stages.windows(2).all(|w| w[0] <= w[1]));
}

/// Checks that `rendered` is `template` with each placeholder span replaced:
/// the literal text between placeholders appears in order and nothing else
/// differs at the ends.
fn only_placeholders_differ(template: &str, rendered: &str) -> bool {
    let spans = placeholder_spans(template);
    let mut literals = Vec::new();
    let mut last = 0;
    for (span, _) in &spans {
        literals.push(&template[last..span.start]);
        last = span.end;
    }
    literals.push(&template[last..]);
    let (first, rest) = literals.split_first().unwrap();
    if !rendered.starts_with(first) || !rendered.ends_with(rest.last().copied().unwrap_or("")) {
        return false;
    }
    let mut pos = first.len();
    for lit in rest {
        match rendered[pos..].find(lit) {
            Some(off) => pos += off + lit.len(),
            None => return false,
        }
    }
    true
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn gate_holds(compiled in any::<bool>(), correct in any::<bool>(), deceptive in any::<bool>(), speedup in -1.0f64..100.0, shaping in proptest::option::of(0.5f64..10.0)) {
        let r = reward(compiled, correct, deceptive, speedup, shaping);
        if r > 0.0 {
            prop_assert!(compiled && correct && !deceptive);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn signal_gate_over_outcomes(compiled in any::<bool>(), correct in any::<bool>(), deceptive in any::<bool>(), speedup in 0.0f64..10.0) {
        let o = EvalOutcome {
            compiled,
            correct,
            speedup,
            deceptive: Some(DeceptionReport {
                deceptive,
                category: deceptive.then_some(DeceptionCategory::C1ExampleMimicry),
                kernel_reachable_from_forward: !deceptive,
                extension_bound_to_module: true,
                example_similarity: 1.0,
                evidence: vec![],
            }),
            ..EvalOutcome::not_run("c", "t")
        };
        let s = reward_signal(&o, Some(4.0));
        prop_assert!(s.reward == 0.0 || (s.compiled && s.correct && !s.deceptive));
        prop_assert!(s.reward <= 2.0);
    }

    #[test]
    fn batches_are_deterministic_and_shaped(step in 0u32..120, seed in any::<u64>(), n in 1usize..50) {
        let tasks = pool_tasks(n);
        let pairs: BTreeMap<_, _> = tasks.iter().map(|t| (t.task_id.clone(), assets::EXAMPLE_NEW_ARCH.to_string())).collect();
        let s = Schedule::from_tasks(&tasks, &pairs).unwrap();
        let a = s.next_batch(step, seed).unwrap();
        prop_assert_eq!(a.problems.len(), 64);
        prop_assert_eq!(a.responses_per_problem, 16);
        prop_assert_eq!(a.stage, if step < 20 { Stage::Infill } else { Stage::Generate });
        prop_assert_eq!(&a, &s.next_batch(step, seed).unwrap());
        let template = Templates::default();
        for p in a.problems.iter().take(3) {
            prop_assert!(only_placeholders_differ(template.for_stage(a.stage), &p.prompt));
        }
    }
}
