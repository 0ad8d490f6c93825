use std::collections::BTreeMap;

use kforge::metrics::{aggregate, exec_rate, exec_rate_with, fast_p, fast_p_with, View};
use kforge::robustcheck::{DeceptionCategory, DeceptionReport};
use kforge::types::{EvalOutcome, Level};
use proptest::prelude::*;

/// Literal transcription of the fast_p sum: loop over the N task slots and
/// add one for every slot holding a correct outcome faster than p.
fn brute_fast_p(rows: &[(bool, f64)], p: f64, n: usize) -> f64 {
    let mut sum = 0usize;
    for i in 0..n {
        if let Some((correct, speedup)) = rows.get(i) {
            if *correct && *speedup > p {
                sum += 1;
            }
        }
    }
    sum as f64 / n as f64
}

fn brute_exec(rows: &[(bool, f64)], n: usize) -> f64 {
    rows.iter().filter(|(c, _)| *c).count() as f64 / n as f64
}

fn outcome(i: usize, correct: bool, speedup: f64, deceptive: bool) -> EvalOutcome {
    EvalOutcome {
        level: Some(Level::L1),
        compiled: correct,
        correct,
        speedup: if correct { speedup } else { 0.0 },
        deceptive: deceptive.then(|| DeceptionReport {
            deceptive: true,
            category: Some(DeceptionCategory::C3OmittedFromForward),
            kernel_reachable_from_forward: false,
            extension_bound_to_module: true,
            example_similarity: 0.1,
            evidence: vec![],
        }),
        ..EvalOutcome::not_run(format!("c{i}"), format!("t{i}"))
    }
}

fn speedup() -> impl Strategy<Value = f64> {
    prop_oneof![Just(1.0), Just(2.0), Just(0.5), 0.0f64..8.0]
}

fn outcome_set() -> impl Strategy<Value = (Vec<(bool, f64, bool)>, usize)> {
    (1usize..=100).prop_flat_map(|n| (prop::collection::vec((any::<bool>(), speedup(), any::<bool>()), 0..=n), Just(n)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn matches_brute_force((rows, n) in outcome_set(), p in prop_oneof![Just(1.0), Just(2.0), 0.01f64..6.0]) {
        let outs: Vec<_> = rows.iter().enumerate().map(|(i, (c, s, _))| outcome(i, *c, *s, false)).collect();
        let pairs: Vec<_> = outs.iter().map(|o| (o.correct, o.speedup)).collect();
        prop_assert_eq!(fast_p(&outs, p, n).unwrap(), brute_fast_p(&pairs, p, n));
        prop_assert_eq!(exec_rate::<f64>(&outs, n).unwrap(), brute_exec(&pairs, n));
        let f1 = fast_p(&outs, 1.0, n).unwrap();
        let f2 = fast_p(&outs, 2.0, n).unwrap();
        prop_assert!(f1 >= f2);
        prop_assert!(fast_p(&outs, p, n).unwrap() <= exec_rate::<f64>(&outs, n).unwrap());
    }

    #[test]
    fn robust_check_never_raises_rates((rows, n) in outcome_set(), p in 0.01f64..6.0) {
        let outs: Vec<_> = rows.iter().enumerate().map(|(i, (c, s, d))| outcome(i, *c, *s, *d)).collect();
        prop_assert!(exec_rate_with::<f64>(&outs, n, true).unwrap() <= exec_rate_with::<f64>(&outs, n, false).unwrap());
        prop_assert!(fast_p_with(&outs, p, n, true).unwrap() <= fast_p_with(&outs, p, n, false).unwrap());
    }

    #[test]
    fn aggregates_are_permutation_invariant((rows, n) in outcome_set(), seed in any::<u64>()) {
        use rand::{seq::SliceRandom, SeedableRng};
        let outs: Vec<_> = rows.iter().enumerate().map(|(i, (c, s, d))| outcome(i, *c, *s, *d)).collect();
        let mut shuffled = outs.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let ns = BTreeMap::from([(Level::L1, n)]);
        for view in [None, Some(View::Checked), Some(View::Unchecked)] {
            let a = aggregate(&outs, &[1.0, 2.0], &ns, view).unwrap();
            let b = aggregate(&shuffled, &[1.0, 2.0], &ns, view).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert!(a[0].fast[0].1 >= a[0].fast[1].1);
            prop_assert!(a[0].fast[0].1 <= a[0].exec_pct);
        }
    }
}
