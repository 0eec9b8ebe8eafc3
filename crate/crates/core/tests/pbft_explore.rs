//! Random PBFT runs with at most f Byzantine replicas must stay safe.

use poasim_core::adversary::{AdversaryKind, AdversarySpec};
use poasim_core::{run, Scenario};
use proptest::prelude::*;

fn scenario(n: usize, seed: u64, d_min: u64, d_max: u64) -> Scenario {
    Scenario::from_json(&format!(
        r#"{{"name": "pbft_explore", "protocol": "pbft", "N": {n}, "seed": {seed}, "duration_ticks": 30000,
            "network": {{"d_min": {d_min}, "d_max": {d_max}}}, "workload": {{"rate_tps": 5}},
            "pbft": {{"block_interval_ms": 100}}}}"#
    ))
    .unwrap()
}

fn kind() -> impl Strategy<Value = Option<AdversaryKind>> {
    prop_oneof![
        Just(None),
        Just(Some(AdversaryKind::Equivocator)),
        Just(Some(AdversaryKind::Silent)),
        Just(Some(AdversaryKind::Forger)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn safety_holds_with_f_faulty(
        seed in any::<u64>(),
        big in any::<bool>(),
        d_min in 1u64..30,
        spread in 0u64..80,
        adv in kind(),
        who in 0u32..7,
    ) {
        let n = if big { 7 } else { 4 };
        let mut s = scenario(n, seed, d_min, d_min + spread);
        if let Some(k) = adv {
            s.adversaries.push(AdversarySpec::new(who % n as u32, k));
        }
        let v = run(&s).verdict;
        prop_assert!(v.finality && v.agreement && v.total_order, "{:?}", v.violations);
        prop_assert!(v.integrity_no_creation && v.integrity_no_dup && v.block_validity, "{:?}", v.violations);
        prop_assert_eq!(v.reverts, 0);
        prop_assert!(v.finality_equivalence);
    }
}
