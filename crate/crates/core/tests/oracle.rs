//! Aggregates and coverage checked against naive full scans on random datasets.

#[path = "support/oracle.rs"]
mod support;

use proptest::prelude::*;
use support::Case;

fn case() -> impl Strategy<Value = Case> {
    (1usize..=5, 1usize..=5, 1usize..=10, any::<bool>()).prop_flat_map(|(np, ni, ns, has_val)| {
        let frame = (0..np as u16, 0..(1u64 << ni));
        let surgery = prop::collection::vec(frame, 1..=100);
        (
            prop::collection::vec(surgery, ns),
            prop::collection::vec(0u8..3, ns),
        )
            .prop_map(move |(surgeries, labels)| Case {
                phases: np,
                instruments: ni,
                surgeries,
                labels,
                has_val,
            })
    })
}

fn ok(r: Result<(), String>) -> Result<(), TestCaseError> {
    r.map_err(TestCaseError::fail)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn aggregates_match_full_scan(c in case()) {
        ok(support::check_aggregates(&c))?;
    }

    #[test]
    fn unrepresented_matches_full_scan(c in case()) {
        ok(support::check_unrepresented(&c))?;
    }

    #[test]
    fn totals_partition_the_dataset(c in case()) {
        ok(support::check_partition(&c))?;
    }

    #[test]
    fn moving_a_surgery_is_monotone(c in case(), pick in any::<prop::sample::Index>()) {
        let k = pick.index(c.labels.len());
        ok(support::check_monotone(&c, k))?;
    }

    #[test]
    fn filters_match_full_scan(c in case(), phase_mask in any::<u8>(), required in any::<u8>()) {
        ok(support::check_filters(&c, phase_mask, required))?;
    }
}
