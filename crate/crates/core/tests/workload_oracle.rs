//! Checks the workload against a straight-line transcription of the
//! documented hash chain.

use proptest::prelude::*;
use spoton_core::checkpoint::{Checkpointer, ToyCheckpointer};
use spoton_core::workload::{Stage, WorkloadSpec, WorkloadState};
use std::time::Duration;

fn reference(stage_steps: &[u64], seed: u64) -> u64 {
    fn fmix(mut x: u64) -> u64 {
        x ^= x >> 30;
        x = x.wrapping_mul(0xbf58476d1ce4e5b9);
        x ^= x >> 27;
        x = x.wrapping_mul(0x94d049bb133111eb);
        x ^= x >> 31;
        x
    }
    let mut acc = fmix(seed ^ 0x53504f544f4e5744);
    for (stage, &steps) in stage_steps.iter().enumerate() {
        for step in 0..steps {
            let x = (acc ^ ((seed << 29) | (seed >> 35))).wrapping_add(((stage as u64) << 40) ^ step);
            acc = fmix(x.wrapping_mul(0x9e3779b97f4a7c15));
        }
    }
    acc
}

// Computed once with `reference` above.
const PINNED_5X1000_SEED42: &str = "1edeb310cb74910d";

#[test]
fn five_by_thousand_seed_42_matches_reference() {
    let spec = WorkloadSpec::uniform_default(1000, 42);
    let expected = format!("{:016x}", reference(&[1000; 5], 42));
    assert_eq!(spec.reference_digest(), expected);
    assert_eq!(expected, PINNED_5X1000_SEED42);
}

#[test]
fn empty_workload_digest_is_initial_accumulator() {
    let spec = WorkloadSpec::new(vec![], 42).unwrap();
    assert_eq!(spec.reference_digest(), format!("{:016x}", reference(&[], 42)));
}

fn arb_spec() -> impl Strategy<Value = WorkloadSpec> {
    (prop::collection::vec(0u64..40, 0..6), any::<u64>()).prop_map(|(steps, seed)| {
        let stages = steps
            .into_iter()
            .enumerate()
            .map(|(i, steps)| Stage { name: format!("S{i}"), steps })
            .collect();
        WorkloadSpec::new(stages, seed).unwrap()
    })
}

proptest! {
    #[test]
    fn digest_matches_reference(spec in arb_spec()) {
        let steps: Vec<u64> = spec.stages().iter().map(|s| s.steps).collect();
        prop_assert_eq!(spec.reference_digest(), format!("{:016x}", reference(&steps, spec.seed)));
    }

    #[test]
    fn snapshot_round_trip_at_any_position(spec in arb_spec(), frac in 0.0f64..=1.0) {
        let at = (spec.total_steps() as f64 * frac) as u64;
        let state = spec.state_at(at);
        let toy = ToyCheckpointer::new(spec.clone(), Duration::from_millis(1));
        let payload = toy.snapshot(&state).unwrap();
        prop_assert_eq!(toy.restore(&payload).unwrap(), state);
        prop_assert_eq!(WorkloadState::deserialize(&state.serialize(&spec), &spec).unwrap(), state);
    }

    #[test]
    fn resuming_from_any_snapshot_reaches_same_digest(spec in arb_spec(), frac in 0.0f64..=1.0) {
        let at = (spec.total_steps() as f64 * frac) as u64;
        let payload = spec.state_at(at).serialize(&spec);
        let mut resumed = WorkloadState::deserialize(&payload, &spec).unwrap();
        while !resumed.is_finished(&spec) {
            resumed.step(&spec).unwrap();
        }
        prop_assert_eq!(resumed.digest(&spec).unwrap(), spec.reference_digest());
    }
}
