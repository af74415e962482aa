mod support;

use proptest::prelude::*;
use spoton_core::spotsim::{cost, simulate, CheckpointPolicy, PricingModel, SimError, SimParams};
use std::time::Duration;
use support::replay::{replay, Instance, Outcome, Policy};

fn to_params(inst: &Instance) -> SimParams {
    let s = Duration::from_secs;
    SimParams {
        stage_durations: inst.stages.iter().map(|&d| s(d)).collect(),
        checkpoint_policy: match inst.policy {
            Policy::Periodic(t) => CheckpointPolicy::Periodic(s(t)),
            Policy::Boundary => CheckpointPolicy::BoundaryOnly,
            Policy::None => CheckpointPolicy::None,
        },
        checkpoint_overhead: s(inst.ckpt),
        restore_time: s(inst.restore),
        reprovision_delay: s(inst.reprovision),
        eviction_interval: (inst.evict_every > 0).then(|| s(inst.evict_every)),
        horizon: None,
    }
}

fn sim(inst: &Instance) -> Option<Outcome> {
    match simulate(&to_params(inst), &PricingModel::default()) {
        Ok(r) => Some(Outcome {
            makespan: r.makespan.as_secs(),
            evictions: r.evictions,
            checkpoints: r.checkpoints_taken,
            lost: r.lost_work.as_secs(),
        }),
        Err(SimError::Nonconvergence { .. }) => None,
        Err(e) => panic!("{e}"),
    }
}

fn arb_instance() -> impl Strategy<Value = Instance> {
    let policy = prop_oneof![
        (5u64..=120).prop_map(Policy::Periodic),
        Just(Policy::Boundary),
        Just(Policy::None),
    ];
    (
        prop::collection::vec(0u64..=150, 1..=5).prop_filter("work <= 600", |v| v.iter().sum::<u64>() <= 600),
        policy,
        0u64..=8,
        0u64..=8,
        0u64..=8,
        prop_oneof![1 => Just(0u64), 6 => 10u64..=300],
    )
        .prop_map(|(stages, policy, ckpt, restore, reprovision, evict_every)| Instance {
            stages,
            policy,
            ckpt,
            restore,
            reprovision,
            evict_every,
        })
}

#[test]
fn worked_examples_agree_with_replay() {
    let periodic = Instance {
        stages: vec![100],
        policy: Policy::Periodic(25),
        ckpt: 0,
        restore: 0,
        reprovision: 0,
        evict_every: 60,
    };
    assert_eq!(replay(&periodic).unwrap().makespan, 110);
    assert_eq!(sim(&periodic), replay(&periodic));

    let boundary = Instance { stages: vec![20; 5], policy: Policy::Boundary, evict_every: 30, ..periodic.clone() };
    assert_eq!(replay(&boundary).unwrap().makespan, 140);
    assert_eq!(sim(&boundary), replay(&boundary));

    let stuck = Instance { stages: vec![100], policy: Policy::Boundary, evict_every: 60, ..periodic };
    assert_eq!(replay(&stuck), None);
    assert_eq!(sim(&stuck), None);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn event_replay_equals_brute_force(inst in arb_instance()) {
        prop_assert_eq!(sim(&inst), replay(&inst), "{:?}", inst);
    }
}

fn makespan(inst: &Instance) -> u64 {
    sim(inst).map_or(u64::MAX, |o| o.makespan)
}

proptest! {
    #[test]
    fn makespan_monotone_in_overheads(inst in arb_instance(), bump in 1u64..=5) {
        let base = makespan(&inst);
        let worse = [
            Instance { ckpt: inst.ckpt + bump, ..inst.clone() },
            Instance { restore: inst.restore + bump, ..inst.clone() },
            Instance { reprovision: inst.reprovision + bump, ..inst.clone() },
        ];
        for w in &worse {
            prop_assert!(makespan(w) >= base, "{:?}: {} < {}", w, makespan(w), base);
        }
    }

    // Evictions are phase-aligned to t=0, so E -> E+1 can move an eviction
    // onto an unprotected instant and slow the run. Dropping evictions (a
    // multiple of E, or none at all) never does.
    #[test]
    fn fewer_evictions_never_slow_completion(inst in arb_instance(), k in 2u64..=4) {
        prop_assume!(inst.evict_every > 0);
        let base = makespan(&inst);
        let sparser = makespan(&Instance { evict_every: inst.evict_every * k, ..inst.clone() });
        let calm = makespan(&Instance { evict_every: 0, ..inst.clone() });
        prop_assert!(sparser <= base, "{} > {}", sparser, base);
        prop_assert!(calm <= base, "{} > {}", calm, base);
    }

    #[test]
    fn periodic_dominates_boundary_when_tau_divides_every_stage(
        tau in 1u64..=30,
        multiples in prop::collection::vec(1u64..=6, 1..=5),
        evict_every in 10u64..=300,
    ) {
        let stages: Vec<u64> = multiples.iter().map(|m| m * tau).collect();
        let base = Instance { stages, policy: Policy::Boundary, ckpt: 0, restore: 0, reprovision: 0, evict_every };
        let boundary = makespan(&base);
        let periodic = makespan(&Instance { policy: Policy::Periodic(tau), ..base });
        prop_assert!(periodic <= boundary, "periodic {} > boundary {}", periodic, boundary);
    }

    // With checkpoints free, any τ up to the shortest stage wins on average
    // over eviction phases even where a single E favours the boundaries.
    #[test]
    fn periodic_dominates_boundary_on_average_over_eviction_intervals(
        stages in prop::collection::vec(5u64..=60, 1..=4),
        tau_frac in 0.05f64..=1.0,
        restore in 0u64..=3,
        reprovision in 0u64..=3,
    ) {
        let min_stage = *stages.iter().min().unwrap();
        let tau = ((min_stage as f64 * tau_frac) as u64).max(1);
        let (mut periodic, mut boundary) = (0u64, 0u64);
        for evict_every in 10..=120 {
            let b = Instance { stages: stages.clone(), policy: Policy::Boundary, ckpt: 0, restore, reprovision, evict_every };
            boundary += makespan(&b).min(1_000_000);
            periodic += makespan(&Instance { policy: Policy::Periodic(tau), ..b }).min(1_000_000);
        }
        prop_assert!(periodic <= boundary, "periodic {} > boundary {}", periodic, boundary);
    }

    #[test]
    fn cost_is_linear(secs in 0u64..1_000_000, rate in 0.0f64..10.0) {
        let one = cost(Duration::from_secs(secs), rate).as_micros();
        let two = cost(Duration::from_secs(2 * secs), rate).as_micros();
        prop_assert!(two.abs_diff(2 * one) <= 1, "{} vs 2*{}", two, one);
    }
}
