mod common;

use common::*;
use optswp::baseline::{ims_schedule, ImsOptions};
use optswp::encoder::EncodingStyle;
use optswp::loop_ir::augment_loop_carried;
use optswp::search::{stage_window, RpMode};
use optswp::solver::{EnumBackend, SatBackend};
use optswp::testgen::{generate, search_options, GenLimits};
use proptest::prelude::*;
use proptest::test_runner::RngSeed;

fn config(cases: u32, seed: u64) -> ProptestConfig {
    ProptestConfig {
        cases,
        rng_seed: RngSeed::Fixed(seed),
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(config(32, 11))]

    #[test]
    fn found_schedules_are_legal_and_replay(seed in any::<u64>()) {
        let x = generate(seed, &GenLimits::fuzz());
        let r = search(&x, RpMode::Off);
        prop_assert!(soundness(&x, &r).is_ok(), "{:?}", soundness(&x, &r));
    }

    #[test]
    fn stage_count_lies_in_the_window(seed in any::<u64>()) {
        let x = generate(seed, &GenLimits::fuzz());
        let r = search(&x, RpMode::Off);
        if let Some(s) = r.schedule() {
            let g = augment_loop_carried(&x.graph);
            let w = stage_window(&g, s.ii, &search_options(&x.graph, &x.machine)).unwrap();
            prop_assert!(w.min_stages <= s.stages && s.stages <= w.max_stages,
                "seed {seed}: {} not in {}..={}", s.stages, w.min_stages, w.max_stages);
        }
    }

    #[test]
    fn heuristic_never_beats_the_optimum(seed in any::<u64>()) {
        let x = generate(seed, &GenLimits::fuzz());
        let opt = found_ii(&search(&x, RpMode::Off));
        let h = ims_schedule(&x.graph, &x.machine, &ImsOptions::default());
        if let Some(hi) = h.achieved_ii {
            prop_assert!(opt.is_some_and(|o| o <= hi), "seed {seed}: heuristic {hi}, optimum {opt:?}");
        }
    }
}

proptest! {
    #![proptest_config(config(64, 12))]

    #[test]
    fn search_matches_the_oracle(seed in any::<u64>()) {
        let x = generate(seed, &GenLimits::oracle());
        prop_assert_eq!(found_ii(&search(&x, RpMode::Off)), oracle_ii(&x, false, None), "seed {}", seed);
    }

    #[test]
    fn routing_bound_is_below_the_oracle(seed in any::<u64>()) {
        let x = generate(seed, &GenLimits::oracle());
        let g = augment_loop_carried(&x.graph);
        if let Some(ii) = oracle_ii(&x, false, None) {
            prop_assert!(optswp::bounds::route_mii(&g, &x.machine, false) <= ii, "seed {}", seed);
        }
    }

    #[test]
    fn lazy_and_eager_agree_with_the_pressure_oracle(seed in any::<u64>()) {
        let x = generate(seed, &GenLimits::pressure());
        let lazy = search(&x, RpMode::Lazy);
        let eager = found_ii(&search(&x, RpMode::Eager));
        prop_assert_eq!(found_ii(&lazy), eager, "seed {}", seed);
        // proving infeasibility exhaustively is too slow with pressure on
        if let Some(ii) = eager {
            prop_assert_eq!(Some(ii), oracle_ii(&x, true, Some(ii)), "seed {}", seed);
        }
        if let optswp::search::Outcome::Found { pressure, .. } = &lazy.outcome {
            for rf in &x.machine.register_files {
                prop_assert!(pressure[&rf.name] <= rf.capacity);
            }
        }
    }

    #[test]
    fn live_variables_match_the_analyzer(seed in any::<u64>()) {
        let x = generate(seed, &GenLimits::pressure());
        if let Some(s) = search(&x, RpMode::Lazy).schedule() {
            prop_assert_eq!(live_agreement(&x, s.ii, s.stages), Ok(true));
        }
    }

    #[test]
    fn paper_and_compact_encodings_agree(seed in any::<u64>(), dii in 0u32..2, ds in 0u32..3) {
        let x = generate(seed, &GenLimits::oracle());
        let g = augment_loop_carried(&x.graph);
        let Ok(mii) = optswp::bounds::mii(&g, &x.machine) else { return Ok(()) };
        let (ii, stages) = (mii + dii, 1 + ds);
        prop_assert_eq!(
            probe_status(&g, &x.machine, ii, stages, EncodingStyle::Paper),
            probe_status(&g, &x.machine, ii, stages, EncodingStyle::Compact),
            "seed {} II={} stages={}", seed, ii, stages
        );
    }

    #[test]
    fn incremental_and_scratch_agree(seed in any::<u64>(), ds in 0u32..2) {
        let x = generate(seed, &GenLimits::pressure());
        let g = augment_loop_carried(&x.graph);
        let Ok(mii) = optswp::bounds::mii(&g, &x.machine) else { return Ok(()) };
        let (inc, scratch) = incremental_vs_scratch(&g, &x.machine, mii, 1 + ds);
        prop_assert_eq!(inc, scratch, "seed {}", seed);
    }
}

proptest! {
    #![proptest_config(config(48, 13))]

    #[test]
    fn sat_and_enumeration_backends_agree(seed in any::<u64>(), ds in 0u32..2) {
        let lim = GenLimits { max_ops: 3, max_slots: 2, ..GenLimits::oracle() };
        let x = generate(seed, &lim);
        let g = augment_loop_carried(&x.graph);
        let Ok(mii) = optswp::bounds::mii(&g, &x.machine) else { return Ok(()) };
        prop_assert_eq!(
            probe_status_with(&SatBackend, &g, &x.machine, mii, 1 + ds),
            probe_status_with(&EnumBackend, &g, &x.machine, mii, 1 + ds),
            "seed {}", seed
        );
    }
}
