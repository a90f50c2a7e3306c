use super::*;
use crate::fixtures;
use crate::schedule::{brute_force_min_ii, OracleLimits};

fn g4_on(p: &Processor) -> LoopGraph {
    augment_loop_carried(&fixtures::g4(p))
}

#[test]
fn g4_on_toy5_is_one_cycle_four_stages() {
    let p = fixtures::toy5();
    let r = find_schedule(&fixtures::g4(&p), &p, &SearchOptions::default()).unwrap();
    let s = r.schedule().unwrap();
    assert_eq!((s.ii, s.stages), (1, 4));
    assert_eq!(r.mii, 1);
}

#[test]
fn g4_on_one_lsu_machine_is_two() {
    let p = fixtures::toy4_1lsu();
    let r = find_schedule(&fixtures::g4(&p), &p, &SearchOptions::default()).unwrap();
    assert_eq!(r.schedule().unwrap().ii, 2);
}

#[test]
fn trace_is_strictly_increasing() {
    let p = fixtures::toy5_with_capacity(2);
    let r = find_schedule(&fixtures::g4(&p), &p, &SearchOptions::default()).unwrap();
    let keys: Vec<_> = r.trace.iter().map(|t| (t.ii, t.stages, t.rp_round)).collect();
    assert!(keys.windows(2).all(|w| w[0] < w[1]), "{keys:?}");
    let probes: Vec<_> = r.trace.iter().filter(|t| t.rp_round == 0).map(|t| (t.ii, t.stages)).collect();
    assert!(probes.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn pressure_of_pipelined_g4_is_three() {
    let p = fixtures::toy5();
    let g = g4_on(&p);
    let r = find_schedule(&g, &p, &SearchOptions::default()).unwrap();
    let m = measure_pressure(r.schedule().unwrap(), &g, &p);
    assert_eq!(m["RF0"], 3);
}

#[test]
fn pressure_of_sequential_g4_is_two() {
    let p = fixtures::toy5();
    let g = g4_on(&p);
    let s = crate::schedule::feasible_at(&g, &p, 4, Some(1), &OracleLimits::default())
        .unwrap()
        .unwrap();
    // a: cycles 0-1, b: 1-2, c: 2-3.
    assert_eq!(measure_pressure(&s, &g, &p)["RF0"], 2);
    let sets = &live_sets(&s, &g, &p)["RF0"];
    assert!(sets.iter().all(|x| x.len() <= 2));
}

#[test]
fn loop_without_registers_has_zero_pressure() {
    let p = fixtures::toy5();
    let doc: crate::loop_ir::LoopDoc =
        serde_json::from_str(r#"{"ops":[{"id":"n","opcode":"ADD"}],"deps":[]}"#).unwrap();
    let g = crate::loop_ir::load_loop(&doc, &p).unwrap();
    let r = find_schedule(&g, &p, &SearchOptions::default()).unwrap();
    assert_eq!(measure_pressure(r.schedule().unwrap(), &g, &p)["RF0"], 0);
}

#[test]
fn capacity_two_forces_ii3() {
    let p = fixtures::toy5_with_capacity(2);
    let g = fixtures::g4(&p);
    let r = find_schedule(&g, &p, &SearchOptions::default()).unwrap();
    let Outcome::Found { schedule, pressure } = &r.outcome else {
        panic!("{:?}", r.outcome)
    };
    assert!(pressure["RF0"] <= 2);
    // The first decoded schedule at II=1 overloads RF0 and triggers a refinement.
    assert!(r.trace.iter().any(|t| t.ii == 1 && t.rp_round == 1));
    let oracle = brute_force_min_ii(
        &g4_on(&p),
        &p,
        &OracleLimits {
            pressure: true,
            ..OracleLimits::default()
        },
    )
    .unwrap()
    .unwrap();
    assert_eq!(schedule.ii, oracle.0);
    assert_eq!(schedule.ii, 3);

    let eager = find_schedule(
        &g,
        &p,
        &SearchOptions {
            rp_mode: RpMode::Eager,
            ..SearchOptions::default()
        },
    )
    .unwrap();
    assert_eq!(eager.schedule().unwrap().ii, 3);
    let off = find_schedule(
        &g,
        &p,
        &SearchOptions {
            rp_mode: RpMode::Off,
            ..SearchOptions::default()
        },
    )
    .unwrap();
    assert_eq!(off.schedule().unwrap().ii, 1);
}

#[test]
fn forced_stage_count_too_small_is_infeasible() {
    let p = fixtures::toy5();
    let opts = SearchOptions {
        max_ii: Some(1),
        stages: Some(3),
        want_core: true,
        ..SearchOptions::default()
    };
    let r = find_schedule(&fixtures::g4(&p), &p, &opts).unwrap();
    match &r.outcome {
        Outcome::Infeasible { cores } => {
            assert_eq!(cores.len(), 1);
            assert!(!cores[0].core.is_empty());
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn tiny_budget_gives_up() {
    let p = fixtures::rf1_1port();
    let g = fixtures::triple_write(&p);
    let opts = SearchOptions {
        budget: Budget::new(1),
        max_ii: Some(2),
        ..SearchOptions::default()
    };
    let r = find_schedule(&g, &p, &opts).unwrap();
    // Either the single conflict suffices or the probe runs out; never Found below mii.
    if let Some(s) = r.schedule() {
        assert!(s.ii >= r.mii);
    }
}

#[test]
fn rp_mode_parses() {
    assert_eq!("eager".parse::<RpMode>().unwrap(), RpMode::Eager);
    assert!("sometimes".parse::<RpMode>().is_err());
    assert_eq!(RpMode::Lazy.to_string(), "lazy");
}
