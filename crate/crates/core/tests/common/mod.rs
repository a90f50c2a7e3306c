#![allow(dead_code)]

use std::collections::BTreeSet;

use optswp::encoder::{live_var, EncodeOptions, EncodingStyle};
use optswp::loop_ir::{augment_loop_carried, LoopGraph};
use optswp::machine::Processor;
use optswp::schedule::{brute_force_min_ii, check_schedule, decode_schedule, simulate, OracleLimits};
use optswp::search::{build_problem, find_schedule, live_sets, Outcome, RpMode, SearchOptions, SearchReport};
use optswp::solver::{solve, solve_incremental, Backend, Budget, SatBackend, SolveOutcome, Status};
use optswp::testgen::{search_options, Instance};

pub fn search(x: &Instance, rp: RpMode) -> SearchReport {
    let opts = SearchOptions {
        rp_mode: rp,
        ..search_options(&x.graph, &x.machine)
    };
    find_schedule(&x.graph, &x.machine, &opts).unwrap_or_else(|e| panic!("seed {}: {e}", x.seed))
}

pub fn found_ii(r: &SearchReport) -> Option<u32> {
    r.schedule().map(|s| s.ii)
}

/// The oracle's minimal II, trying at most `max_ii` (default: the oracle's
/// own cap).
pub fn oracle_ii(x: &Instance, pressure: bool, max_ii: Option<u32>) -> Option<u32> {
    let g = augment_loop_carried(&x.graph);
    let lim = OracleLimits {
        pressure,
        max_ii,
        ..OracleLimits::default()
    };
    brute_force_min_ii(&g, &x.machine, &lim)
        .unwrap_or_else(|e| panic!("seed {}: {e}", x.seed))
        .map(|(ii, _)| ii)
}

/// Checks a found schedule both statically and by replay. Returns a
/// description of the first problem.
pub fn soundness(x: &Instance, r: &SearchReport) -> Result<(), String> {
    let Outcome::Found { schedule, .. } = &r.outcome else {
        return Ok(());
    };
    let g = augment_loop_carried(&x.graph);
    let bad = check_schedule(schedule, &g, &x.machine);
    if !bad.is_empty() {
        return Err(format!("seed {}: violations {bad:?}", x.seed));
    }
    let trip = u64::from(schedule.stages) + 3;
    match simulate(schedule, trip) {
        Ok(t) if t == (trip - 1) * u64::from(schedule.ii) + schedule.span() as u64 => Ok(()),
        Ok(t) => Err(format!("seed {}: simulate gave {t}", x.seed)),
        Err(e) => Err(format!("seed {}: replay {e}", x.seed)),
    }
}

/// Solves `(ii, stages)` with pressure on every register file and compares
/// each `Live` variable in the model with the analyzer's live sets for the
/// decoded schedule. Returns whether a model existed.
pub fn live_agreement(x: &Instance, ii: u32, stages: u32) -> Result<bool, String> {
    let g = augment_loop_carried(&x.graph);
    let p = &x.machine;
    let rfs: BTreeSet<usize> = (0..p.register_files.len()).collect();
    let pr = build_problem(&g, p, ii, stages, EncodeOptions::default(), &rfs);
    let m = match solve(&SatBackend, &pr, &Budget::unlimited(), false).map_err(|e| e.to_string())? {
        SolveOutcome::Sat(m) => m,
        SolveOutcome::Unsat(_) => return Ok(false),
        SolveOutcome::Unknown(r) => return Err(r),
    };
    let s = decode_schedule(&m, &pr, &g, p).map_err(|e| e.to_string())?;
    let sets = live_sets(&s, &g, p);
    for (rf, file) in p.register_files.iter().enumerate() {
        for (ri, reg) in g.virtual_registers.iter().enumerate() {
            for c in 0..i64::from(ii) {
                let analyzer = sets[&file.name][c as usize].contains(reg);
                let encoder = live_var(&pr, rf, ri, c).is_some_and(|v| m.bool(v));
                if analyzer != encoder {
                    return Err(format!(
                        "seed {}: Live[{},{reg},{c}] is {encoder}, analyzer says {analyzer}",
                        x.seed, file.name
                    ));
                }
            }
        }
    }
    Ok(true)
}

pub fn probe_status(g: &LoopGraph, p: &Processor, ii: u32, stages: u32, style: EncodingStyle) -> Status {
    let pr = build_problem(
        g,
        p,
        ii,
        stages,
        EncodeOptions {
            style,
            ..EncodeOptions::default()
        },
        &BTreeSet::new(),
    );
    solve(&SatBackend, &pr, &Budget::unlimited(), false).unwrap().status()
}

pub fn probe_status_with(backend: &dyn Backend, g: &LoopGraph, p: &Processor, ii: u32, stages: u32) -> Status {
    let pr = build_problem(g, p, ii, stages, EncodeOptions::default(), &BTreeSet::new());
    solve(backend, &pr, &Budget::unlimited(), false).unwrap().status()
}

/// Status of `(ii, stages)` with pressure on every file, once by extending
/// a session opened on the core model and once from scratch.
pub fn incremental_vs_scratch(g: &LoopGraph, p: &Processor, ii: u32, stages: u32) -> (Status, Status) {
    let budget = Budget::unlimited();
    let mut pr = build_problem(g, p, ii, stages, EncodeOptions::default(), &BTreeSet::new());
    let mut session = SatBackend.open(&pr).unwrap();
    session.solve(&budget, false).unwrap();
    let rfs: BTreeSet<usize> = (0..p.register_files.len()).collect();
    optswp::encoder::encode_register_pressure(&mut pr, g, p, &rfs).unwrap();
    let inc = solve_incremental(session.as_mut(), &pr, &budget, false).unwrap().status();
    let scratch = solve(&SatBackend, &pr, &Budget::unlimited(), false).unwrap().status();
    (inc, scratch)
}
