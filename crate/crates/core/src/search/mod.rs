//! Minimal-II search: II outermost from the lower bound, stage count
//! innermost within the stage window, one fresh solver session per probe.
//! Register pressure is either encoded up front (`eager`), added to a
//! probe only for the files a decoded schedule overloads (`lazy`), or
//! ignored (`off`).

mod liveness;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

pub use liveness::{live_ranges, live_sets, measure_pressure, LiveRange};

use crate::bounds::{self, BoundsError, StageBounds};
use crate::encoder::{encode_core, encode_register_pressure, EncodeOptions, Label, Problem};
use crate::loop_ir::{augment_loop_carried, LoopGraph};
use crate::machine::{Processor, RfIdx};
use crate::schedule::{check_schedule, decode_schedule, ModuloSchedule};
use crate::solver::{self, Backend, Budget, SatBackend, SolveOutcome, SolveStats, SolverError, Status};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RpMode {
    #[default]
    Lazy,
    Eager,
    Off,
}

impl FromStr for RpMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "lazy" => Ok(RpMode::Lazy),
            "eager" => Ok(RpMode::Eager),
            "off" => Ok(RpMode::Off),
            other => Err(format!("unknown register-pressure mode {other:?}")),
        }
    }
}

impl fmt::Display for RpMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RpMode::Lazy => "lazy",
            RpMode::Eager => "eager",
            RpMode::Off => "off",
        })
    }
}

#[derive(Debug, Clone)]
pub struct SearchOptions {
    /// Highest II probed; defaults to the sum of latencies plus the op count.
    pub max_ii: Option<u32>,
    /// Probe exactly this stage count at every II.
    pub stages: Option<u32>,
    /// Upper end of the stage window, replacing the computed bound.
    pub max_stages: Option<u32>,
    pub rp_mode: RpMode,
    pub budget: Budget,
    pub want_core: bool,
    pub encode: EncodeOptions,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            max_ii: None,
            stages: None,
            max_stages: None,
            rp_mode: RpMode::Lazy,
            budget: Budget::default(),
            want_core: false,
            encode: EncodeOptions::default(),
        }
    }
}

/// One solver call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceRow {
    pub ii: u32,
    pub stages: u32,
    pub status: Status,
    /// 0 for the first solve of a probe, then one per lazy pressure refinement.
    pub rp_round: u32,
    /// Register files with pressure constraints in this solve.
    pub rp_rfs: Vec<String>,
    pub solve_stats: SolveStats,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProbeCore {
    pub ii: u32,
    pub stages: u32,
    pub core: BTreeSet<Label>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Found {
        schedule: ModuloSchedule,
        pressure: BTreeMap<String, u32>,
    },
    /// Every probe up to the II cap was unsatisfiable.
    Infeasible { cores: Vec<ProbeCore> },
    GaveUp { reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchReport {
    pub mii: u32,
    pub max_ii: u32,
    pub outcome: Outcome,
    pub trace: Vec<TraceRow>,
}

impl SearchReport {
    pub fn schedule(&self) -> Option<&ModuloSchedule> {
        match &self.outcome {
            Outcome::Found { schedule, .. } => Some(schedule),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("internal inconsistency: {0}")]
    Internal(String),
}

pub fn default_max_ii(g: &LoopGraph, p: &Processor) -> u32 {
    let lat: u32 = g
        .operations
        .iter()
        .map(|o| p.latency(&o.opcode).unwrap_or(0))
        .sum();
    lat + g.operations.len() as u32
}

/// Stage counts probed at `ii`.
pub fn stage_window(g: &LoopGraph, ii: u32, opts: &SearchOptions) -> Result<StageBounds, BoundsError> {
    if let Some(s) = opts.stages {
        return Ok(StageBounds {
            min_stages: s,
            max_stages: s,
        });
    }
    match bounds::stage_bounds(g, ii) {
        Ok(b) => Ok(match opts.max_stages {
            Some(m) => StageBounds {
                min_stages: b.min_stages.min(m),
                max_stages: m,
            },
            None => b,
        }),
        Err(BoundsError::Disconnected) => match opts.max_stages {
            Some(m) => Ok(StageBounds {
                min_stages: bounds::critical_path(g)
                    .map(|l| ((l + i64::from(ii) - 1) / i64::from(ii)).max(1) as u32)?
                    .min(m),
                max_stages: m,
            }),
            None => Err(BoundsError::Disconnected),
        },
        Err(e) => Err(e),
    }
}

/// The problem for one probe: core model plus pressure for `rp_rfs`.
pub fn build_problem(
    g: &LoopGraph,
    p: &Processor,
    ii: u32,
    stages: u32,
    encode: EncodeOptions,
    rp_rfs: &BTreeSet<RfIdx>,
) -> Problem {
    let mut pr = encode_core(g, p, ii, stages, encode);
    if !rp_rfs.is_empty() {
        encode_register_pressure(&mut pr, g, p, rp_rfs).expect("register files exist");
    }
    pr
}

pub fn find_schedule(g: &LoopGraph, p: &Processor, opts: &SearchOptions) -> Result<SearchReport, SearchError> {
    find_schedule_with(&SatBackend, g, p, opts)
}

/// Result of one `(II, stages)` probe.
#[derive(Debug)]
pub enum ProbeOutcome {
    Found {
        schedule: ModuloSchedule,
        pressure: BTreeMap<String, u32>,
    },
    /// Unsatisfiable; `problem` is the final problem the core refers to.
    Unsat { core: BTreeSet<Label>, problem: Problem },
    Unknown(String),
}

/// Solves one `(II, stages)` probe on `g` (already augmented), refining
/// with pressure constraints in lazy mode. `sticky` holds the register
/// files already known to overflow at this II and grows with new ones.
#[allow(clippy::too_many_arguments)]
pub fn probe(
    backend: &dyn Backend,
    g: &LoopGraph,
    p: &Processor,
    ii: u32,
    stages: u32,
    opts: &SearchOptions,
    sticky: &mut BTreeSet<RfIdx>,
    trace: &mut Vec<TraceRow>,
) -> Result<ProbeOutcome, SearchError> {
    let base_rfs = match opts.rp_mode {
        RpMode::Eager => (0..p.register_files.len()).collect(),
        RpMode::Lazy => sticky.clone(),
        RpMode::Off => BTreeSet::new(),
    };
    let mut pr = build_problem(g, p, ii, stages, opts.encode, &base_rfs);
    let mut session = backend.open(&pr)?;
    let mut rp_round = 0;
    loop {
        let out = session.solve(&opts.budget, opts.want_core)?;
        trace.push(TraceRow {
            ii,
            stages,
            status: out.status(),
            rp_round,
            rp_rfs: pr.rp_rfs.iter().map(|&r| p.register_files[r].name.clone()).collect(),
            solve_stats: session.stats(),
        });
        let m = match out {
            SolveOutcome::Unknown(reason) => return Ok(ProbeOutcome::Unknown(reason)),
            SolveOutcome::Unsat(core) => return Ok(ProbeOutcome::Unsat { core, problem: pr }),
            SolveOutcome::Sat(m) => m,
        };
        let violated = solver::evaluate(&pr, &m);
        if !violated.is_empty() {
            return Err(SearchError::Internal(format!("backend model violates {violated:?}")));
        }
        let schedule = decode_schedule(&m, &pr, g, p).map_err(|e| SearchError::Internal(e.to_string()))?;
        let bad = check_schedule(&schedule, g, p);
        if !bad.is_empty() {
            return Err(SearchError::Internal(format!("decoded schedule is illegal: {bad:?}")));
        }
        let pressure = measure_pressure(&schedule, g, p);
        let over: BTreeSet<RfIdx> = p
            .register_files
            .iter()
            .enumerate()
            .filter(|(_, rf)| pressure.get(&rf.name).copied().unwrap_or(0) > rf.capacity)
            .map(|(i, _)| i)
            .collect();
        if opts.rp_mode == RpMode::Off || over.is_empty() {
            return Ok(ProbeOutcome::Found { schedule, pressure });
        }
        if let Some(&rf) = over.iter().find(|rf| pr.rp_rfs.contains(rf)) {
            let name = &p.register_files[rf].name;
            return Err(SearchError::Internal(format!(
                "pressure constraints on {name} hold but the analyzer measures {}",
                pressure[name]
            )));
        }
        encode_register_pressure(&mut pr, g, p, &over).expect("register files exist");
        sticky.extend(over);
        session.extend(&pr)?;
        rp_round += 1;
    }
}

/// Runs the search with an explicit backend. `g` is augmented with the
/// loop-carried anti-dependencies first.
pub fn find_schedule_with(
    backend: &dyn Backend,
    g: &LoopGraph,
    p: &Processor,
    opts: &SearchOptions,
) -> Result<SearchReport, SearchError> {
    let g = &augment_loop_carried(g);
    let mii = bounds::mii(g, p)?;
    let max_ii = opts.max_ii.unwrap_or_else(|| default_max_ii(g, p).max(mii));
    let mut trace = Vec::new();
    let mut cores = Vec::new();
    // IIs below the routing bound are unsatisfiable without a probe.
    let start = mii.max(bounds::route_mii(g, p, opts.encode.writeback_offset));

    for ii in start..=max_ii {
        let window = match stage_window(g, ii, opts) {
            Ok(w) => w,
            Err(BoundsError::NegativeCycle { .. }) => continue,
            Err(e) => return Err(e.into()),
        };
        // Files found overloaded earlier at this II keep their constraints.
        let mut sticky = BTreeSet::new();
        for stages in window.min_stages..=window.max_stages {
            match probe(backend, g, p, ii, stages, opts, &mut sticky, &mut trace)? {
                ProbeOutcome::Found { schedule, pressure } => {
                    return Ok(SearchReport {
                        mii,
                        max_ii,
                        outcome: Outcome::Found { schedule, pressure },
                        trace,
                    })
                }
                ProbeOutcome::Unsat { core, .. } => cores.push(ProbeCore { ii, stages, core }),
                ProbeOutcome::Unknown(reason) => {
                    return Ok(SearchReport {
                        mii,
                        max_ii,
                        outcome: Outcome::GaveUp {
                            reason: format!("II={ii} stages={stages}: {reason}"),
                        },
                        trace,
                    })
                }
            }
        }
    }
    Ok(SearchReport {
        mii,
        max_ii,
        outcome: Outcome::Infeasible { cores },
        trace,
    })
}

#[cfg(test)]
mod tests;
