//! Solver interface and backends.
//!
//! The search only talks to [`Backend`] / [`Session`]. Two backends ship
//! in-tree:
//!
//! * [`SatBackend`] compiles the bounded integer/Boolean problem to CNF
//!   (order + direct encoding of every integer term) and runs CaDiCaL under
//!   one selector literal per label. Unsatisfiable cores are the failed
//!   selectors.
//! * [`EnumBackend`] is a bounded exhaustive enumerator over the declared
//!   variable domains, usable only on very small problems. It exists to
//!   cross-check the SAT path.
//!
//! Every answer can be re-checked with [`evaluate`].

mod enumerate;
mod eval;
mod sat;
mod smtlib;

use std::collections::BTreeSet;
use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

pub use enumerate::EnumBackend;
pub use eval::{eval_bool, eval_int, evaluate};
pub use sat::SatBackend;
pub use smtlib::export_smtlib;

use crate::encoder::{BoolVar, IntVar, Label, Problem};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SolverError {
    #[error("solver backend unavailable: {0}")]
    Unavailable(String),
    #[error("session no longer matches the problem: {0}")]
    SessionInvalidated(String),
    #[error("problem too large for this backend: {0}")]
    TooLarge(String),
}

/// Per-call resource limits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Budget {
    /// Deterministic backend resource units (conflicts for the SAT backend,
    /// search nodes for the enumerator). Must be positive.
    pub resource_limit: u64,
    pub wall_clock: Option<Duration>,
}

impl Budget {
    pub fn new(resource_limit: u64) -> Self {
        assert!(resource_limit > 0, "resource limit must be positive");
        Budget {
            resource_limit,
            wall_clock: None,
        }
    }

    pub fn unlimited() -> Self {
        Budget::new(u64::MAX)
    }
}

impl Default for Budget {
    fn default() -> Self {
        Budget::new(2_000_000)
    }
}

/// Values for every declared variable of a problem.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Model {
    pub ints: Vec<i64>,
    pub bools: Vec<bool>,
}

impl Model {
    pub fn int(&self, v: IntVar) -> i64 {
        self.ints[v.0 as usize]
    }

    pub fn bool(&self, v: BoolVar) -> bool {
        self.bools[v.0 as usize]
    }

    /// All-zero (all-false) assignment for `pr`.
    pub fn zeros(pr: &Problem) -> Model {
        Model {
            ints: vec![0; pr.int_vars.len()],
            bools: vec![false; pr.bool_vars.len()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SolveOutcome {
    Sat(Model),
    /// The core is empty when it was not requested.
    Unsat(BTreeSet<Label>),
    Unknown(String),
}

impl SolveOutcome {
    pub fn status(&self) -> Status {
        match self {
            SolveOutcome::Sat(_) => Status::Sat,
            SolveOutcome::Unsat(_) => Status::Unsat,
            SolveOutcome::Unknown(_) => Status::Unknown,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Sat,
    Unsat,
    Unknown,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SolveStats {
    pub variables: u64,
    pub clauses: u64,
    pub assumptions: u64,
    /// Deterministic work counter where the backend exposes one.
    pub nodes: u64,
}

pub trait Session {
    /// Loads declarations and constraints of `pr` that the session has not
    /// seen yet. `pr` must extend the problem the session was opened on.
    fn extend(&mut self, pr: &Problem) -> Result<(), SolverError>;

    fn solve(&mut self, budget: &Budget, want_core: bool) -> Result<SolveOutcome, SolverError>;

    fn stats(&self) -> SolveStats;
}

pub trait Backend {
    fn name(&self) -> &'static str;

    /// Whether [`Budget::resource_limit`] is a deterministic counter.
    fn deterministic_limits(&self) -> bool;

    fn open(&self, pr: &Problem) -> Result<Box<dyn Session>, SolverError>;
}

/// One-shot solve on a fresh session.
pub fn solve(
    backend: &dyn Backend,
    pr: &Problem,
    budget: &Budget,
    want_core: bool,
) -> Result<SolveOutcome, SolverError> {
    backend.open(pr)?.solve(budget, want_core)
}

/// Brings `session` up to date with `pr` (which extends what it was opened
/// on) and solves again, reusing what the session has learnt.
pub fn solve_incremental(
    session: &mut dyn Session,
    pr: &Problem,
    budget: &Budget,
    want_core: bool,
) -> Result<SolveOutcome, SolverError> {
    session.extend(pr)?;
    session.solve(budget, want_core)
}

/// Whether `core` on its own is unsatisfiable.
pub fn core_is_unsat(
    backend: &dyn Backend,
    pr: &Problem,
    core: &BTreeSet<Label>,
    budget: &Budget,
) -> Result<bool, SolverError> {
    let sub = pr.restricted(core);
    Ok(matches!(solve(backend, &sub, budget, false)?, SolveOutcome::Unsat(_)))
}

/// Deletion-based core minimisation: drop labels one at a time and keep the
/// drop whenever the rest stays unsatisfiable. Stops early (returning the
/// current, still valid, core) if the budget runs out.
pub fn minimize_core(
    backend: &dyn Backend,
    pr: &Problem,
    core: &BTreeSet<Label>,
    budget: &Budget,
) -> Result<BTreeSet<Label>, SolverError> {
    let mut current = core.clone();
    for label in core.iter() {
        let mut trial = current.clone();
        trial.remove(label);
        match solve(backend, &pr.restricted(&trial), budget, true)? {
            SolveOutcome::Unsat(sub) => {
                current = if sub.is_empty() { trial } else { sub };
            }
            SolveOutcome::Sat(_) => {}
            SolveOutcome::Unknown(_) => break,
        }
    }
    Ok(current)
}
