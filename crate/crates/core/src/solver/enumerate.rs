//! Exhaustive enumeration over the declared variable domains.
//!
//! Variables are assigned in declaration order (integers first) and each
//! constraint is checked as soon as its last variable is assigned. Only
//! practical for problems with a handful of variables.

use std::collections::BTreeSet;

use super::{eval_bool, Backend, Budget, Model, Session, SolveOutcome, SolveStats, SolverError};
use crate::encoder::{Label, Problem};

#[derive(Debug, Clone, Copy, Default)]
pub struct EnumBackend;

impl Backend for EnumBackend {
    fn name(&self) -> &'static str {
        "enumerate"
    }

    fn deterministic_limits(&self) -> bool {
        true
    }

    fn open(&self, pr: &Problem) -> Result<Box<dyn Session>, SolverError> {
        Ok(Box::new(EnumSession {
            pr: pr.clone(),
            nodes: 0,
        }))
    }
}

struct EnumSession {
    pr: Problem,
    nodes: u64,
}

enum Search {
    Found(Model),
    Exhausted,
    OutOfBudget,
}

struct Dfs<'a> {
    pr: &'a Problem,
    /// Constraint indices to check once position `i` is assigned.
    ready: Vec<Vec<usize>>,
    model: Model,
    nodes: u64,
    limit: u64,
}

impl Dfs<'_> {
    fn position_count(&self) -> usize {
        self.pr.int_vars.len() + self.pr.bool_vars.len()
    }

    fn consistent(&self, pos: usize) -> bool {
        self.ready[pos]
            .iter()
            .all(|&ci| eval_bool(&self.pr.constraints[ci].expr, &self.model))
    }

    fn run(&mut self, pos: usize) -> Search {
        if pos == self.position_count() {
            return Search::Found(self.model.clone());
        }
        let nints = self.pr.int_vars.len();
        let values: Vec<i64> = if pos < nints {
            let d = &self.pr.int_vars[pos];
            (d.lo..=d.hi).collect()
        } else {
            vec![0, 1]
        };
        for v in values {
            self.nodes += 1;
            if self.nodes > self.limit {
                return Search::OutOfBudget;
            }
            if pos < nints {
                self.model.ints[pos] = v;
            } else {
                self.model.bools[pos - nints] = v == 1;
            }
            if self.consistent(pos) {
                match self.run(pos + 1) {
                    Search::Exhausted => {}
                    other => return other,
                }
            }
        }
        Search::Exhausted
    }
}

fn search(pr: &Problem, limit: u64, nodes: &mut u64) -> Search {
    let nints = pr.int_vars.len();
    let npos = nints + pr.bool_vars.len();
    let mut always = Vec::new();
    let mut ready = vec![Vec::new(); npos.max(1)];
    for (ci, c) in pr.constraints.iter().enumerate() {
        let last = std::cell::Cell::new(None::<usize>);
        c.expr.visit_vars(
            &mut |v| last.set(last.get().max(Some(v.0 as usize))),
            &mut |b| last.set(last.get().max(Some(nints + b.0 as usize))),
        );
        match last.get() {
            Some(p) => ready[p].push(ci),
            None => always.push(ci),
        }
    }
    let model = Model::zeros(pr);
    if !always.iter().all(|&ci| eval_bool(&pr.constraints[ci].expr, &model)) {
        return Search::Exhausted;
    }
    let mut dfs = Dfs {
        pr,
        ready,
        model,
        nodes: 0,
        limit: limit.saturating_sub(*nodes),
    };
    let out = dfs.run(0);
    *nodes += dfs.nodes;
    out
}

impl Session for EnumSession {
    fn extend(&mut self, pr: &Problem) -> Result<(), SolverError> {
        if pr.ii != self.pr.ii || pr.constraints.len() < self.pr.constraints.len() {
            return Err(SolverError::SessionInvalidated(
                "problem does not extend the loaded one".into(),
            ));
        }
        self.pr = pr.clone();
        Ok(())
    }

    fn solve(&mut self, budget: &Budget, want_core: bool) -> Result<SolveOutcome, SolverError> {
        let limit = budget.resource_limit;
        let mut nodes = 0;
        let unknown = || SolveOutcome::Unknown(format!("resource limit of {limit} nodes reached"));
        let out = match search(&self.pr, limit, &mut nodes) {
            Search::Found(m) => SolveOutcome::Sat(m),
            Search::OutOfBudget => unknown(),
            Search::Exhausted if !want_core => SolveOutcome::Unsat(BTreeSet::new()),
            Search::Exhausted => {
                let mut core: BTreeSet<Label> = self.pr.labels().cloned().collect();
                let all: Vec<Label> = core.iter().cloned().collect();
                for label in all {
                    core.remove(&label);
                    match search(&self.pr.restricted(&core), limit, &mut nodes) {
                        Search::Exhausted => {}
                        Search::Found(_) => {
                            core.insert(label);
                        }
                        Search::OutOfBudget => {
                            core.insert(label);
                            break;
                        }
                    }
                }
                SolveOutcome::Unsat(core)
            }
        };
        self.nodes = nodes;
        Ok(out)
    }

    fn stats(&self) -> SolveStats {
        SolveStats {
            variables: (self.pr.int_vars.len() + self.pr.bool_vars.len()) as u64,
            clauses: 0,
            assumptions: self.pr.constraints.len() as u64,
            nodes: self.nodes,
        }
    }
}
