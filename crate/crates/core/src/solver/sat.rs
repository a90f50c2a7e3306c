//! CaDiCaL backend.
//!
//! Every integer term gets a finite domain and order literals
//! `ge[i] <=> t >= vals[i]` (`ge[0]` is constant true). Linear comparisons
//! between two terms become order-encoded difference clauses, everything
//! else goes through value tables. Each labelled constraint is guarded by a
//! selector literal that is assumed at solve time.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use cadical::Timeout;

use super::{Backend, Budget, Model, Session, SolveOutcome, SolveStats, SolverError};
use crate::encoder::{BoolExpr, CmpOp, IntExpr, Label, Problem};

type Lit = i32;

const TRUE: Lit = 1;
const FALSE: Lit = -1;

#[derive(Debug, Clone, Copy, Default)]
pub struct SatBackend;

impl Backend for SatBackend {
    fn name(&self) -> &'static str {
        "cadical"
    }

    fn deterministic_limits(&self) -> bool {
        true
    }

    fn open(&self, pr: &Problem) -> Result<Box<dyn Session>, SolverError> {
        let mut s = SatSession::new(pr);
        s.extend(pr)?;
        Ok(Box::new(s))
    }
}

struct Fd {
    vals: Vec<i64>,
    ge: Vec<Lit>,
    eq: Vec<Lit>,
}

struct Compiler {
    solver: cadical::Solver<Timeout>,
    next_var: i32,
    clauses: u64,
    fds: Vec<Fd>,
    int_cache: HashMap<IntExpr, usize>,
    bool_cache: HashMap<BoolExpr, Lit>,
    diff_cache: HashMap<(usize, usize, i64), Lit>,
    int_vars: Vec<usize>,
    bool_vars: Vec<Lit>,
}

impl Compiler {
    fn new() -> Self {
        let mut c = Compiler {
            solver: cadical::Solver::new(),
            next_var: 1,
            clauses: 0,
            fds: Vec::new(),
            int_cache: HashMap::new(),
            bool_cache: HashMap::new(),
            diff_cache: HashMap::new(),
            int_vars: Vec::new(),
            bool_vars: Vec::new(),
        };
        c.clause(&[TRUE]);
        c
    }

    fn fresh(&mut self) -> Lit {
        self.next_var += 1;
        self.next_var
    }

    fn clause(&mut self, lits: &[Lit]) {
        if lits.contains(&TRUE) {
            return;
        }
        let lits: Vec<Lit> = lits.iter().copied().filter(|&l| l != FALSE).collect();
        self.clauses += 1;
        self.solver.add_clause(lits);
    }

    // ---- finite-domain terms -------------------------------------------

    fn new_fd(&mut self, mut vals: Vec<i64>) -> usize {
        vals.sort_unstable();
        vals.dedup();
        assert!(!vals.is_empty(), "empty domain");
        let mut ge = vec![TRUE];
        for i in 1..vals.len() {
            let l = self.fresh();
            if i > 1 {
                self.clause(&[-l, ge[i - 1]]);
            }
            ge.push(l);
        }
        let n = vals.len();
        self.fds.push(Fd {
            vals,
            ge,
            eq: vec![0; n],
        });
        self.fds.len() - 1
    }

    /// Literal for `t >= v`.
    fn ge_val(&self, t: usize, v: i64) -> Lit {
        let fd = &self.fds[t];
        match fd.vals.iter().position(|&x| x >= v) {
            Some(i) => fd.ge[i],
            None => FALSE,
        }
    }

    fn ge_idx(&self, t: usize, i: usize) -> Lit {
        let fd = &self.fds[t];
        if i >= fd.vals.len() {
            FALSE
        } else {
            fd.ge[i]
        }
    }

    fn eq_idx(&mut self, t: usize, i: usize) -> Lit {
        let cached = self.fds[t].eq[i];
        if cached != 0 {
            return cached;
        }
        let lo = self.ge_idx(t, i);
        let hi = self.ge_idx(t, i + 1);
        let l = if hi == FALSE {
            lo
        } else if lo == TRUE {
            -hi
        } else {
            let e = self.fresh();
            self.clause(&[-e, lo]);
            self.clause(&[-e, -hi]);
            self.clause(&[e, -lo, hi]);
            e
        };
        self.fds[t].eq[i] = l;
        l
    }

    fn eq_val(&mut self, t: usize, v: i64) -> Lit {
        match self.fds[t].vals.binary_search(&v) {
            Ok(i) => self.eq_idx(t, i),
            Err(_) => FALSE,
        }
    }

    fn vals(&self, t: usize) -> Vec<i64> {
        self.fds[t].vals.clone()
    }

    fn constant(&mut self, k: i64) -> usize {
        let e = IntExpr::Const(k);
        if let Some(&t) = self.int_cache.get(&e) {
            return t;
        }
        let t = self.new_fd(vec![k]);
        self.int_cache.insert(e, t);
        t
    }

    /// `a * t + k`, sharing the literals of `t`.
    fn affine(&mut self, t: usize, a: i64, k: i64) -> usize {
        if a == 1 && k == 0 {
            return t;
        }
        if a == 0 {
            return self.constant(k);
        }
        let fd = &self.fds[t];
        let n = fd.vals.len();
        let (vals, ge) = if a > 0 {
            (fd.vals.iter().map(|v| a * v + k).collect(), fd.ge.clone())
        } else {
            // r >= a*v_i + k  <=>  t <= v_i  <=>  !ge[i+1]
            let vals: Vec<i64> = fd.vals.iter().rev().map(|v| a * v + k).collect();
            let mut ge = vec![TRUE];
            for j in 1..n {
                ge.push(-fd.ge[n - j]);
            }
            (vals, ge)
        };
        self.fds.push(Fd {
            vals,
            ge,
            eq: vec![0; n],
        });
        self.fds.len() - 1
    }

    fn add_fd(&mut self, x: usize, y: usize) -> usize {
        let xv = self.vals(x);
        let yv = self.vals(y);
        let mut sums: Vec<i64> = xv.iter().flat_map(|a| yv.iter().map(move |b| a + b)).collect();
        sums.sort_unstable();
        sums.dedup();
        let r = self.new_fd(sums);
        for i in 0..xv.len() {
            for j in 0..yv.len() {
                let s = xv[i] + yv[j];
                // x >= xv[i] & y >= yv[j] -> r >= s
                let (gx, gy) = (self.ge_idx(x, i), self.ge_idx(y, j));
                let gr = self.ge_val(r, s);
                self.clause(&[-gx, -gy, gr]);
                // x <= xv[i] & y <= yv[j] -> r <= s
                let (nx, ny) = (self.ge_idx(x, i + 1), self.ge_idx(y, j + 1));
                let nr = self.ge_val(r, s + 1);
                self.clause(&[nx, ny, -nr]);
            }
        }
        r
    }

    fn linearize<'e>(e: &'e IntExpr, coef: i64, atoms: &mut Vec<(i64, &'e IntExpr)>, k: &mut i64) {
        match e {
            IntExpr::Const(c) => *k += coef * c,
            IntExpr::Sum(xs) => xs.iter().for_each(|x| Self::linearize(x, coef, atoms, k)),
            IntExpr::Scale(a, x) => Self::linearize(x, coef * a, atoms, k),
            other => atoms.push((coef, other)),
        }
    }

    fn linear(&mut self, e: &IntExpr, coef: i64) -> (BTreeMap<usize, i64>, i64) {
        let mut atoms = Vec::new();
        let mut k = 0;
        Self::linearize(e, coef, &mut atoms, &mut k);
        let mut terms = BTreeMap::new();
        for (a, x) in atoms {
            let t = self.int(x);
            *terms.entry(t).or_insert(0) += a;
        }
        terms.retain(|_, a| *a != 0);
        (terms, k)
    }

    fn sum_terms(&mut self, terms: &BTreeMap<usize, i64>, k: i64) -> usize {
        let mut parts: Vec<usize> = terms.iter().map(|(&t, &a)| self.affine(t, a, 0)).collect();
        if parts.is_empty() {
            return self.constant(k);
        }
        while parts.len() > 1 {
            let mut next = Vec::with_capacity(parts.len().div_ceil(2));
            for pair in parts.chunks(2) {
                next.push(if pair.len() == 2 { self.add_fd(pair[0], pair[1]) } else { pair[0] });
            }
            parts = next;
        }
        self.affine(parts[0], 1, k)
    }

    fn int(&mut self, e: &IntExpr) -> usize {
        if let IntExpr::Var(v) = e {
            return self.int_vars[v.0 as usize];
        }
        if let Some(&t) = self.int_cache.get(e) {
            return t;
        }
        let t = match e {
            IntExpr::Const(k) => self.new_fd(vec![*k]),
            IntExpr::Var(_) => unreachable!(),
            IntExpr::Sum(_) | IntExpr::Scale(..) => {
                let (terms, k) = self.linear(e, 1);
                self.sum_terms(&terms, k)
            }
            IntExpr::Mod(x, m) => {
                let x = self.int(x);
                let xv = self.vals(x);
                let r = self.new_fd(xv.iter().map(|v| v.rem_euclid(*m)).collect());
                for (i, v) in xv.iter().enumerate() {
                    let ex = self.eq_idx(x, i);
                    let er = self.eq_val(r, v.rem_euclid(*m));
                    self.clause(&[-ex, er]);
                }
                r
            }
            IntExpr::Ite(c, a, b) => {
                let c = self.lit(c);
                let a = self.int(a);
                let b = self.int(b);
                let (av, bv) = (self.vals(a), self.vals(b));
                let r = self.new_fd(av.iter().chain(bv.iter()).copied().collect());
                for (i, v) in av.iter().enumerate() {
                    let ea = self.eq_idx(a, i);
                    let er = self.eq_val(r, *v);
                    self.clause(&[-c, -ea, er]);
                }
                for (i, v) in bv.iter().enumerate() {
                    let eb = self.eq_idx(b, i);
                    let er = self.eq_val(r, *v);
                    self.clause(&[c, -eb, er]);
                }
                r
            }
            IntExpr::Min(xs) | IntExpr::Max(xs) => {
                let is_min = matches!(e, IntExpr::Min(_));
                let xs: Vec<usize> = xs.iter().map(|x| self.int(x)).collect();
                let all: Vec<i64> = xs.iter().flat_map(|&x| self.vals(x)).collect();
                let r = self.new_fd(all);
                for i in 1..self.fds[r].vals.len() {
                    let v = self.fds[r].vals[i];
                    let gr = self.fds[r].ge[i];
                    let gs: Vec<Lit> = xs.iter().map(|&x| self.ge_val(x, v)).collect();
                    if is_min {
                        // min >= v <=> all >= v
                        for &g in &gs {
                            self.clause(&[-gr, g]);
                        }
                        let mut cl: Vec<Lit> = gs.iter().map(|g| -g).collect();
                        cl.push(gr);
                        self.clause(&cl);
                    } else {
                        // max >= v <=> some >= v
                        for &g in &gs {
                            self.clause(&[-g, gr]);
                        }
                        let mut cl = gs.clone();
                        cl.push(-gr);
                        self.clause(&cl);
                    }
                }
                r
            }
        };
        self.int_cache.insert(e.clone(), t);
        t
    }

    // ---- Boolean structure ---------------------------------------------

    fn and_lits(&mut self, lits: Vec<Lit>) -> Lit {
        if lits.contains(&FALSE) {
            return FALSE;
        }
        let mut lits: Vec<Lit> = lits.into_iter().filter(|&l| l != TRUE).collect();
        lits.sort_unstable();
        lits.dedup();
        match lits.len() {
            0 => TRUE,
            1 => lits[0],
            _ => {
                let a = self.fresh();
                for &l in &lits {
                    self.clause(&[-a, l]);
                }
                let mut cl: Vec<Lit> = lits.iter().map(|l| -l).collect();
                cl.push(a);
                self.clause(&cl);
                a
            }
        }
    }

    fn or_lits(&mut self, lits: Vec<Lit>) -> Lit {
        -self.and_lits(lits.into_iter().map(|l| -l).collect())
    }

    /// Literal for `x >= y + d`.
    fn diff_ge(&mut self, x: usize, y: usize, d: i64) -> Lit {
        if let Some(&l) = self.diff_cache.get(&(x, y, d)) {
            return l;
        }
        let r = self.fresh();
        let (xv, yv) = (self.vals(x), self.vals(y));
        for (i, v) in yv.iter().enumerate() {
            let gy = self.ge_idx(y, i);
            let gx = self.ge_val(x, v + d);
            self.clause(&[-r, -gy, gx]);
        }
        // otherwise y >= x - d + 1
        for (i, v) in xv.iter().enumerate() {
            let gx = self.ge_idx(x, i);
            let gy = self.ge_val(y, v - d + 1);
            self.clause(&[r, -gx, gy]);
        }
        self.diff_cache.insert((x, y, d), r);
        r
    }

    fn cmp(&mut self, op: CmpOp, a: &IntExpr, b: &IntExpr) -> Lit {
        let diff = IntExpr::Sum(vec![a.clone(), IntExpr::Scale(-1, Box::new(b.clone()))]);
        let (terms, k) = self.linear(&diff, 1);
        // sum(terms) + k  op  0
        let entries: Vec<(usize, i64)> = terms.iter().map(|(&t, &a)| (t, a)).collect();
        match entries.as_slice() {
            [] => {
                if op.holds(k, 0) {
                    TRUE
                } else {
                    FALSE
                }
            }
            [(t, c)] => self.unary(*t, |v| op.holds(c * v + k, 0)),
            [(t1, c1), (t2, c2)] if (*c1 == 1 && *c2 == -1) || (*c1 == -1 && *c2 == 1) => {
                let (x, y) = if *c1 == 1 { (*t1, *t2) } else { (*t2, *t1) };
                // x - y + k op 0
                match op {
                    CmpOp::Ge => self.diff_ge(x, y, -k),
                    CmpOp::Gt => self.diff_ge(x, y, -k + 1),
                    CmpOp::Le => self.diff_ge(y, x, k),
                    CmpOp::Lt => self.diff_ge(y, x, k + 1),
                    CmpOp::Eq | CmpOp::Ne => {
                        let ge = self.diff_ge(x, y, -k);
                        let le = self.diff_ge(y, x, k);
                        let eq = self.and_lits(vec![ge, le]);
                        if op == CmpOp::Eq {
                            eq
                        } else {
                            -eq
                        }
                    }
                }
            }
            _ => {
                let s = self.sum_terms(&terms, k);
                self.unary(s, |v| op.holds(v, 0))
            }
        }
    }

    /// Literal for `pred(t)`.
    fn unary(&mut self, t: usize, pred: impl Fn(i64) -> bool) -> Lit {
        let vals = self.vals(t);
        let n = vals.len();
        let sat: Vec<usize> = (0..n).filter(|&i| pred(vals[i])).collect();
        if sat.is_empty() {
            return FALSE;
        }
        if sat.len() == n {
            return TRUE;
        }
        let contiguous = sat.last().unwrap() - sat[0] + 1 == sat.len();
        if contiguous && *sat.last().unwrap() == n - 1 {
            return self.ge_idx(t, sat[0]);
        }
        if contiguous && sat[0] == 0 {
            return -self.ge_idx(t, sat.len());
        }
        if sat.len() == 1 {
            return self.eq_idx(t, sat[0]);
        }
        if contiguous {
            let lo = self.ge_idx(t, sat[0]);
            let hi = self.ge_idx(t, sat.last().unwrap() + 1);
            return self.and_lits(vec![lo, -hi]);
        }
        let eqs: Vec<Lit> = sat.iter().map(|&i| self.eq_idx(t, i)).collect();
        self.or_lits(eqs)
    }

    fn lit(&mut self, e: &BoolExpr) -> Lit {
        match e {
            BoolExpr::Const(b) => return if *b { TRUE } else { FALSE },
            BoolExpr::Var(v) => return self.bool_vars[v.0 as usize],
            BoolExpr::Not(x) => return -self.lit(x),
            _ => {}
        }
        if let Some(&l) = self.bool_cache.get(e) {
            return l;
        }
        let l = match e {
            BoolExpr::And(xs) => {
                let ls = xs.iter().map(|x| self.lit(x)).collect();
                self.and_lits(ls)
            }
            BoolExpr::Or(xs) => {
                let ls = xs.iter().map(|x| self.lit(x)).collect();
                self.or_lits(ls)
            }
            BoolExpr::Implies(a, b) => {
                let (a, b) = (self.lit(a), self.lit(b));
                self.or_lits(vec![-a, b])
            }
            BoolExpr::Iff(a, b) => {
                let (a, b) = (self.lit(a), self.lit(b));
                let r = self.fresh();
                self.clause(&[-r, -a, b]);
                self.clause(&[-r, a, -b]);
                self.clause(&[r, a, b]);
                self.clause(&[r, -a, -b]);
                r
            }
            BoolExpr::ExactlyOne(xs) => {
                let count = IntExpr::Sum(xs.iter().map(|x| x.clone().indicator()).collect());
                self.cmp(CmpOp::Eq, &count, &IntExpr::Const(1))
            }
            BoolExpr::Cmp(op, a, b) => self.cmp(*op, a, b),
            BoolExpr::Const(_) | BoolExpr::Var(_) | BoolExpr::Not(_) => unreachable!(),
        };
        self.bool_cache.insert(e.clone(), l);
        l
    }

    fn conjuncts(&mut self, e: &BoolExpr) -> Vec<Lit> {
        match e {
            BoolExpr::And(xs) => xs.iter().map(|x| self.lit(x)).collect(),
            other => vec![self.lit(other)],
        }
    }

    fn disjuncts(&mut self, e: &BoolExpr) -> Vec<Lit> {
        match e {
            BoolExpr::Or(xs) => xs.iter().map(|x| self.lit(x)).collect(),
            other => vec![self.lit(other)],
        }
    }

    /// Clauses for `sel -> e`.
    fn assert_under(&mut self, sel: Lit, e: &BoolExpr) {
        match e {
            BoolExpr::Const(true) => {}
            BoolExpr::And(xs) => xs.iter().for_each(|x| self.assert_under(sel, x)),
            BoolExpr::Or(_) => {
                let mut cl = self.disjuncts(e);
                cl.push(-sel);
                self.clause(&cl);
            }
            BoolExpr::Not(x) if matches!(**x, BoolExpr::And(_)) => {
                let mut cl: Vec<Lit> = self.conjuncts(x).into_iter().map(|l| -l).collect();
                cl.push(-sel);
                self.clause(&cl);
            }
            BoolExpr::Implies(a, b) => {
                let mut cl: Vec<Lit> = self.conjuncts(a).into_iter().map(|l| -l).collect();
                cl.extend(self.disjuncts(b));
                cl.push(-sel);
                self.clause(&cl);
            }
            BoolExpr::Iff(a, b) => {
                let (a, b) = (self.lit(a), self.lit(b));
                self.clause(&[-sel, -a, b]);
                self.clause(&[-sel, a, -b]);
            }
            BoolExpr::ExactlyOne(xs) => {
                let ls: Vec<Lit> = xs.iter().map(|x| self.lit(x)).collect();
                let mut cl = ls.clone();
                cl.push(-sel);
                self.clause(&cl);
                for i in 0..ls.len() {
                    for j in i + 1..ls.len() {
                        self.clause(&[-sel, -ls[i], -ls[j]]);
                    }
                }
            }
            other => {
                let l = self.lit(other);
                self.clause(&[-sel, l]);
            }
        }
    }

    fn int_value(&self, t: usize) -> i64 {
        let fd = &self.fds[t];
        let mut i = 0;
        while i + 1 < fd.vals.len() && self.solver.value(fd.ge[i + 1]).unwrap_or(false) {
            i += 1;
        }
        fd.vals[i]
    }
}

struct SatSession {
    ii: u32,
    num_stages: u32,
    cc: Compiler,
    selectors: Vec<(Label, Lit)>,
    seen_ints: usize,
    seen_bools: usize,
}

impl SatSession {
    fn new(pr: &Problem) -> Self {
        SatSession {
            ii: pr.ii,
            num_stages: pr.num_stages,
            cc: Compiler::new(),
            selectors: Vec::new(),
            seen_ints: 0,
            seen_bools: 0,
        }
    }
}

impl Session for SatSession {
    fn extend(&mut self, pr: &Problem) -> Result<(), SolverError> {
        if pr.ii != self.ii || pr.num_stages != self.num_stages {
            return Err(SolverError::SessionInvalidated(format!(
                "session is for II={} stages={}, problem is II={} stages={}",
                self.ii, self.num_stages, pr.ii, pr.num_stages
            )));
        }
        let seen = self.selectors.len();
        if pr.int_vars.len() < self.seen_ints
            || pr.bool_vars.len() < self.seen_bools
            || pr.constraints.len() < seen
            || (seen > 0 && pr.constraints[seen - 1].label != self.selectors[seen - 1].0)
        {
            return Err(SolverError::SessionInvalidated(
                "problem does not extend the loaded one".into(),
            ));
        }
        for decl in &pr.int_vars[self.seen_ints..] {
            let t = self.cc.new_fd((decl.lo..=decl.hi).collect());
            self.cc.int_vars.push(t);
        }
        for _ in self.seen_bools..pr.bool_vars.len() {
            let v = self.cc.fresh();
            self.cc.bool_vars.push(v);
        }
        self.seen_ints = pr.int_vars.len();
        self.seen_bools = pr.bool_vars.len();
        for c in &pr.constraints[seen..] {
            let sel = self.cc.fresh();
            self.cc.assert_under(sel, &c.expr);
            self.selectors.push((c.label.clone(), sel));
        }
        Ok(())
    }

    fn solve(&mut self, budget: &Budget, want_core: bool) -> Result<SolveOutcome, SolverError> {
        let solver = &mut self.cc.solver;
        if budget.resource_limit < u64::MAX {
            let limit = budget.resource_limit.min(i32::MAX as u64) as i32;
            solver
                .set_limit("conflicts", limit)
                .map_err(|e| SolverError::Unavailable(e.to_string()))?;
        }
        solver.set_callbacks(budget.wall_clock.map(|d| Timeout::new(d.as_secs_f32())));
        let started = std::time::Instant::now();
        let result = solver.solve_with(self.selectors.iter().map(|(_, s)| *s));
        match result {
            Some(true) => {
                let ints = self.cc.int_vars.iter().map(|&t| self.cc.int_value(t)).collect();
                let bools = self
                    .cc
                    .bool_vars
                    .iter()
                    .map(|&l| self.cc.solver.value(l).unwrap_or(false))
                    .collect();
                Ok(SolveOutcome::Sat(Model { ints, bools }))
            }
            Some(false) => {
                let core: BTreeSet<Label> = if want_core {
                    self.selectors
                        .iter()
                        .filter(|(_, s)| self.cc.solver.failed(*s))
                        .map(|(l, _)| l.clone())
                        .collect()
                } else {
                    BTreeSet::new()
                };
                Ok(SolveOutcome::Unsat(core))
            }
            None => {
                let timed_out = budget.wall_clock.is_some_and(|d| started.elapsed() >= d);
                Ok(SolveOutcome::Unknown(if timed_out {
                    "wall-clock limit reached".into()
                } else {
                    format!("resource limit of {} conflicts reached", budget.resource_limit)
                }))
            }
        }
    }

    fn stats(&self) -> SolveStats {
        SolveStats {
            variables: self.cc.next_var as u64,
            clauses: self.cc.clauses,
            assumptions: self.selectors.len() as u64,
            nodes: 0,
        }
    }
}
