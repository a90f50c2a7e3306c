//! SMT-LIB 2.6 (QF_LIA) rendering of a [`Problem`].

use std::fmt::Write;

use crate::encoder::{BoolExpr, CmpOp, IntExpr, Problem};

fn quote(s: &str) -> String {
    assert!(!s.contains('|') && !s.contains('\\'), "symbol {s:?} cannot be quoted");
    format!("|{s}|")
}

fn num(k: i64) -> String {
    if k < 0 {
        format!("(- {})", k.unsigned_abs())
    } else {
        k.to_string()
    }
}

fn nary(op: &str, args: Vec<String>, empty: &str) -> String {
    match args.len() {
        0 => empty.to_string(),
        1 => args.into_iter().next().unwrap(),
        _ => format!("({op} {})", args.join(" ")),
    }
}

struct Printer<'a> {
    pr: &'a Problem,
}

impl Printer<'_> {
    fn int(&self, e: &IntExpr) -> String {
        match e {
            IntExpr::Const(k) => num(*k),
            IntExpr::Var(v) => quote(&self.pr.int_decl(*v).name),
            IntExpr::Sum(xs) => nary("+", xs.iter().map(|x| self.int(x)).collect(), "0"),
            IntExpr::Scale(k, x) => format!("(* {} {})", num(*k), self.int(x)),
            IntExpr::Mod(x, m) => format!("(mod {} {m})", self.int(x)),
            IntExpr::Ite(c, t, f) => {
                format!("(ite {} {} {})", self.bool(c), self.int(t), self.int(f))
            }
            IntExpr::Min(xs) | IntExpr::Max(xs) => {
                let cmp = if matches!(e, IntExpr::Min(_)) { "<=" } else { ">=" };
                let mut it = xs.iter().map(|x| self.int(x));
                let mut acc = it.next().expect("non-empty min/max");
                for x in it {
                    acc = format!("(ite ({cmp} {acc} {x}) {acc} {x})");
                }
                acc
            }
        }
    }

    fn bool(&self, e: &BoolExpr) -> String {
        match e {
            BoolExpr::Const(b) => b.to_string(),
            BoolExpr::Var(v) => quote(&self.pr.bool_decl(*v).name),
            BoolExpr::Not(x) => format!("(not {})", self.bool(x)),
            BoolExpr::And(xs) => nary("and", xs.iter().map(|x| self.bool(x)).collect(), "true"),
            BoolExpr::Or(xs) => nary("or", xs.iter().map(|x| self.bool(x)).collect(), "false"),
            BoolExpr::Implies(a, b) => format!("(=> {} {})", self.bool(a), self.bool(b)),
            BoolExpr::Iff(a, b) => format!("(= {} {})", self.bool(a), self.bool(b)),
            BoolExpr::ExactlyOne(xs) => {
                let terms = xs.iter().map(|x| format!("(ite {} 1 0)", self.bool(x))).collect();
                format!("(= 1 {})", nary("+", terms, "0"))
            }
            BoolExpr::Cmp(op, a, b) => {
                let (a, b) = (self.int(a), self.int(b));
                match op {
                    CmpOp::Eq => format!("(= {a} {b})"),
                    CmpOp::Ne => format!("(distinct {a} {b})"),
                    CmpOp::Lt => format!("(< {a} {b})"),
                    CmpOp::Le => format!("(<= {a} {b})"),
                    CmpOp::Gt => format!("(> {a} {b})"),
                    CmpOp::Ge => format!("(>= {a} {b})"),
                }
            }
        }
    }
}

/// Renders `pr` as a self-contained script ending in `(check-sat)` and
/// `(get-unsat-core)`. Output is a pure function of the problem.
pub fn export_smtlib(pr: &Problem) -> String {
    let p = Printer { pr };
    let mut out = String::new();
    out.push_str("(set-option :produce-unsat-cores true)\n");
    out.push_str("(set-logic QF_LIA)\n");
    writeln!(out, "; II={} stages={} max_cycle={}", pr.ii, pr.num_stages, pr.max_cycle).unwrap();
    for d in &pr.int_vars {
        writeln!(out, "(declare-fun {} () Int)", quote(&d.name)).unwrap();
    }
    for d in &pr.bool_vars {
        writeln!(out, "(declare-fun {} () Bool)", quote(&d.name)).unwrap();
    }
    for c in &pr.constraints {
        writeln!(out, "(assert (! {} :named {}))", p.bool(&c.expr), quote(c.label.as_str())).unwrap();
    }
    out.push_str("(check-sat)\n(get-unsat-core)\n");
    out
}
