use super::Model;
use crate::encoder::{BoolExpr, IntExpr, Label, Problem};

pub fn eval_int(e: &IntExpr, m: &Model) -> i64 {
    match e {
        IntExpr::Const(k) => *k,
        IntExpr::Var(v) => m.int(*v),
        IntExpr::Sum(xs) => xs.iter().map(|x| eval_int(x, m)).sum(),
        IntExpr::Scale(k, x) => k * eval_int(x, m),
        IntExpr::Mod(x, k) => eval_int(x, m).rem_euclid(*k),
        IntExpr::Ite(c, t, f) => {
            if eval_bool(c, m) {
                eval_int(t, m)
            } else {
                eval_int(f, m)
            }
        }
        IntExpr::Min(xs) => xs.iter().map(|x| eval_int(x, m)).min().expect("non-empty min"),
        IntExpr::Max(xs) => xs.iter().map(|x| eval_int(x, m)).max().expect("non-empty max"),
    }
}

pub fn eval_bool(e: &BoolExpr, m: &Model) -> bool {
    match e {
        BoolExpr::Const(b) => *b,
        BoolExpr::Var(v) => m.bool(*v),
        BoolExpr::Not(x) => !eval_bool(x, m),
        BoolExpr::And(xs) => xs.iter().all(|x| eval_bool(x, m)),
        BoolExpr::Or(xs) => xs.iter().any(|x| eval_bool(x, m)),
        BoolExpr::Implies(a, b) => !eval_bool(a, m) || eval_bool(b, m),
        BoolExpr::Iff(a, b) => eval_bool(a, m) == eval_bool(b, m),
        BoolExpr::ExactlyOne(xs) => xs.iter().filter(|x| eval_bool(x, m)).count() == 1,
        BoolExpr::Cmp(op, a, b) => op.holds(eval_int(a, m), eval_int(b, m)),
    }
}

/// Labels of the constraints of `pr` that `m` violates.
pub fn evaluate(pr: &Problem, m: &Model) -> Vec<Label> {
    assert_eq!(m.ints.len(), pr.int_vars.len(), "model does not cover the integer variables");
    assert_eq!(m.bools.len(), pr.bool_vars.len(), "model does not cover the Boolean variables");
    pr.constraints
        .iter()
        .filter(|c| !eval_bool(&c.expr, m))
        .map(|c| c.label.clone())
        .collect()
}
