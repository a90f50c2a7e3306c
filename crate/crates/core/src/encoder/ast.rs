//! Quantifier-free constraint terms over bounded integers and Booleans.

use std::ops::{Add, Not};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct IntVar(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BoolVar(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn holds(self, a: i64, b: i64) -> bool {
        match self {
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum IntExpr {
    Const(i64),
    Var(IntVar),
    Sum(Vec<IntExpr>),
    Scale(i64, Box<IntExpr>),
    /// Euclidean remainder by a positive constant.
    Mod(Box<IntExpr>, i64),
    Ite(Box<BoolExpr>, Box<IntExpr>, Box<IntExpr>),
    Min(Vec<IntExpr>),
    Max(Vec<IntExpr>),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum BoolExpr {
    Const(bool),
    Var(BoolVar),
    Not(Box<BoolExpr>),
    And(Vec<BoolExpr>),
    Or(Vec<BoolExpr>),
    Implies(Box<BoolExpr>, Box<BoolExpr>),
    Iff(Box<BoolExpr>, Box<BoolExpr>),
    /// True when exactly one argument is true.
    ExactlyOne(Vec<BoolExpr>),
    Cmp(CmpOp, IntExpr, IntExpr),
}

impl IntExpr {
    pub fn var(v: IntVar) -> Self {
        IntExpr::Var(v)
    }

    pub fn modulo(self, m: i64) -> Self {
        assert!(m > 0, "modulus must be positive");
        IntExpr::Mod(Box::new(self), m)
    }

    pub fn ite(c: BoolExpr, t: IntExpr, e: IntExpr) -> Self {
        IntExpr::Ite(Box::new(c), Box::new(t), Box::new(e))
    }

    pub fn cmp(self, op: CmpOp, rhs: IntExpr) -> BoolExpr {
        BoolExpr::Cmp(op, self, rhs)
    }

    pub fn eq(self, rhs: IntExpr) -> BoolExpr {
        self.cmp(CmpOp::Eq, rhs)
    }

    pub fn le(self, rhs: IntExpr) -> BoolExpr {
        self.cmp(CmpOp::Le, rhs)
    }

    pub fn ge(self, rhs: IntExpr) -> BoolExpr {
        self.cmp(CmpOp::Ge, rhs)
    }

    pub fn visit_vars(&self, ints: &mut impl FnMut(IntVar), bools: &mut impl FnMut(BoolVar)) {
        match self {
            IntExpr::Const(_) => {}
            IntExpr::Var(v) => ints(*v),
            IntExpr::Sum(xs) | IntExpr::Min(xs) | IntExpr::Max(xs) => {
                xs.iter().for_each(|x| x.visit_vars(ints, bools))
            }
            IntExpr::Scale(_, x) | IntExpr::Mod(x, _) => x.visit_vars(ints, bools),
            IntExpr::Ite(c, t, e) => {
                c.visit_vars(ints, bools);
                t.visit_vars(ints, bools);
                e.visit_vars(ints, bools);
            }
        }
    }
}

impl Add<i64> for IntExpr {
    type Output = IntExpr;

    fn add(self, k: i64) -> IntExpr {
        if k == 0 {
            return self;
        }
        match self {
            IntExpr::Sum(mut xs) => {
                xs.push(IntExpr::Const(k));
                IntExpr::Sum(xs)
            }
            other => IntExpr::Sum(vec![other, IntExpr::Const(k)]),
        }
    }
}

impl From<i64> for IntExpr {
    fn from(k: i64) -> Self {
        IntExpr::Const(k)
    }
}

impl From<IntVar> for IntExpr {
    fn from(v: IntVar) -> Self {
        IntExpr::Var(v)
    }
}

impl From<BoolVar> for BoolExpr {
    fn from(v: BoolVar) -> Self {
        BoolExpr::Var(v)
    }
}

impl Not for BoolExpr {
    type Output = BoolExpr;

    fn not(self) -> BoolExpr {
        match self {
            BoolExpr::Const(b) => BoolExpr::Const(!b),
            BoolExpr::Not(x) => *x,
            other => BoolExpr::Not(Box::new(other)),
        }
    }
}

impl BoolExpr {
    pub fn var(v: BoolVar) -> Self {
        BoolExpr::Var(v)
    }

    pub fn and(xs: Vec<BoolExpr>) -> Self {
        BoolExpr::And(xs)
    }

    pub fn or(xs: Vec<BoolExpr>) -> Self {
        BoolExpr::Or(xs)
    }

    pub fn implies(self, rhs: BoolExpr) -> Self {
        BoolExpr::Implies(Box::new(self), Box::new(rhs))
    }

    pub fn iff(self, rhs: BoolExpr) -> Self {
        BoolExpr::Iff(Box::new(self), Box::new(rhs))
    }

    /// `if c then t else e` over Booleans.
    pub fn ite(c: BoolExpr, t: BoolExpr, e: BoolExpr) -> Self {
        BoolExpr::Or(vec![
            BoolExpr::And(vec![c.clone(), t]),
            BoolExpr::And(vec![!c, e]),
        ])
    }

    /// Indicator `if self then 1 else 0`.
    pub fn indicator(self) -> IntExpr {
        IntExpr::ite(self, IntExpr::Const(1), IntExpr::Const(0))
    }

    pub fn visit_vars(&self, ints: &mut impl FnMut(IntVar), bools: &mut impl FnMut(BoolVar)) {
        match self {
            BoolExpr::Const(_) => {}
            BoolExpr::Var(v) => bools(*v),
            BoolExpr::Not(x) => x.visit_vars(ints, bools),
            BoolExpr::And(xs) | BoolExpr::Or(xs) | BoolExpr::ExactlyOne(xs) => {
                xs.iter().for_each(|x| x.visit_vars(ints, bools))
            }
            BoolExpr::Implies(a, b) | BoolExpr::Iff(a, b) => {
                a.visit_vars(ints, bools);
                b.visit_vars(ints, bools);
            }
            BoolExpr::Cmp(_, a, b) => {
                a.visit_vars(ints, bools);
                b.visit_vars(ints, bools);
            }
        }
    }
}
