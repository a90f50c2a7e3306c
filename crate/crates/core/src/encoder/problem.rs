use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ast::{BoolExpr, BoolVar, IntVar};
use crate::machine::{BusIdx, PortIdx, RfIdx, SlotIdx, WpIdx};

/// Stable, human-readable constraint name. Also used as the SMT-LIB
/// `:named` annotation, so it only contains symbol-safe characters.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Label(pub String);

impl Label {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VarKey {
    Cycle { op: usize },
    Slot { op: usize, slot: SlotIdx },
    PortBus { cycle: i64, port: PortIdx, bus: BusIdx },
    BusWp { cycle: i64, bus: BusIdx, wp: WpIdx },
    Start { reg: usize },
    End { rf: RfIdx, reg: usize },
    MinUse { rf: RfIdx, reg: usize },
    MaxUse { rf: RfIdx, reg: usize },
    MaxUseBeforeDef { rf: RfIdx, reg: usize },
    Used { rf: RfIdx, reg: usize },
    UsedBeforeDef { rf: RfIdx, reg: usize },
    LiveOut { rf: RfIdx, reg: usize },
    Live { rf: RfIdx, reg: usize, cycle: i64 },
}

/// Constraint families, one per rule of the scheduling model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    CycleRange,
    OneSlot,
    SlotExclusive,
    Dependency,
    Routing,
    BusExclusive,
    WritePortExclusive,
    Pin,
    RpStart,
    RpUse,
    RpUsedBeforeDef,
    RpEnd,
    RpLiveOut,
    RpLive,
    RpCapacity,
    Extra,
}

impl Family {
    pub fn describe(self) -> &'static str {
        match self {
            Family::CycleRange => "operation cycle within the single-iteration schedule",
            Family::OneSlot => "operation issues on exactly one slot",
            Family::SlotExclusive => "issue slot used once per modulo cycle",
            Family::Dependency => "dependency latency/distance respected",
            Family::Routing => "produced value routed to the consumer's register file",
            Family::BusExclusive => "bus driven by one output port per modulo cycle",
            Family::WritePortExclusive => "write port fed by one bus per modulo cycle",
            Family::Pin => "user pin",
            Family::RpStart => "live range start",
            Family::RpUse => "register use summary",
            Family::RpUsedBeforeDef => "use before definition",
            Family::RpEnd => "live range end",
            Family::RpLiveOut => "live-out",
            Family::RpLive => "liveness per modulo cycle",
            Family::RpCapacity => "register file capacity",
            Family::Extra => "additional constraint",
        }
    }

    pub fn is_register_pressure(self) -> bool {
        matches!(
            self,
            Family::RpStart
                | Family::RpUse
                | Family::RpUsedBeforeDef
                | Family::RpEnd
                | Family::RpLiveOut
                | Family::RpLive
                | Family::RpCapacity
        )
    }
}

/// Named entity a constraint talks about.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "snake_case")]
pub enum Entity {
    Op(String),
    Slot(String),
    Port(String),
    Bus(String),
    WritePort(String),
    RegisterFile(String),
    Register(String),
    Cycle(i64),
    ModCycle(i64),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelInfo {
    pub family: Family,
    pub entities: Vec<Entity>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Constraint {
    pub label: Label,
    pub expr: BoolExpr,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntVarDecl {
    pub key: VarKey,
    pub name: String,
    /// Finite search domain handed to enumerating backends. Wider than any
    /// value the labelled constraints admit in a full problem.
    pub lo: i64,
    pub hi: i64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoolVarDecl {
    pub key: VarKey,
    pub name: String,
}

/// How modulo exclusivity (slot/bus/write port) is spelled out.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncodingStyle {
    /// One constraint per modulo cycle, using `x mod II`.
    #[default]
    Compact,
    /// One constraint per pair of absolute cycles with equal residue.
    Paper,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct EncodeOptions {
    pub style: EncodingStyle,
    /// Route a value at `issue + latency` instead of at the issue cycle.
    pub writeback_offset: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Problem {
    pub ii: u32,
    pub num_stages: u32,
    pub max_cycle: i64,
    pub options: EncodeOptions,
    pub int_vars: Vec<IntVarDecl>,
    pub bool_vars: Vec<BoolVarDecl>,
    pub constraints: Vec<Constraint>,
    pub label_info: BTreeMap<Label, LabelInfo>,
    /// Register files whose pressure constraints are present.
    pub rp_rfs: BTreeSet<RfIdx>,
    int_index: HashMap<VarKey, IntVar>,
    bool_index: HashMap<VarKey, BoolVar>,
}

impl Problem {
    pub fn new(ii: u32, num_stages: u32, options: EncodeOptions) -> Self {
        Problem {
            ii,
            num_stages,
            max_cycle: i64::from(ii) * i64::from(num_stages) - 1,
            options,
            int_vars: Vec::new(),
            bool_vars: Vec::new(),
            constraints: Vec::new(),
            label_info: BTreeMap::new(),
            rp_rfs: BTreeSet::new(),
            int_index: HashMap::new(),
            bool_index: HashMap::new(),
        }
    }

    pub fn int_var(&mut self, key: VarKey, name: impl Into<String>, lo: i64, hi: i64) -> IntVar {
        if let Some(v) = self.int_index.get(&key) {
            return *v;
        }
        let v = IntVar(self.int_vars.len() as u32);
        self.int_vars.push(IntVarDecl {
            key,
            name: name.into(),
            lo,
            hi,
        });
        self.int_index.insert(key, v);
        v
    }

    pub fn bool_var(&mut self, key: VarKey, name: impl Into<String>) -> BoolVar {
        if let Some(v) = self.bool_index.get(&key) {
            return *v;
        }
        let v = BoolVar(self.bool_vars.len() as u32);
        self.bool_vars.push(BoolVarDecl {
            key,
            name: name.into(),
        });
        self.bool_index.insert(key, v);
        v
    }

    pub fn find_int(&self, key: &VarKey) -> Option<IntVar> {
        self.int_index.get(key).copied()
    }

    pub fn find_bool(&self, key: &VarKey) -> Option<BoolVar> {
        self.bool_index.get(key).copied()
    }

    pub fn int_decl(&self, v: IntVar) -> &IntVarDecl {
        &self.int_vars[v.0 as usize]
    }

    pub fn bool_decl(&self, v: BoolVar) -> &BoolVarDecl {
        &self.bool_vars[v.0 as usize]
    }

    /// Adds a labelled constraint. Labels must be unique.
    pub fn assert(&mut self, label: String, expr: BoolExpr, info: LabelInfo) {
        let label = Label(label);
        let prev = self.label_info.insert(label.clone(), info);
        assert!(prev.is_none(), "duplicate constraint label {label}");
        self.constraints.push(Constraint { label, expr });
    }

    /// Adds a constraint outside the scheduling model (tests, what-if queries).
    pub fn assert_extra(&mut self, label: impl Into<String>, expr: BoolExpr) {
        let label = label.into();
        self.assert(
            label.clone(),
            expr,
            LabelInfo {
                family: Family::Extra,
                entities: Vec::new(),
                text: label,
            },
        );
    }

    pub fn constraint(&self, label: &Label) -> Option<&Constraint> {
        self.constraints.iter().find(|c| &c.label == label)
    }

    pub fn labels(&self) -> impl Iterator<Item = &Label> {
        self.constraints.iter().map(|c| &c.label)
    }

    /// Same variables, only the constraints whose labels are in `keep`.
    pub fn restricted(&self, keep: &BTreeSet<Label>) -> Problem {
        let mut out = self.clone();
        out.constraints.retain(|c| keep.contains(&c.label));
        out.label_info.retain(|l, _| keep.contains(l));
        out
    }

    pub fn count_family(&self, family: Family) -> usize {
        self.label_info.values().filter(|i| i.family == family).count()
    }
}
