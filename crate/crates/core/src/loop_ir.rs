//! Loop body representation: operations, virtual registers and dependencies.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::machine::{Processor, SlotIdx};

pub type OpIdx = usize;

/// Largest loop-carried distance accepted at load time.
pub const MAX_DISTANCE: u32 = 8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LoopError {
    #[error("{path}: {msg}")]
    Schema { path: String, msg: String },
    #[error("empty loop")]
    Empty,
    #[error("ops[{index}]: duplicate operation id '{id}'")]
    DuplicateOp { index: usize, id: String },
    #[error("ops[{index}] ('{op}'): unknown opcode '{opcode}'")]
    UnknownOpcode {
        index: usize,
        op: String,
        opcode: String,
    },
    #[error("register '{reg}' is defined by both '{first}' and '{second}'")]
    MultipleDefs {
        reg: String,
        first: String,
        second: String,
    },
    #[error("ops[{index}] ('{op}') defines more than one register")]
    TooManyDefs { index: usize, op: String },
    #[error("deps[{index}]: unknown operation '{id}'")]
    MissingEndpoint { index: usize, id: String },
    #[error("deps[{index}]: distance {distance} exceeds the maximum of {MAX_DISTANCE}")]
    DistanceTooLarge { index: usize, distance: u32 },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepKind {
    Data,
    Anti,
    Output,
    Other,
}

impl fmt::Display for DepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DepKind::Data => "data",
            DepKind::Anti => "anti",
            DepKind::Output => "output",
            DepKind::Other => "other",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pin {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cycle: Option<u32>,
}

impl Pin {
    pub fn is_empty(&self) -> bool {
        self.slot.is_none() && self.cycle.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Operation {
    pub id: String,
    pub opcode: String,
    pub defs: Vec<String>,
    pub uses: Vec<String>,
    pub pin: Pin,
}

impl Operation {
    pub fn def(&self) -> Option<&str> {
        self.defs.first().map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Dependency {
    pub src: OpIdx,
    pub dst: OpIdx,
    pub latency: i32,
    pub distance: u32,
    pub kind: DepKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoopGraph {
    pub operations: Vec<Operation>,
    pub deps: Vec<Dependency>,
    pub virtual_registers: Vec<String>,
    /// Registers read after the loop, with the register files those reads
    /// target.
    pub live_out: BTreeMap<String, BTreeSet<String>>,
    pub trip_count: Option<u64>,
}

// ---------------------------------------------------------------------------
// Document form

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopDoc {
    pub ops: Vec<OpDoc>,
    #[serde(default)]
    pub deps: Vec<DepDoc>,
    #[serde(default)]
    pub live_out: Vec<LiveOutDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trip_count: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpDoc {
    pub id: String,
    pub opcode: String,
    #[serde(default)]
    pub defs: Vec<String>,
    #[serde(default)]
    pub uses: Vec<String>,
    #[serde(default, skip_serializing_if = "Pin::is_empty")]
    pub pin: Pin,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepDoc {
    pub src: String,
    pub dst: String,
    pub latency: i32,
    pub distance: u32,
    pub kind: DepKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiveOutDoc {
    pub reg: String,
    pub rfs: Vec<String>,
}

pub fn load_loop_str(text: &str, p: &Processor) -> Result<LoopGraph, LoopError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: LoopDoc = serde_path_to_error::deserialize(de).map_err(|e| LoopError::Schema {
        path: e.path().to_string(),
        msg: e.inner().to_string(),
    })?;
    load_loop(&doc, p)
}

/// Builds a validated loop graph from its document form.
pub fn load_loop(doc: &LoopDoc, p: &Processor) -> Result<LoopGraph, LoopError> {
    if doc.ops.is_empty() {
        return Err(LoopError::Empty);
    }
    let mut ids: HashMap<&str, OpIdx> = HashMap::new();
    let mut definer: HashMap<&str, &str> = HashMap::new();
    let mut regs: Vec<String> = Vec::new();
    let mut seen_regs = BTreeSet::new();
    for (index, op) in doc.ops.iter().enumerate() {
        if ids.insert(&op.id, index).is_some() {
            return Err(LoopError::DuplicateOp {
                index,
                id: op.id.clone(),
            });
        }
        if !p.opcodes.contains_key(&op.opcode) {
            return Err(LoopError::UnknownOpcode {
                index,
                op: op.id.clone(),
                opcode: op.opcode.clone(),
            });
        }
        if op.defs.len() > 1 {
            return Err(LoopError::TooManyDefs {
                index,
                op: op.id.clone(),
            });
        }
        for d in &op.defs {
            if let Some(first) = definer.insert(d, &op.id) {
                return Err(LoopError::MultipleDefs {
                    reg: d.clone(),
                    first: first.to_string(),
                    second: op.id.clone(),
                });
            }
        }
        for r in op.defs.iter().chain(&op.uses) {
            if seen_regs.insert(r.clone()) {
                regs.push(r.clone());
            }
        }
    }

    let mut deps = Vec::new();
    for (index, d) in doc.deps.iter().enumerate() {
        let src = *ids.get(d.src.as_str()).ok_or_else(|| LoopError::MissingEndpoint {
            index,
            id: d.src.clone(),
        })?;
        let dst = *ids.get(d.dst.as_str()).ok_or_else(|| LoopError::MissingEndpoint {
            index,
            id: d.dst.clone(),
        })?;
        if d.distance > MAX_DISTANCE {
            return Err(LoopError::DistanceTooLarge {
                index,
                distance: d.distance,
            });
        }
        deps.push(Dependency {
            src,
            dst,
            latency: d.latency,
            distance: d.distance,
            kind: d.kind,
        });
    }

    let mut live_out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (i, lo) in doc.live_out.iter().enumerate() {
        if !seen_regs.contains(&lo.reg) {
            return Err(LoopError::Invalid(format!(
                "live_out[{i}]: register '{}' does not occur in the loop",
                lo.reg
            )));
        }
        for rf in &lo.rfs {
            if p.rf_index(rf).is_err() {
                return Err(LoopError::Invalid(format!(
                    "live_out[{i}]: unknown register file '{rf}'"
                )));
            }
        }
        live_out.entry(lo.reg.clone()).or_default().extend(lo.rfs.iter().cloned());
    }

    let g = LoopGraph {
        operations: doc
            .ops
            .iter()
            .map(|o| Operation {
                id: o.id.clone(),
                opcode: o.opcode.clone(),
                defs: o.defs.clone(),
                uses: o.uses.clone(),
                pin: o.pin.clone(),
            })
            .collect(),
        deps,
        virtual_registers: regs,
        live_out,
        trip_count: doc.trip_count,
    };
    let findings = validate(&g, p);
    if let Some(f) = findings.first() {
        return Err(LoopError::Invalid(f.message.clone()));
    }
    Ok(g)
}

/// A problem found by [`validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Finding {
    pub op: Option<String>,
    pub dep: Option<usize>,
    pub message: String,
}

/// Checks the structural invariants of a loop graph against a machine.
pub fn validate(g: &LoopGraph, p: &Processor) -> Vec<Finding> {
    let mut out = Vec::new();
    let op_finding = |op: &Operation, message: String| Finding {
        op: Some(op.id.clone()),
        dep: None,
        message,
    };
    let mut definer: HashMap<&str, OpIdx> = HashMap::new();
    let mut ids = BTreeSet::new();
    for (i, op) in g.operations.iter().enumerate() {
        if !ids.insert(op.id.as_str()) {
            out.push(op_finding(op, format!("duplicate operation id '{}'", op.id)));
        }
        if op.defs.len() > 1 {
            out.push(op_finding(op, format!("'{}' defines more than one register", op.id)));
        }
        for d in &op.defs {
            if definer.insert(d, i).is_some() {
                out.push(op_finding(op, format!("register '{d}' is defined twice")));
            }
        }
        let Some(info) = p.opcodes.get(&op.opcode) else {
            out.push(op_finding(op, format!("'{}': unknown opcode '{}'", op.id, op.opcode)));
            continue;
        };
        let mut legal = 0;
        for (&slot, b) in &info.bindings {
            if !op.defs.is_empty() && b.out_port.is_none() {
                continue;
            }
            if op.uses.len() > b.operand_rfs.len() {
                continue;
            }
            if let Some(pinned) = &op.pin.slot {
                if &p.slots[slot].name != pinned {
                    continue;
                }
            }
            legal += 1;
        }
        if legal == 0 {
            out.push(op_finding(
                op,
                format!(
                    "'{}' ({}) has no legal issue slot (needs {} operand(s){})",
                    op.id,
                    op.opcode,
                    op.uses.len(),
                    if op.defs.is_empty() { "" } else { " and a result port" }
                ),
            ));
        }
        for r in op.defs.iter().chain(&op.uses) {
            if !g.virtual_registers.contains(r) {
                out.push(op_finding(op, format!("register '{r}' is not declared")));
            }
        }
    }
    let n = g.operations.len();
    for (i, d) in g.deps.iter().enumerate() {
        let dep_finding = |message: String| Finding {
            op: None,
            dep: Some(i),
            message,
        };
        if d.src >= n || d.dst >= n {
            out.push(dep_finding(format!("dependency {i} has a dangling endpoint")));
            continue;
        }
        if d.distance > MAX_DISTANCE {
            out.push(dep_finding(format!(
                "dependency {i} has distance {} > {MAX_DISTANCE}",
                d.distance
            )));
        }
        if d.kind == DepKind::Data {
            let src = &g.operations[d.src];
            let dst = &g.operations[d.dst];
            match src.def() {
                Some(r) if dst.uses.iter().any(|u| u == r) => {}
                _ => out.push(dep_finding(format!(
                    "data dependency {} -> {} does not carry a register defined by the source and used by the destination",
                    src.id, dst.id
                ))),
            }
        }
    }
    out
}

/// Adds, for every same-iteration data dependency `a -> b`, the
/// loop-carried anti-dependency `b -> a` with latency 0 and distance 1 that
/// keeps the next iteration's `a` from overwriting the value before `b`
/// reads it. Idempotent.
pub fn augment_loop_carried(g: &LoopGraph) -> LoopGraph {
    let mut out = g.clone();
    let existing: BTreeSet<(OpIdx, OpIdx, i32, u32)> = g
        .deps
        .iter()
        .map(|d| (d.src, d.dst, d.latency, d.distance))
        .collect();
    let mut added = BTreeSet::new();
    for d in &g.deps {
        if d.kind != DepKind::Data || d.distance != 0 || d.src == d.dst {
            continue;
        }
        let key = (d.dst, d.src, 0, 1);
        if existing.contains(&key) || !added.insert(key) {
            continue;
        }
        out.deps.push(Dependency {
            src: d.dst,
            dst: d.src,
            latency: 0,
            distance: 1,
            kind: DepKind::Anti,
        });
    }
    out
}

impl LoopGraph {
    pub fn op_index(&self, id: &str) -> Option<OpIdx> {
        self.operations.iter().position(|o| o.id == id)
    }

    /// Slots on which `op` may issue: the opcode is legal there, the slot
    /// binding has a result port when the op defines a register, enough
    /// operand register files for its uses, and any slot pin is honoured.
    pub fn legal_slots(&self, p: &Processor, op: OpIdx) -> Vec<SlotIdx> {
        let o = &self.operations[op];
        let Some(info) = p.opcodes.get(&o.opcode) else {
            return Vec::new();
        };
        info.bindings
            .iter()
            .filter(|(_, b)| o.defs.is_empty() || b.out_port.is_some())
            .filter(|(_, b)| o.uses.len() <= b.operand_rfs.len())
            .filter(|(&s, _)| o.pin.slot.as_ref().is_none_or(|n| &p.slots[s].name == n))
            .map(|(&s, _)| s)
            .collect()
    }

    /// The operation defining `reg`, if any.
    pub fn definer(&self, reg: &str) -> Option<OpIdx> {
        self.operations.iter().position(|o| o.def() == Some(reg))
    }

    /// Operand positions at which `op` reads `reg`.
    pub fn operand_positions<'a>(&'a self, op: OpIdx, reg: &'a str) -> impl Iterator<Item = usize> + 'a {
        self.operations[op]
            .uses
            .iter()
            .enumerate()
            .filter(move |(_, u)| *u == reg)
            .map(|(k, _)| k)
    }

    pub fn data_deps(&self) -> impl Iterator<Item = (usize, &Dependency)> {
        self.deps.iter().enumerate().filter(|(_, d)| d.kind == DepKind::Data)
    }

    pub fn to_doc(&self) -> LoopDoc {
        LoopDoc {
            ops: self
                .operations
                .iter()
                .map(|o| OpDoc {
                    id: o.id.clone(),
                    opcode: o.opcode.clone(),
                    defs: o.defs.clone(),
                    uses: o.uses.clone(),
                    pin: o.pin.clone(),
                })
                .collect(),
            deps: self
                .deps
                .iter()
                .map(|d| DepDoc {
                    src: self.operations[d.src].id.clone(),
                    dst: self.operations[d.dst].id.clone(),
                    latency: d.latency,
                    distance: d.distance,
                    kind: d.kind,
                })
                .collect(),
            live_out: self
                .live_out
                .iter()
                .map(|(reg, rfs)| LiveOutDoc {
                    reg: reg.clone(),
                    rfs: rfs.iter().cloned().collect(),
                })
                .collect(),
            trip_count: self.trip_count,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_doc()).expect("loop document serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn g4_loads() {
        let p = fixtures::toy5();
        let g = fixtures::g4(&p);
        assert_eq!(g.operations.len(), 4);
        assert_eq!(g.deps.len(), 3);
        assert_eq!(g.virtual_registers, ["a", "b", "c"]);
        assert!(validate(&g, &p).is_empty());
    }

    #[test]
    fn double_definition_rejected() {
        let p = fixtures::toy5();
        let mut doc = fixtures::g4_doc();
        doc.ops[2].defs = vec!["b".into()];
        assert!(matches!(load_loop(&doc, &p), Err(LoopError::MultipleDefs { .. })));
    }

    #[test]
    fn empty_loop_rejected() {
        let p = fixtures::toy5();
        let doc = LoopDoc {
            ops: vec![],
            deps: vec![],
            live_out: vec![],
            trip_count: None,
        };
        assert_eq!(load_loop(&doc, &p), Err(LoopError::Empty));
        assert_eq!(LoopError::Empty.to_string(), "empty loop");
    }

    #[test]
    fn missing_endpoint_and_far_distance_rejected() {
        let p = fixtures::toy5();
        let mut doc = fixtures::g4_doc();
        doc.deps[0].dst = "NOPE".into();
        assert!(matches!(load_loop(&doc, &p), Err(LoopError::MissingEndpoint { index: 0, .. })));
        let mut doc = fixtures::g4_doc();
        doc.deps[0].distance = 9;
        assert!(matches!(load_loop(&doc, &p), Err(LoopError::DistanceTooLarge { .. })));
    }

    #[test]
    fn unknown_opcode_rejected() {
        let p = fixtures::toy5();
        let mut doc = fixtures::g4_doc();
        doc.ops[1].opcode = "FOO".into();
        assert!(matches!(load_loop(&doc, &p), Err(LoopError::UnknownOpcode { .. })));
    }

    #[test]
    fn augment_adds_backward_edges() {
        let p = fixtures::toy5();
        let g = fixtures::g4(&p);
        let a = augment_loop_carried(&g);
        let back: BTreeSet<_> = a.deps[3..]
            .iter()
            .map(|d| {
                (
                    a.operations[d.src].id.as_str(),
                    a.operations[d.dst].id.as_str(),
                    d.latency,
                    d.distance,
                    d.kind,
                )
            })
            .collect();
        let want: BTreeSet<_> = [
            ("ADD", "LD", 0, 1, DepKind::Anti),
            ("MUL", "ADD", 0, 1, DepKind::Anti),
            ("ST", "MUL", 0, 1, DepKind::Anti),
        ]
        .into_iter()
        .collect();
        assert_eq!(back, want);
        assert_eq!(augment_loop_carried(&a), a);
    }

    #[test]
    fn augment_without_data_deps_is_identity() {
        let p = fixtures::toy5();
        let mut g = fixtures::g4(&p);
        for d in &mut g.deps {
            d.kind = DepKind::Other;
        }
        assert_eq!(augment_loop_carried(&g), g);
    }

    #[test]
    fn validate_reports_slotless_op_and_dangling_dep() {
        let p = fixtures::toy5();
        let mut g = fixtures::g4(&p);
        g.operations[3].pin.slot = Some("ARU0".into());
        let f = validate(&g, &p);
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].op.as_deref(), Some("ST"));

        let mut g = fixtures::g4(&p);
        g.deps.push(Dependency {
            src: 0,
            dst: 17,
            latency: 1,
            distance: 0,
            kind: DepKind::Other,
        });
        let f = validate(&g, &p);
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].dep, Some(3));
    }

    #[test]
    fn json_round_trip() {
        let p = fixtures::toy5();
        let g = augment_loop_carried(&fixtures::g4(&p));
        let back = load_loop_str(&g.to_json(), &p).unwrap();
        assert_eq!(back, g);
    }
}
