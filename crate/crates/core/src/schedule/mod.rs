//! Modulo schedules: decoding from solver models, legality checking,
//! kernel/prolog/epilog expansion, simulation and a brute-force oracle.

mod check;
mod oracle;
mod pipeline;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use check::{check_schedule, Violation, ViolationKind};
pub use oracle::{brute_force_min_ii, feasible_at, OracleError, OracleLimits};
pub use pipeline::{expand_pipeline, simulate, Bundle, BundleOp, PipelineCode, SimError};

use crate::encoder::{Problem, VarKey};
use crate::loop_ir::LoopGraph;
use crate::machine::{Processor, RfIdx, SlotIdx};
use crate::solver::Model;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Placement {
    pub id: String,
    pub cycle: i64,
    pub slot: String,
}

/// Value of `producer` sent from its output port over `bus` into
/// `write_port` of `rf`, at `cycle`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Route {
    pub producer: String,
    pub cycle: i64,
    pub out_port: String,
    pub bus: String,
    pub write_port: String,
    pub rf: String,
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModuloSchedule {
    pub ii: u32,
    pub stages: u32,
    pub ops: Vec<Placement>,
    pub routing: Vec<Route>,
    /// Routes happen `latency` cycles after issue rather than at issue.
    #[serde(default, skip_serializing_if = "is_false")]
    pub writeback_offset: bool,
}

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("invalid schedule JSON at {path}: {msg}")]
    Schema { path: String, msg: String },
    #[error("model inconsistent with the problem: {0}")]
    Inconsistent(String),
}

impl ModuloSchedule {
    pub fn from_json(text: &str) -> Result<Self, ScheduleError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| ScheduleError::Schema {
            path: e.path().to_string(),
            msg: e.inner().to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schedule serializes")
    }

    /// Number of cycles one iteration occupies: last issue cycle + 1.
    pub fn span(&self) -> i64 {
        self.ops.iter().map(|o| o.cycle).max().map_or(0, |c| c + 1)
    }

    pub fn placement(&self, id: &str) -> Option<&Placement> {
        self.ops.iter().find(|o| o.id == id)
    }

    pub fn cycle_of(&self, id: &str) -> Option<i64> {
        self.placement(id).map(|o| o.cycle)
    }

    /// Moves every cycle by a multiple of II so the earliest op issues in
    /// `0..II`, then recomputes the stage count from the span.
    pub fn normalize(&mut self) {
        let ii = i64::from(self.ii);
        let Some(min) = self.ops.iter().map(|o| o.cycle).min() else {
            self.stages = 1;
            return;
        };
        let shift = min.div_euclid(ii) * ii;
        for o in &mut self.ops {
            o.cycle -= shift;
        }
        for r in &mut self.routing {
            r.cycle -= shift;
        }
        self.routing.sort();
        self.stages = stages_for_span(self.span(), self.ii);
    }
}

pub fn stages_for_span(span: i64, ii: u32) -> u32 {
    let ii = i64::from(ii);
    ((span + ii - 1).div_euclid(ii)).max(1) as u32
}

/// Register files each producer's value must reach, given the slot of every
/// op: for each data dependency, the files the consumer's slot reads the
/// value's operand positions from.
pub fn needed_routes(g: &LoopGraph, p: &Processor, slots: &[SlotIdx]) -> BTreeSet<(usize, RfIdx)> {
    let mut out = BTreeSet::new();
    for (_, d) in g.data_deps() {
        let Some(reg) = g.operations[d.src].def() else { continue };
        let dst = &g.operations[d.dst];
        let Some(b) = p.binding(&dst.opcode, slots[d.dst]) else { continue };
        for k in g.operand_positions(d.dst, reg) {
            if let Some(&rf) = b.operand_rfs.get(k) {
                out.insert((d.src, rf));
            }
        }
    }
    out
}

/// Routing delay of `op`'s result: its latency when routes are timed at
/// write-back, else 0.
pub fn route_shift(g: &LoopGraph, p: &Processor, op: usize, writeback_offset: bool) -> i64 {
    if writeback_offset {
        i64::from(p.latency(&g.operations[op].opcode).unwrap_or(0))
    } else {
        0
    }
}

/// Reads a schedule out of a model of `pr` (an encoding of `g` on `p`).
pub fn decode_schedule(
    m: &Model,
    pr: &Problem,
    g: &LoopGraph,
    p: &Processor,
) -> Result<ModuloSchedule, ScheduleError> {
    let n = g.operations.len();
    let mut cycles = Vec::with_capacity(n);
    let mut slots = Vec::with_capacity(n);
    for o in 0..n {
        let cv = pr
            .find_int(&VarKey::Cycle { op: o })
            .ok_or_else(|| ScheduleError::Inconsistent(format!("no cycle variable for op {o}")))?;
        cycles.push(m.int(cv));
        let chosen: Vec<SlotIdx> = (0..p.slots.len())
            .filter(|&s| {
                pr.find_bool(&VarKey::Slot { op: o, slot: s })
                    .is_some_and(|v| m.bool(v))
            })
            .collect();
        match chosen.as_slice() {
            [s] => slots.push(*s),
            _ => {
                return Err(ScheduleError::Inconsistent(format!(
                    "{} has {} slots selected",
                    g.operations[o].id,
                    chosen.len()
                )))
            }
        }
    }
    let wb = pr.options.writeback_offset;
    let mut routing = Vec::new();
    for (src, rf) in needed_routes(g, p, &slots) {
        let op = &g.operations[src];
        let port = p
            .binding(&op.opcode, slots[src])
            .and_then(|b| b.out_port)
            .ok_or_else(|| ScheduleError::Inconsistent(format!("{} has no result port", op.id)))?;
        let rc = cycles[src] + route_shift(g, p, src, wb);
        let on = |key: VarKey| pr.find_bool(&key).is_some_and(|v| m.bool(v));
        let (bus, wp) = p
            .routing_options(port, rf)
            .into_iter()
            .find(|&(b, w)| {
                on(VarKey::PortBus { cycle: rc, port, bus: b }) && on(VarKey::BusWp { cycle: rc, bus: b, wp: w })
            })
            .ok_or_else(|| {
                ScheduleError::Inconsistent(format!(
                    "no active route for {} into {} at cycle {rc}",
                    op.id, p.register_files[rf].name
                ))
            })?;
        routing.push(Route {
            producer: op.id.clone(),
            cycle: rc,
            out_port: p.ports[port].name.clone(),
            bus: p.buses[bus].clone(),
            write_port: p.write_ports[wp].name.clone(),
            rf: p.register_files[rf].name.clone(),
        });
    }
    let mut s = ModuloSchedule {
        ii: pr.ii,
        stages: pr.num_stages,
        ops: (0..n)
            .map(|o| Placement {
                id: g.operations[o].id.clone(),
                cycle: cycles[o],
                slot: p.slots[slots[o]].name.clone(),
            })
            .collect(),
        routing,
        writeback_offset: wb,
    };
    if g.operations.iter().any(|o| o.pin.cycle.is_some()) {
        s.stages = stages_for_span(s.span(), s.ii);
        s.routing.sort();
    } else {
        s.normalize();
    }
    Ok(s)
}

/// Fixed-width text rendering: one row per cycle of the single-iteration
/// schedule and one column per issue slot, followed by the kernel.
pub fn render_table(s: &ModuloSchedule, p: &Processor) -> String {
    let mut by_cycle: BTreeMap<(i64, &str), &str> = BTreeMap::new();
    for o in &s.ops {
        by_cycle.insert((o.cycle, o.slot.as_str()), o.id.as_str());
    }
    let code = expand_pipeline(s);
    let mut width = 6;
    for sl in &p.slots {
        width = width.max(sl.name.len());
    }
    for o in &s.ops {
        width = width.max(o.id.len() + 3);
    }
    let mut out = String::new();
    writeln!(out, "II={} stages={} span={}", s.ii, s.stages, s.span()).unwrap();
    let header = |out: &mut String, first: &str| {
        write!(out, "{first:>6}").unwrap();
        for sl in &p.slots {
            write!(out, " | {:<width$}", sl.name).unwrap();
        }
        out.push('\n');
    };
    header(&mut out, "cycle");
    for c in 0..s.span() {
        write!(out, "{c:>6}").unwrap();
        for sl in &p.slots {
            let cell = by_cycle.get(&(c, sl.name.as_str())).copied().unwrap_or("");
            write!(out, " | {cell:<width$}").unwrap();
        }
        out.push('\n');
    }
    out.push_str("kernel\n");
    header(&mut out, "k");
    for (k, b) in code.kernel.iter().enumerate() {
        write!(out, "{k:>6}").unwrap();
        for sl in &p.slots {
            let cell = b
                .get(&sl.name)
                .map(|x| format!("{}@{}", x.op, x.stage))
                .unwrap_or_default();
            write!(out, " | {cell:<width$}").unwrap();
        }
        out.push('\n');
    }
    out
}
