//! Legality check written directly against the machine and loop, without
//! going through the constraint model.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::{needed_routes, route_shift, stages_for_span, ModuloSchedule};
use crate::loop_ir::LoopGraph;
use crate::machine::Processor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    UnknownOp,
    MissingOp,
    DuplicateOp,
    IllegalSlot,
    CycleRange,
    StageCount,
    Pin,
    SlotConflict,
    Dependency,
    BadRoute,
    BusConflict,
    WritePortConflict,
    MissingRoute,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: String,
}

fn v(kind: ViolationKind, message: String) -> Violation {
    Violation { kind, message }
}

/// Every rule `s` breaks on `p` for loop `g`. Empty iff the schedule is legal.
pub fn check_schedule(s: &ModuloSchedule, g: &LoopGraph, p: &Processor) -> Vec<Violation> {
    use ViolationKind::*;
    let mut out = Vec::new();
    if s.ii == 0 {
        out.push(v(StageCount, "II must be positive".into()));
        return out;
    }
    let ii = i64::from(s.ii);
    let n = g.operations.len();
    let mut cycle = vec![None; n];
    let mut slot = vec![None; n];
    for pl in &s.ops {
        let Some(o) = g.op_index(&pl.id) else {
            out.push(v(UnknownOp, format!("schedule places unknown op {}", pl.id)));
            continue;
        };
        if cycle[o].is_some() {
            out.push(v(DuplicateOp, format!("{} placed twice", pl.id)));
            continue;
        }
        cycle[o] = Some(pl.cycle);
        match p.slot_index(&pl.slot) {
            Ok(si) if g.legal_slots(p, o).contains(&si) => slot[o] = Some(si),
            _ => out.push(v(IllegalSlot, format!("{} cannot issue on {}", pl.id, pl.slot))),
        }
        let max_cycle = ii * i64::from(s.stages) - 1;
        if pl.cycle < 0 || pl.cycle > max_cycle {
            out.push(v(
                CycleRange,
                format!("{} at cycle {} outside 0..={max_cycle}", pl.id, pl.cycle),
            ));
        }
        let op = &g.operations[o];
        if let Some(pc) = op.pin.cycle {
            if i64::from(pc) != pl.cycle {
                out.push(v(Pin, format!("{} pinned to cycle {pc}, placed at {}", op.id, pl.cycle)));
            }
        }
        if let Some(ps) = &op.pin.slot {
            if ps != &pl.slot {
                out.push(v(Pin, format!("{} pinned to {ps}, placed on {}", op.id, pl.slot)));
            }
        }
    }
    for (o, c) in cycle.iter().enumerate() {
        if c.is_none() {
            out.push(v(MissingOp, format!("{} is not placed", g.operations[o].id)));
        }
    }
    let expected = stages_for_span(s.span(), s.ii);
    if !s.ops.is_empty() && s.stages != expected {
        out.push(v(
            StageCount,
            format!("span {} at II={} needs {expected} stage(s), schedule says {}", s.span(), s.ii, s.stages),
        ));
    }

    // slot exclusivity
    let mut users: BTreeMap<(usize, i64), Vec<usize>> = BTreeMap::new();
    for o in 0..n {
        if let (Some(c), Some(sl)) = (cycle[o], slot[o]) {
            users.entry((sl, c.rem_euclid(ii))).or_default().push(o);
        }
    }
    for ((sl, mc), ops) in &users {
        if ops.len() > 1 {
            let names: Vec<&str> = ops.iter().map(|&o| g.operations[o].id.as_str()).collect();
            out.push(v(
                SlotConflict,
                format!("{} share {} at modulo cycle {mc}", names.join(", "), p.slots[*sl].name),
            ));
        }
    }

    // dependencies
    for d in &g.deps {
        if let (Some(a), Some(b)) = (cycle[d.src], cycle[d.dst]) {
            let need = a + i64::from(d.latency) - i64::from(d.distance) * ii;
            if b < need {
                out.push(v(
                    Dependency,
                    format!(
                        "{} at {b} but {} at {a} requires >= {need} (latency {}, distance {})",
                        g.operations[d.dst].id, g.operations[d.src].id, d.latency, d.distance
                    ),
                ));
            }
        }
    }

    // routes
    let mut bus_ports: BTreeMap<(usize, i64), BTreeSet<usize>> = BTreeMap::new();
    let mut wp_buses: BTreeMap<(usize, i64), BTreeSet<usize>> = BTreeMap::new();
    let mut routed: BTreeSet<(usize, usize)> = BTreeSet::new();
    for r in &s.routing {
        let bad = |msg: String| v(BadRoute, format!("route of {} at {}: {msg}", r.producer, r.cycle));
        let Some(o) = g.op_index(&r.producer) else {
            out.push(bad("unknown producer".into()));
            continue;
        };
        let (Ok(port), Ok(bus), Ok(wp), Ok(rf)) = (
            p.port_index(&r.out_port),
            p.bus_index(&r.bus),
            p.wp_index(&r.write_port),
            p.rf_index(&r.rf),
        ) else {
            out.push(bad("unknown port, bus, write port or register file".into()));
            continue;
        };
        if !p.port_bus.contains(&(port, bus)) {
            out.push(bad(format!("{} is not wired to {}", r.out_port, r.bus)));
        }
        if !p.bus_wp.contains(&(bus, wp)) {
            out.push(bad(format!("{} is not wired to {}", r.bus, r.write_port)));
        }
        if p.write_ports[wp].rf != rf {
            out.push(bad(format!("{} does not write {}", r.write_port, r.rf)));
        }
        if let (Some(c), Some(sl)) = (cycle[o], slot[o]) {
            let expect_port = p.binding(&g.operations[o].opcode, sl).and_then(|b| b.out_port);
            if expect_port != Some(port) {
                out.push(bad(format!("{} does not produce on {}", r.producer, r.out_port)));
            }
            let expect_cycle = c + route_shift(g, p, o, s.writeback_offset);
            if r.cycle != expect_cycle {
                out.push(bad(format!("expected at cycle {expect_cycle}")));
            }
        }
        let mc = r.cycle.rem_euclid(ii);
        bus_ports.entry((bus, mc)).or_default().insert(port);
        wp_buses.entry((wp, mc)).or_default().insert(bus);
        routed.insert((o, rf));
    }
    for ((bus, mc), ports) in &bus_ports {
        if ports.len() > 1 {
            let names: Vec<&str> = ports.iter().map(|&pt| p.ports[pt].name.as_str()).collect();
            out.push(v(
                BusConflict,
                format!("bus {} driven by {} at modulo cycle {mc}", p.buses[*bus], names.join(", ")),
            ));
        }
    }
    for ((wp, mc), buses) in &wp_buses {
        if buses.len() > 1 {
            let names: Vec<&str> = buses.iter().map(|&b| p.buses[b].as_str()).collect();
            out.push(v(
                WritePortConflict,
                format!(
                    "write port {} fed by {} at modulo cycle {mc}",
                    p.write_ports[*wp].name,
                    names.join(", ")
                ),
            ));
        }
    }
    if slot.iter().all(Option::is_some) {
        let slots: Vec<usize> = slot.iter().map(|s| s.unwrap()).collect();
        for (o, rf) in needed_routes(g, p, &slots) {
            if !routed.contains(&(o, rf)) {
                out.push(v(
                    MissingRoute,
                    format!(
                        "value of {} never reaches {}",
                        g.operations[o].id, p.register_files[rf].name
                    ),
                ));
            }
        }
    }
    out
}
