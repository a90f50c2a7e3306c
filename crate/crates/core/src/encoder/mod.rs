//! Builds the labelled constraint problem for one `(II, stages)` probe.
//!
//! Variables: `Cycle_o` (integer), `Slot_{o,s}` for each legal slot, and the
//! routing connections `Conn_{c,port,bus}` / `Conn_{c,bus,wp}` for every
//! edge some data dependency can route through and every cycle of the
//! single-iteration schedule.
//!
//! Constraint families and their label prefixes:
//!
//! | prefix | meaning |
//! |--------|---------|
//! | `c1`   | `0 <= Cycle_o <= MaxCycle` |
//! | `c2`   | exactly one slot per operation |
//! | `c3`   | a slot is used at most once per modulo cycle |
//! | `c4`   | `Cycle_dst >= Cycle_src + l - d*II` |
//! | `c5`   | every data dependency has a route into the consumer's register file |
//! | `c6`   | a bus carries at most one output port per modulo cycle |
//! | `c7`   | a write port listens to at most one bus per modulo cycle |
//! | `pin`  | user pins |
//! | `r1`..`r7` | register pressure (see [`pressure`]) |

mod ast;
mod pressure;
mod problem;

use std::collections::BTreeSet;

pub use ast::{BoolExpr, BoolVar, CmpOp, IntExpr, IntVar};
pub use pressure::{encode_register_pressure, live_var};
pub use problem::{
    BoolVarDecl, Constraint, EncodeOptions, EncodingStyle, Entity, Family, IntVarDecl, Label,
    LabelInfo, Problem, VarKey,
};

use crate::loop_ir::LoopGraph;
use crate::machine::{BusIdx, PortIdx, Processor, WpIdx};

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum EncodeError {
    #[error("register-pressure encoding needs at least one register file")]
    NoRegisterFiles,
    #[error("unknown register file index {0}")]
    UnknownRegisterFile(usize),
}

pub fn cycle_var(pr: &mut Problem, g: &LoopGraph, op: usize) -> IntVar {
    let span = pr.max_cycle + 1;
    pr.int_var(
        VarKey::Cycle { op },
        format!("cycle[{}]", g.operations[op].id),
        -span,
        pr.max_cycle + span,
    )
}

pub fn slot_var(pr: &mut Problem, g: &LoopGraph, p: &Processor, op: usize, slot: usize) -> BoolVar {
    pr.bool_var(
        VarKey::Slot { op, slot },
        format!("slot[{},{}]", g.operations[op].id, p.slots[slot].name),
    )
}

fn port_bus_var(pr: &mut Problem, p: &Processor, cycle: i64, port: PortIdx, bus: BusIdx) -> BoolVar {
    pr.bool_var(
        VarKey::PortBus { cycle, port, bus },
        format!("conn[{cycle},{},{}]", p.ports[port].name, p.buses[bus]),
    )
}

fn bus_wp_var(pr: &mut Problem, p: &Processor, cycle: i64, bus: BusIdx, wp: WpIdx) -> BoolVar {
    pr.bool_var(
        VarKey::BusWp { cycle, bus, wp },
        format!("conn[{cycle},{},{}]", p.buses[bus], p.write_ports[wp].name),
    )
}

/// Last cycle at which a routing connection can be made.
pub fn routing_horizon(g: &LoopGraph, p: &Processor, max_cycle: i64, opts: EncodeOptions) -> i64 {
    if !opts.writeback_offset {
        return max_cycle;
    }
    let max_lat = g
        .operations
        .iter()
        .filter(|o| !o.defs.is_empty())
        .map(|o| p.latency(&o.opcode).unwrap_or(0))
        .max()
        .unwrap_or(0);
    max_cycle + i64::from(max_lat)
}

fn info(family: Family, entities: Vec<Entity>, text: String) -> LabelInfo {
    LabelInfo {
        family,
        entities,
        text,
    }
}

/// Core scheduling model for one `(ii, num_stages)` probe, without register
/// pressure. `g` must be augmented and validated.
pub fn encode_core(
    g: &LoopGraph,
    p: &Processor,
    ii: u32,
    num_stages: u32,
    opts: EncodeOptions,
) -> Problem {
    assert!(ii >= 1 && num_stages >= 1);
    let mut pr = Problem::new(ii, num_stages, opts);
    let iim = i64::from(ii);
    let max_cycle = pr.max_cycle;
    let n = g.operations.len();
    let name = |o: usize| g.operations[o].id.as_str();

    let cycles: Vec<IntVar> = (0..n).map(|o| cycle_var(&mut pr, g, o)).collect();
    let legal: Vec<Vec<usize>> = (0..n).map(|o| g.legal_slots(p, o)).collect();
    for o in 0..n {
        for &s in &legal[o] {
            slot_var(&mut pr, g, p, o, s);
        }
    }
    let horizon = routing_horizon(g, p, max_cycle, opts);
    let (active_pb, active_bw) = active_edges(g, p, &legal);
    for c in 0..=horizon {
        for &(port, bus) in &active_pb {
            port_bus_var(&mut pr, p, c, port, bus);
        }
        for &(bus, wp) in &active_bw {
            bus_wp_var(&mut pr, p, c, bus, wp);
        }
    }
    let slot_of = |pr: &Problem, o: usize, s: usize| -> BoolExpr {
        BoolExpr::Var(pr.find_bool(&VarKey::Slot { op: o, slot: s }).unwrap())
    };
    let cyc = |o: usize| IntExpr::Var(cycles[o]);

    // c1
    for o in 0..n {
        pr.assert(
            format!("c1/op={}", name(o)),
            BoolExpr::and(vec![cyc(o).ge(0.into()), cyc(o).le(max_cycle.into())]),
            info(
                Family::CycleRange,
                vec![Entity::Op(name(o).into())],
                format!("{} issues within cycles 0..={max_cycle}", name(o)),
            ),
        );
    }

    // c2
    for o in 0..n {
        let xs = legal[o].iter().map(|&s| slot_of(&pr, o, s)).collect();
        pr.assert(
            format!("c2/op={}", name(o)),
            BoolExpr::ExactlyOne(xs),
            info(
                Family::OneSlot,
                vec![Entity::Op(name(o).into())],
                format!("{} issues on exactly one slot", name(o)),
            ),
        );
    }

    // c3
    for s in 0..p.slots.len() {
        let sname = &p.slots[s].name;
        for o1 in 0..n {
            if !legal[o1].contains(&s) {
                continue;
            }
            for o2 in o1 + 1..n {
                if !legal[o2].contains(&s) {
                    continue;
                }
                let both = vec![slot_of(&pr, o1, s), slot_of(&pr, o2, s)];
                let ents = |extra: Vec<Entity>| {
                    let mut v = vec![
                        Entity::Slot(sname.clone()),
                        Entity::Op(name(o1).into()),
                        Entity::Op(name(o2).into()),
                    ];
                    v.extend(extra);
                    v
                };
                match opts.style {
                    EncodingStyle::Compact => {
                        for mc in 0..iim {
                            let mut conj = both.clone();
                            conj.push(cyc(o1).modulo(iim).eq(mc.into()));
                            conj.push(cyc(o2).modulo(iim).eq(mc.into()));
                            pr.assert(
                                format!("c3/slot={sname}/o1={}/o2={}/mc={mc}", name(o1), name(o2)),
                                !BoolExpr::and(conj),
                                info(
                                    Family::SlotExclusive,
                                    ents(vec![Entity::ModCycle(mc)]),
                                    format!(
                                        "{} and {} cannot both use {sname} at modulo cycle {mc}",
                                        name(o1),
                                        name(o2)
                                    ),
                                ),
                            );
                        }
                    }
                    EncodingStyle::Paper => {
                        for c1 in 0..=max_cycle {
                            for c2 in (c1 % iim..=max_cycle).step_by(ii as usize) {
                                let mut conj = both.clone();
                                conj.push(cyc(o1).eq(c1.into()));
                                conj.push(cyc(o2).eq(c2.into()));
                                pr.assert(
                                    format!(
                                        "c3/slot={sname}/o1={}/o2={}/c1={c1}/c2={c2}",
                                        name(o1),
                                        name(o2)
                                    ),
                                    !BoolExpr::and(conj),
                                    info(
                                        Family::SlotExclusive,
                                        ents(vec![
                                            Entity::ModCycle(c1 % iim),
                                            Entity::Cycle(c1),
                                            Entity::Cycle(c2),
                                        ]),
                                        format!(
                                            "{} at {c1} and {} at {c2} cannot both use {sname}",
                                            name(o1),
                                            name(o2)
                                        ),
                                    ),
                                );
                            }
                        }
                    }
                }
            }
        }
    }

    // c4
    for (i, d) in g.deps.iter().enumerate() {
        let offset = i64::from(d.latency) - i64::from(d.distance) * iim;
        pr.assert(
            format!("c4/dep={i}/src={}/dst={}", name(d.src), name(d.dst)),
            cyc(d.dst).ge(cyc(d.src) + offset),
            info(
                Family::Dependency,
                vec![Entity::Op(name(d.src).into()), Entity::Op(name(d.dst).into())],
                format!(
                    "{} must issue at least {offset} cycle(s) after {} ({} dependency, latency {}, distance {})",
                    name(d.dst),
                    name(d.src),
                    d.kind,
                    d.latency,
                    d.distance
                ),
            ),
        );
    }

    // c5
    for (i, d) in g.data_deps() {
        let src = &g.operations[d.src];
        let dst = &g.operations[d.dst];
        let reg = src.def().expect("validated data dependency");
        let positions: Vec<usize> = g.operand_positions(d.dst, reg).collect();
        let shift = if opts.writeback_offset {
            i64::from(p.latency(&src.opcode).unwrap_or(0))
        } else {
            0
        };
        for &s1 in &legal[d.src] {
            let port = p
                .binding(&src.opcode, s1)
                .and_then(|b| b.out_port)
                .expect("legal slot of a producer has a result port");
            for &s2 in &legal[d.dst] {
                let binding = p.binding(&dst.opcode, s2).expect("legal slot binding");
                let rfs: BTreeSet<usize> = positions.iter().map(|&k| binding.operand_rfs[k]).collect();
                for rf in rfs {
                    let rfname = &p.register_files[rf].name;
                    let s1n = &p.slots[s1].name;
                    let s2n = &p.slots[s2].name;
                    let base = format!(
                        "c5/dep={i}/src={}/dst={}/s1={s1n}/s2={s2n}/rf={rfname}",
                        src.id, dst.id
                    );
                    let ents = |extra: Option<i64>| {
                        let mut v = vec![
                            Entity::Op(src.id.clone()),
                            Entity::Op(dst.id.clone()),
                            Entity::Slot(s1n.clone()),
                            Entity::Slot(s2n.clone()),
                            Entity::Port(p.ports[port].name.clone()),
                            Entity::RegisterFile(rfname.clone()),
                        ];
                        v.extend(extra.map(Entity::Cycle));
                        v
                    };
                    let options = p.routing_options(port, rf);
                    let placed = vec![slot_of(&pr, d.src, s1), slot_of(&pr, d.dst, s2)];
                    if options.is_empty() {
                        pr.assert(
                            format!("{base}/noroute"),
                            !BoolExpr::and(placed),
                            info(
                                Family::Routing,
                                ents(None),
                                format!(
                                    "no route from {} ({s1n}) to {rfname} for {} on {s2n}",
                                    p.ports[port].name, dst.id
                                ),
                            ),
                        );
                        continue;
                    }
                    for c in 0..=max_cycle {
                        let rc = c + shift;
                        let routes = options
                            .iter()
                            .map(|&(b, wp)| {
                                BoolExpr::and(vec![
                                    BoolExpr::Var(port_bus_var(&mut pr, p, rc, port, b)),
                                    BoolExpr::Var(bus_wp_var(&mut pr, p, rc, b, wp)),
                                ])
                            })
                            .collect();
                        let mut cond = placed.clone();
                        cond.push(cyc(d.src).eq(c.into()));
                        pr.assert(
                            format!("{base}/c={c}"),
                            BoolExpr::and(cond).implies(BoolExpr::or(routes)),
                            info(
                                Family::Routing,
                                ents(Some(c)),
                                format!(
                                    "{} issued at {c} on {s1n} must reach {rfname} for {} on {s2n}",
                                    src.id, dst.id
                                ),
                            ),
                        );
                    }
                }
            }
        }
    }

    // c6
    for bus in 0..p.buses.len() {
        let ports: Vec<PortIdx> = active_pb
            .iter()
            .filter(|&&(_, b)| b == bus)
            .map(|&(pt, _)| pt)
            .collect();
        for (i, &p1) in ports.iter().enumerate() {
            for &p2 in &ports[i + 1..] {
                let bname = &p.buses[bus];
                let (n1, n2) = (&p.ports[p1].name, &p.ports[p2].name);
                let ents = || {
                    vec![
                        Entity::Bus(bname.clone()),
                        Entity::Port(n1.clone()),
                        Entity::Port(n2.clone()),
                    ]
                };
                exclusive_pairs(
                    &mut pr,
                    opts.style,
                    horizon,
                    |pr, c| BoolExpr::Var(port_bus_var(pr, p, c, p1, bus)),
                    |pr, c| BoolExpr::Var(port_bus_var(pr, p, c, p2, bus)),
                    |suffix| format!("c6/bus={bname}/p1={n1}/p2={n2}/{suffix}"),
                    |mc, cs| {
                        let mut e = ents();
                        e.push(Entity::ModCycle(mc));
                        e.extend(cs.into_iter().map(Entity::Cycle));
                        info(
                            Family::BusExclusive,
                            e,
                            format!("bus {bname} cannot carry both {n1} and {n2} at modulo cycle {mc}"),
                        )
                    },
                );
            }
        }
    }

    // c7
    for wp in 0..p.write_ports.len() {
        let buses: Vec<BusIdx> = active_bw
            .iter()
            .filter(|&&(_, w)| w == wp)
            .map(|&(b, _)| b)
            .collect();
        let wname = &p.write_ports[wp].name;
        let rfname = &p.register_files[p.write_ports[wp].rf].name;
        for (i, &b1) in buses.iter().enumerate() {
            for &b2 in &buses[i + 1..] {
                let (n1, n2) = (&p.buses[b1], &p.buses[b2]);
                exclusive_pairs(
                    &mut pr,
                    opts.style,
                    horizon,
                    |pr, c| BoolExpr::Var(bus_wp_var(pr, p, c, b1, wp)),
                    |pr, c| BoolExpr::Var(bus_wp_var(pr, p, c, b2, wp)),
                    |suffix| format!("c7/wp={wname}/rf={rfname}/b1={n1}/b2={n2}/{suffix}"),
                    |mc, cs| {
                        let mut e = vec![
                            Entity::WritePort(wname.clone()),
                            Entity::RegisterFile(rfname.clone()),
                            Entity::Bus(n1.clone()),
                            Entity::Bus(n2.clone()),
                            Entity::ModCycle(mc),
                        ];
                        e.extend(cs.into_iter().map(Entity::Cycle));
                        info(
                            Family::WritePortExclusive,
                            e,
                            format!(
                                "write port {wname} of {rfname} cannot listen to both {n1} and {n2} at modulo cycle {mc}"
                            ),
                        )
                    },
                );
            }
        }
    }

    // pins
    for (o, op) in g.operations.iter().enumerate() {
        if let Some(c) = op.pin.cycle {
            pr.assert(
                format!("pin/cycle/op={}", op.id),
                cyc(o).eq(i64::from(c).into()),
                info(
                    Family::Pin,
                    vec![Entity::Op(op.id.clone()), Entity::Cycle(i64::from(c))],
                    format!("{} is pinned to cycle {c}", op.id),
                ),
            );
        }
        if let Some(sname) = &op.pin.slot {
            let expr = match p.slot_index(sname) {
                Ok(s) if legal[o].contains(&s) => slot_of(&pr, o, s),
                _ => BoolExpr::Const(false),
            };
            pr.assert(
                format!("pin/slot/op={}", op.id),
                expr,
                info(
                    Family::Pin,
                    vec![Entity::Op(op.id.clone()), Entity::Slot(sname.clone())],
                    format!("{} is pinned to slot {sname}", op.id),
                ),
            );
        }
    }

    pr
}

/// Port→bus and bus→write-port edges that some data dependency of `g` can
/// route through. Connections over other edges are never needed.
fn active_edges(
    g: &LoopGraph,
    p: &Processor,
    legal: &[Vec<usize>],
) -> (BTreeSet<(PortIdx, BusIdx)>, BTreeSet<(BusIdx, WpIdx)>) {
    let mut pb = BTreeSet::new();
    let mut bw = BTreeSet::new();
    for (_, d) in g.data_deps() {
        let src = &g.operations[d.src];
        let dst = &g.operations[d.dst];
        let Some(reg) = src.def() else { continue };
        for &s1 in &legal[d.src] {
            let Some(port) = p.binding(&src.opcode, s1).and_then(|b| b.out_port) else {
                continue;
            };
            for &s2 in &legal[d.dst] {
                let binding = p.binding(&dst.opcode, s2).expect("legal slot binding");
                for k in g.operand_positions(d.dst, reg) {
                    for (b, wp) in p.routing_options(port, binding.operand_rfs[k]) {
                        pb.insert((port, b));
                        bw.insert((b, wp));
                    }
                }
            }
        }
    }
    (pb, bw)
}

/// At most one of two connection families per modulo cycle.
#[allow(clippy::too_many_arguments)]
fn exclusive_pairs(
    pr: &mut Problem,
    style: EncodingStyle,
    horizon: i64,
    mut first: impl FnMut(&mut Problem, i64) -> BoolExpr,
    mut second: impl FnMut(&mut Problem, i64) -> BoolExpr,
    label: impl Fn(String) -> String,
    describe: impl Fn(i64, Vec<i64>) -> LabelInfo,
) {
    let ii = i64::from(pr.ii);
    match style {
        EncodingStyle::Compact => {
            for mc in 0..ii.min(horizon + 1) {
                let a: Vec<_> = (mc..=horizon).step_by(ii as usize).map(|c| first(pr, c)).collect();
                let b: Vec<_> = (mc..=horizon).step_by(ii as usize).map(|c| second(pr, c)).collect();
                pr.assert(
                    label(format!("mc={mc}")),
                    !BoolExpr::and(vec![BoolExpr::or(a), BoolExpr::or(b)]),
                    describe(mc, Vec::new()),
                );
            }
        }
        EncodingStyle::Paper => {
            for c1 in 0..=horizon {
                for c2 in (c1 % ii..=horizon).step_by(ii as usize) {
                    let e = !BoolExpr::and(vec![first(pr, c1), second(pr, c2)]);
                    pr.assert(label(format!("c1={c1}/c2={c2}")), e, describe(c1 % ii, vec![c1, c2]));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::loop_ir::augment_loop_carried;

    fn g4() -> (Processor, LoopGraph) {
        let p = fixtures::toy5();
        let g = augment_loop_carried(&fixtures::g4(&p));
        (p, g)
    }

    #[test]
    fn g4_ii1_variable_counts() {
        let (p, g) = g4();
        let pr = encode_core(&g, &p, 1, 4, EncodeOptions::default());
        assert_eq!(pr.max_cycle, 3);
        let cycles = pr.int_vars.iter().filter(|v| matches!(v.key, VarKey::Cycle { .. })).count();
        let slots = pr.bool_vars.iter().filter(|v| matches!(v.key, VarKey::Slot { .. })).count();
        assert_eq!(cycles, 4);
        assert_eq!(slots, 8);
        assert_eq!(pr.count_family(Family::CycleRange), 4);
        assert_eq!(pr.count_family(Family::OneSlot), 4);
        assert_eq!(pr.count_family(Family::Dependency), 6);
    }

    #[test]
    fn g4_ii2_max_cycle() {
        let (p, g) = g4();
        let pr = encode_core(&g, &p, 2, 2, EncodeOptions::default());
        assert_eq!(pr.max_cycle, 3);
    }

    #[test]
    fn single_op_has_only_range_and_slot_constraints() {
        let p = fixtures::toy5();
        let doc: crate::loop_ir::LoopDoc =
            serde_json::from_str(r#"{"ops":[{"id":"X","opcode":"ST","uses":["v"]}]}"#).unwrap();
        let g = crate::loop_ir::load_loop(&doc, &p).unwrap();
        let pr = encode_core(&g, &p, 1, 1, EncodeOptions::default());
        for f in [
            Family::SlotExclusive,
            Family::Routing,
            Family::BusExclusive,
            Family::WritePortExclusive,
        ] {
            assert_eq!(pr.count_family(f), 0, "{f:?}");
        }
        assert_eq!(pr.count_family(Family::CycleRange), 1);
        assert_eq!(pr.count_family(Family::OneSlot), 1);
        assert_eq!(pr.constraints.len(), 2);
    }

    #[test]
    fn labels_are_unique_and_described() {
        let (p, g) = g4();
        for style in [EncodingStyle::Compact, EncodingStyle::Paper] {
            let pr = encode_core(&g, &p, 2, 2, EncodeOptions { style, writeback_offset: false });
            let labels: BTreeSet<_> = pr.labels().collect();
            assert_eq!(labels.len(), pr.constraints.len());
            assert!(pr.labels().all(|l| pr.label_info.contains_key(l)));
        }
        let pr = encode_core(&g, &p, 2, 2, EncodeOptions::default());
        assert!(pr
            .label_info
            .contains_key(&Label("c3/slot=LSU0/o1=LD/o2=ST/mc=0".into())));
    }

    #[test]
    fn encoding_is_deterministic() {
        let (p, g) = g4();
        let a = encode_core(&g, &p, 1, 4, EncodeOptions::default());
        let b = encode_core(&g, &p, 1, 4, EncodeOptions::default());
        assert_eq!(a, b);
    }
}
