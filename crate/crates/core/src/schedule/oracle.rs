//! Exhaustive search for the smallest feasible II on tiny loops. Shares no
//! code with the constraint encoding; used to cross-check the solver path.

use std::collections::BTreeMap;

use thiserror::Error;

use super::{check_schedule, needed_routes, route_shift, ModuloSchedule, Placement, Route};
use crate::loop_ir::LoopGraph;
use crate::machine::{Processor, SlotIdx};
use crate::search::measure_pressure;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleLimits {
    pub max_ops: usize,
    /// Highest II tried; defaults to the sum of latencies plus the op count.
    pub max_ii: Option<u32>,
    /// Also require every register file's pressure to fit its capacity.
    pub pressure: bool,
    pub writeback_offset: bool,
}

impl Default for OracleLimits {
    fn default() -> Self {
        OracleLimits {
            max_ops: 6,
            max_ii: None,
            pressure: false,
            writeback_offset: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("loop has {ops} ops, oracle limit is {limit}")]
    TooManyOps { ops: usize, limit: usize },
}

struct Ctx<'a> {
    g: &'a LoopGraph,
    p: &'a Processor,
    ii: i64,
    limits: OracleLimits,
    /// Absolute cycle window `[lo, hi]`, when stages are capped.
    window: Option<(i64, i64)>,
    order: Vec<usize>,
    legal: Vec<Vec<SlotIdx>>,
    slack: i64,
    /// Some op has a fixed cycle, so schedules cannot be shifted.
    pinned: bool,
    cycle: Vec<i64>,
    slot: Vec<SlotIdx>,
    placed: Vec<bool>,
    busy: BTreeMap<(SlotIdx, i64), usize>,
}

impl Ctx<'_> {
    /// Visit order: each op after one of its dependency neighbours where
    /// possible, so it can be placed relative to it.
    fn visit_order(g: &LoopGraph) -> Vec<usize> {
        let n = g.operations.len();
        let mut seen = vec![false; n];
        let mut order = Vec::with_capacity(n);
        let mut roots: Vec<usize> = (0..n).collect();
        roots.sort_by_key(|&o| g.operations[o].pin.cycle.is_none());
        for root in roots {
            if seen[root] {
                continue;
            }
            seen[root] = true;
            let mut queue = std::collections::VecDeque::from([root]);
            while let Some(x) = queue.pop_front() {
                order.push(x);
                for d in &g.deps {
                    for (a, b) in [(d.src, d.dst), (d.dst, d.src)] {
                        if a == x && !seen[b] {
                            seen[b] = true;
                            queue.push_back(b);
                        }
                    }
                }
            }
        }
        order
    }

    fn range_for(&self, o: usize) -> Option<(i64, i64)> {
        let mut lo = i64::MIN;
        let mut hi = i64::MAX;
        let mut anchored = false;
        for d in &self.g.deps {
            let w = i64::from(d.latency) - i64::from(d.distance) * self.ii;
            if d.dst == o && self.placed[d.src] {
                lo = lo.max(self.cycle[d.src] + w);
                anchored = true;
            }
            if d.src == o && self.placed[d.dst] {
                hi = hi.min(self.cycle[d.dst] - w);
                anchored = true;
            }
            if d.src == o && d.dst == o && w > 0 {
                return None;
            }
        }
        if let Some(pc) = self.g.operations[o].pin.cycle {
            lo = lo.max(i64::from(pc));
            hi = hi.min(i64::from(pc));
        }
        if self.pinned {
            lo = lo.max(0);
        }
        if let Some((wlo, whi)) = self.window {
            lo = lo.max(wlo);
            hi = hi.min(whi);
        } else if !anchored && self.g.operations[o].pin.cycle.is_none() {
            // First op of a component: shifting the component by II changes
            // nothing, so one residue class representative suffices (unless
            // pins fix the origin).
            lo = 0;
            hi = if self.pinned { self.slack } else { self.ii - 1 };
        } else if lo == i64::MIN {
            lo = hi - self.slack;
        } else if hi == i64::MAX {
            hi = lo + self.slack;
        }
        (lo <= hi).then_some((lo, hi))
    }

    fn dfs(&mut self, k: usize) -> Option<ModuloSchedule> {
        if k == self.order.len() {
            return self.finish();
        }
        let o = self.order[k];
        let (lo, hi) = self.range_for(o)?;
        for c in lo..=hi {
            for si in 0..self.legal[o].len() {
                let s = self.legal[o][si];
                let key = (s, c.rem_euclid(self.ii));
                if self.busy.contains_key(&key) {
                    continue;
                }
                self.busy.insert(key, o);
                self.cycle[o] = c;
                self.slot[o] = s;
                self.placed[o] = true;
                let found = self.dfs(k + 1);
                self.placed[o] = false;
                self.busy.remove(&key);
                if found.is_some() {
                    return found;
                }
            }
        }
        None
    }

    fn finish(&self) -> Option<ModuloSchedule> {
        let (g, p) = (self.g, self.p);
        let needs: Vec<(usize, usize, usize, i64)> = needed_routes(g, p, &self.slot)
            .into_iter()
            .map(|(o, rf)| {
                let port = p.binding(&g.operations[o].opcode, self.slot[o]).unwrap().out_port.unwrap();
                let rc = self.cycle[o] + route_shift(g, p, o, self.limits.writeback_offset);
                (o, rf, port, rc)
            })
            .collect();
        let mut choice = vec![(0, 0); needs.len()];
        if !route(p, self.ii, &needs, 0, &mut BTreeMap::new(), &mut BTreeMap::new(), &mut choice) {
            return None;
        }
        let mut s = ModuloSchedule {
            ii: self.ii as u32,
            stages: 1,
            ops: g
                .operations
                .iter()
                .enumerate()
                .map(|(o, op)| Placement {
                    id: op.id.clone(),
                    cycle: self.cycle[o],
                    slot: p.slots[self.slot[o]].name.clone(),
                })
                .collect(),
            routing: needs
                .iter()
                .zip(&choice)
                .map(|(&(o, rf, port, rc), &(bus, wp))| Route {
                    producer: g.operations[o].id.clone(),
                    cycle: rc,
                    out_port: p.ports[port].name.clone(),
                    bus: p.buses[bus].clone(),
                    write_port: p.write_ports[wp].name.clone(),
                    rf: p.register_files[rf].name.clone(),
                })
                .collect(),
            writeback_offset: self.limits.writeback_offset,
        };
        if self.pinned {
            s.stages = super::stages_for_span(s.span(), s.ii);
        } else {
            s.normalize();
        }
        if self.limits.pressure {
            let pressure = measure_pressure(&s, g, p);
            let over = p
                .register_files
                .iter()
                .any(|rf| pressure.get(&rf.name).copied().unwrap_or(0) > rf.capacity);
            if over {
                return None;
            }
        }
        debug_assert!(check_schedule(&s, g, p).is_empty(), "{:?}", check_schedule(&s, g, p));
        Some(s)
    }
}

/// Picks a `(bus, write port)` for every needed route so that, per modulo
/// cycle, a bus carries one port and a write port listens to one bus.
fn route(
    p: &Processor,
    ii: i64,
    needs: &[(usize, usize, usize, i64)],
    k: usize,
    bus_port: &mut BTreeMap<(usize, i64), usize>,
    wp_bus: &mut BTreeMap<(usize, i64), usize>,
    choice: &mut [(usize, usize)],
) -> bool {
    if k == needs.len() {
        return true;
    }
    let (_, rf, port, rc) = needs[k];
    let mc = rc.rem_euclid(ii);
    for (bus, wp) in p.routing_options(port, rf) {
        let bus_ok = bus_port.get(&(bus, mc)).is_none_or(|&x| x == port);
        let wp_ok = wp_bus.get(&(wp, mc)).is_none_or(|&x| x == bus);
        if !bus_ok || !wp_ok {
            continue;
        }
        let new_bus = bus_port.insert((bus, mc), port).is_none();
        let new_wp = wp_bus.insert((wp, mc), bus).is_none();
        choice[k] = (bus, wp);
        if route(p, ii, needs, k + 1, bus_port, wp_bus, choice) {
            return true;
        }
        if new_bus {
            bus_port.remove(&(bus, mc));
        }
        if new_wp {
            wp_bus.remove(&(wp, mc));
        }
    }
    false
}

fn check_size(g: &LoopGraph, limits: &OracleLimits) -> Result<(), OracleError> {
    if g.operations.len() > limits.max_ops {
        return Err(OracleError::TooManyOps {
            ops: g.operations.len(),
            limit: limits.max_ops,
        });
    }
    Ok(())
}

/// A legal schedule at `ii`, if one exists. With `stages`, ops must issue
/// within `0..ii * stages`; otherwise any span is allowed.
pub fn feasible_at(
    g: &LoopGraph,
    p: &Processor,
    ii: u32,
    stages: Option<u32>,
    limits: &OracleLimits,
) -> Result<Option<ModuloSchedule>, OracleError> {
    check_size(g, limits)?;
    let n = g.operations.len();
    let iil = i64::from(ii);
    let slack = g
        .deps
        .iter()
        .map(|d| (i64::from(d.distance) * iil - i64::from(d.latency)).abs())
        .sum::<i64>()
        + iil;
    let mut ctx = Ctx {
        g,
        p,
        ii: iil,
        limits: *limits,
        window: stages.map(|s| (0, iil * i64::from(s) - 1)),
        order: Ctx::visit_order(g),
        legal: (0..n).map(|o| g.legal_slots(p, o)).collect(),
        slack,
        pinned: g.operations.iter().any(|o| o.pin.cycle.is_some()),
        cycle: vec![0; n],
        slot: vec![0; n],
        placed: vec![false; n],
        busy: BTreeMap::new(),
    };
    if ctx.legal.iter().any(Vec::is_empty) {
        return Ok(None);
    }
    Ok(ctx.dfs(0))
}

/// Smallest II in `1..=max_ii` with a legal schedule, and that schedule.
pub fn brute_force_min_ii(
    g: &LoopGraph,
    p: &Processor,
    limits: &OracleLimits,
) -> Result<Option<(u32, ModuloSchedule)>, OracleError> {
    check_size(g, limits)?;
    let max_ii = limits.max_ii.unwrap_or_else(|| {
        let lat: u32 = g
            .operations
            .iter()
            .map(|o| p.latency(&o.opcode).unwrap_or(0))
            .sum();
        lat + g.operations.len() as u32
    });
    for ii in 1..=max_ii.max(1) {
        if let Some(s) = feasible_at(g, p, ii, None, limits)? {
            return Ok(Some((ii, s)));
        }
    }
    Ok(None)
}
