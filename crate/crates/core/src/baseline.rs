//! Iterative modulo scheduling, used as a heuristic yardstick for the
//! optimal search.
//!
//! Per II, ops are placed in decreasing height order at the first free
//! `(cycle, slot)` in `[estart, estart + II)`. When nothing fits, the op is
//! forced in and whatever it collides with is evicted. Routes are assigned
//! greedily (first free bus and write port) after every placement, and a
//! routing failure counts as a collision.

use std::collections::BTreeMap;

use crate::bounds;
use crate::loop_ir::{augment_loop_carried, LoopGraph};
use crate::machine::{BusIdx, PortIdx, Processor, SlotIdx, WpIdx};
use crate::schedule::{check_schedule, needed_routes, route_shift, stages_for_span, ModuloSchedule, Placement, Route};
use crate::search::default_max_ii;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ImsOptions {
    /// Highest II tried; defaults to the search's cap.
    pub max_ii: Option<u32>,
    /// Placements allowed per II; defaults to three per op.
    pub budget: Option<usize>,
    pub writeback_offset: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeuristicResult {
    pub schedule: Option<ModuloSchedule>,
    pub achieved_ii: Option<u32>,
    /// Placements made over all IIs tried.
    pub attempts: usize,
}

struct State<'a> {
    g: &'a LoopGraph,
    p: &'a Processor,
    ii: i64,
    wb: bool,
    cycle: Vec<Option<i64>>,
    slot: Vec<SlotIdx>,
    /// Last cycle each op was placed at, to move forced ops forward.
    last: Vec<Option<i64>>,
}

/// Routes as `(producer, rf, port, cycle, bus, wp)`.
type Routed = Vec<(usize, usize, PortIdx, i64, BusIdx, WpIdx)>;

impl State<'_> {
    fn placed_slots(&self) -> Option<Vec<SlotIdx>> {
        (0..self.cycle.len()).map(|o| self.cycle[o].map(|_| self.slot[o])).collect()
    }

    /// Greedy route assignment over the placed ops; on failure, the
    /// producers left without a route.
    fn route(&self) -> Result<Routed, Vec<usize>> {
        let (g, p) = (self.g, self.p);
        // only dependencies whose two ends are placed
        let slots: Vec<SlotIdx> = self.slot.clone();
        let mut bus_port: BTreeMap<(BusIdx, i64), PortIdx> = BTreeMap::new();
        let mut wp_bus: BTreeMap<(WpIdx, i64), BusIdx> = BTreeMap::new();
        let mut out = Vec::new();
        let mut failed = Vec::new();
        let mut placed_g = g.clone();
        placed_g
            .deps
            .retain(|d| self.cycle[d.src].is_some() && self.cycle[d.dst].is_some());
        for (o, rf) in needed_routes(&placed_g, p, &slots) {
            let port = match p.binding(&g.operations[o].opcode, slots[o]).and_then(|b| b.out_port) {
                Some(x) => x,
                None => {
                    failed.push(o);
                    continue;
                }
            };
            let rc = self.cycle[o].unwrap() + route_shift(g, p, o, self.wb);
            let mc = rc.rem_euclid(self.ii);
            let pick = p.routing_options(port, rf).into_iter().find(|&(b, w)| {
                bus_port.get(&(b, mc)).is_none_or(|&x| x == port) && wp_bus.get(&(w, mc)).is_none_or(|&x| x == b)
            });
            match pick {
                Some((b, w)) => {
                    bus_port.insert((b, mc), port);
                    wp_bus.insert((w, mc), b);
                    out.push((o, rf, port, rc, b, w));
                }
                None => failed.push(o),
            }
        }
        if failed.is_empty() {
            Ok(out)
        } else {
            Err(failed)
        }
    }

    fn slot_taken(&self, s: SlotIdx, t: i64) -> Option<usize> {
        (0..self.cycle.len()).find(|&o| self.slot[o] == s && self.cycle[o].is_some_and(|c| (c - t).rem_euclid(self.ii) == 0))
    }

    fn estart(&self, o: usize) -> i64 {
        let mut e = 0;
        for d in &self.g.deps {
            if d.dst == o && d.src != o {
                if let Some(c) = self.cycle[d.src] {
                    e = e.max(c + i64::from(d.latency) - i64::from(d.distance) * self.ii);
                }
            }
        }
        e
    }

    fn legal(&self, o: usize) -> Vec<SlotIdx> {
        let op = &self.g.operations[o];
        self.g
            .legal_slots(self.p, o)
            .into_iter()
            .filter(|&s| op.pin.slot.as_ref().is_none_or(|n| *n == self.p.slots[s].name))
            .collect()
    }

    /// Ops other than `o` whose dependencies with `o` at its cycle fail.
    fn dep_conflicts(&self, o: usize) -> Vec<usize> {
        let c = self.cycle[o].unwrap();
        let mut out = Vec::new();
        for d in &self.g.deps {
            let w = i64::from(d.latency) - i64::from(d.distance) * self.ii;
            if d.src == o && d.dst != o {
                if let Some(cd) = self.cycle[d.dst] {
                    if cd < c + w {
                        out.push(d.dst);
                    }
                }
            }
            if d.dst == o && d.src != o {
                if let Some(cs) = self.cycle[d.src] {
                    if c < cs + w {
                        out.push(d.src);
                    }
                }
            }
        }
        out
    }
}

/// Longest path to any sink using edge weights `latency - distance * II`.
fn heights(g: &LoopGraph, ii: i64) -> Option<Vec<i64>> {
    let n = g.operations.len();
    let mut h = vec![0i64; n];
    for _ in 0..=n {
        let mut changed = false;
        for d in &g.deps {
            let w = i64::from(d.latency) - i64::from(d.distance) * ii;
            if h[d.dst] + w > h[d.src] {
                h[d.src] = h[d.dst] + w;
                changed = true;
            }
        }
        if !changed {
            return Some(h);
        }
    }
    None
}

fn try_ii(g: &LoopGraph, p: &Processor, ii: u32, budget: usize, wb: bool, attempts: &mut usize) -> Option<ModuloSchedule> {
    let n = g.operations.len();
    let iil = i64::from(ii);
    let h = heights(g, iil)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&o| (std::cmp::Reverse(h[o]), o));
    let mut st = State {
        g,
        p,
        ii: iil,
        wb,
        cycle: vec![None; n],
        slot: vec![0; n],
        last: vec![None; n],
    };
    if (0..n).any(|o| st.legal(o).is_empty()) {
        return None;
    }
    let mut left = budget;
    while let Some(&o) = order.iter().find(|&&o| st.cycle[o].is_none()) {
        if left == 0 {
            return None;
        }
        left -= 1;
        *attempts += 1;
        let pin = g.operations[o].pin.cycle.map(i64::from);
        let estart = pin.unwrap_or_else(|| st.estart(o));
        let hi = if pin.is_some() { estart } else { estart + iil - 1 };
        let legal = st.legal(o);
        let mut done = false;
        'search: for t in estart..=hi {
            for &s in &legal {
                if st.slot_taken(s, t).is_some() {
                    continue;
                }
                st.cycle[o] = Some(t);
                st.slot[o] = s;
                if st.dep_conflicts(o).is_empty() && st.route().is_ok() {
                    done = true;
                    break 'search;
                }
                st.cycle[o] = None;
            }
        }
        if !done {
            let t = match (pin, st.last[o]) {
                (Some(pc), _) => pc,
                (None, Some(prev)) if prev >= estart => prev + 1,
                _ => estart,
            };
            let s = legal[0];
            if let Some(x) = st.slot_taken(s, t) {
                st.cycle[x] = None;
            }
            st.cycle[o] = Some(t);
            st.slot[o] = s;
            for x in st.dep_conflicts(o) {
                st.cycle[x] = None;
            }
            if let Err(failed) = st.route() {
                let mut victims: Vec<usize> = failed.into_iter().filter(|&x| x != o).collect();
                if victims.is_empty() {
                    // o's own value has no way out: make room among the other producers
                    let mc = (t + route_shift(g, p, o, wb)).rem_euclid(iil);
                    victims = (0..n)
                        .filter(|&x| x != o)
                        .filter(|&x| st.cycle[x].is_some_and(|c| (c + route_shift(g, p, x, wb)).rem_euclid(iil) == mc))
                        .collect();
                }
                for x in victims {
                    st.cycle[x] = None;
                }
            }
        }
        st.last[o] = st.cycle[o];
    }
    let slots = st.placed_slots()?;
    let routes = st.route().ok()?;
    let pinned = g.operations.iter().any(|o| o.pin.cycle.is_some());
    let mut s = ModuloSchedule {
        ii,
        stages: 1,
        ops: (0..n)
            .map(|o| Placement {
                id: g.operations[o].id.clone(),
                cycle: st.cycle[o].unwrap(),
                slot: p.slots[slots[o]].name.clone(),
            })
            .collect(),
        routing: routes
            .into_iter()
            .map(|(o, rf, port, rc, b, w)| Route {
                producer: g.operations[o].id.clone(),
                cycle: rc,
                out_port: p.ports[port].name.clone(),
                bus: p.buses[b].clone(),
                write_port: p.write_ports[w].name.clone(),
                rf: p.register_files[rf].name.clone(),
            })
            .collect(),
        writeback_offset: wb,
    };
    if pinned {
        s.stages = stages_for_span(s.span(), ii);
        s.routing.sort();
    } else {
        s.normalize();
    }
    check_schedule(&s, g, p).is_empty().then_some(s)
}

pub fn ims_schedule(g: &LoopGraph, p: &Processor, opts: &ImsOptions) -> HeuristicResult {
    let g = &augment_loop_carried(g);
    let mut attempts = 0;
    let fail = |attempts| HeuristicResult {
        schedule: None,
        achieved_ii: None,
        attempts,
    };
    let Ok(mii) = bounds::mii(g, p) else {
        return fail(0);
    };
    let max_ii = opts.max_ii.unwrap_or_else(|| default_max_ii(g, p).max(mii));
    let budget = opts.budget.unwrap_or(3 * g.operations.len().max(1));
    for ii in mii..=max_ii {
        if let Some(s) = try_ii(g, p, ii, budget, opts.writeback_offset, &mut attempts) {
            return HeuristicResult {
                schedule: Some(s),
                achieved_ii: Some(ii),
                attempts,
            };
        }
    }
    fail(attempts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::schedule::{brute_force_min_ii, OracleLimits};
    use crate::search::{find_schedule, SearchOptions};

    #[test]
    fn g4_is_easy() {
        let p = fixtures::toy5();
        let r = ims_schedule(&fixtures::g4(&p), &p, &ImsOptions::default());
        assert_eq!(r.achieved_ii, Some(1));
        let g = augment_loop_carried(&fixtures::g4(&p));
        assert!(check_schedule(r.schedule.as_ref().unwrap(), &g, &p).is_empty());
    }

    #[test]
    fn zero_distance_cycle_fails() {
        let p = fixtures::toy5();
        let text = r#"{"ops":[{"id":"A","opcode":"ADD"},{"id":"B","opcode":"ADD"}],
            "deps":[{"src":"A","dst":"B","latency":1,"distance":0,"kind":"other"},
                    {"src":"B","dst":"A","latency":1,"distance":0,"kind":"other"}]}"#;
        let g = crate::loop_ir::load_loop_str(text, &p).unwrap();
        let r = ims_schedule(&g, &p, &ImsOptions::default());
        assert_eq!(r.schedule, None);
        assert_eq!(r.achieved_ii, None);
    }

    #[test]
    fn routing_scarce_fixture_loses_to_the_optimum() {
        let p = fixtures::routing_scarce_machine();
        let g = fixtures::routing_scarce_loop(&p);
        let h = ims_schedule(&g, &p, &ImsOptions::default());
        let opt = find_schedule(&g, &p, &SearchOptions::default()).unwrap();
        let opt_ii = opt.schedule().unwrap().ii;
        let oracle = brute_force_min_ii(&augment_loop_carried(&g), &p, &OracleLimits::default())
            .unwrap()
            .unwrap();
        assert_eq!(opt_ii, oracle.0);
        assert_eq!(opt_ii, 3);
        assert_eq!(h.achieved_ii, Some(4));
        assert!(check_schedule(h.schedule.as_ref().unwrap(), &augment_loop_carried(&g), &p).is_empty());
    }
}
