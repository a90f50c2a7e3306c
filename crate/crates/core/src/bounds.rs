//! Lower bounds on II and the stage window searched at each II.

use std::collections::BTreeSet;

use serde::Serialize;
use thiserror::Error;

use crate::loop_ir::LoopGraph;
use crate::machine::Processor;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BoundsError {
    #[error("dependence cycle with zero total distance and positive latency through {ops:?}; no II can satisfy it")]
    ZeroDistanceCycle { ops: Vec<String> },
    #[error("disconnected dependency graph; supply --max-stages")]
    Disconnected,
    #[error("negative cycle in the separation graph at II={ii}: infeasible at this II")]
    NegativeCycle { ii: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StageBounds {
    pub min_stages: u32,
    pub max_stages: u32,
}

/// Resource bound: ops and slots split into the connected components of the
/// op/slot legality relation; each component needs `ceil(ops / slots)`.
pub fn res_mii(g: &LoopGraph, p: &Processor) -> u32 {
    let n = g.operations.len();
    let mut uf = UnionFind::new(n + p.slots.len());
    for op in 0..n {
        for s in g.legal_slots(p, op) {
            uf.union(op, n + s);
        }
    }
    let mut ops = vec![0u32; n + p.slots.len()];
    let mut slots = vec![0u32; n + p.slots.len()];
    for op in 0..n {
        ops[uf.find(op)] += 1;
    }
    for s in 0..p.slots.len() {
        slots[uf.find(n + s)] += 1;
    }
    ops.iter()
        .zip(&slots)
        .filter(|(_, &s)| s > 0)
        .map(|(&o, &s)| o.div_ceil(s))
        .max()
        .unwrap_or(1)
        .max(1)
}

/// Routing bound. A value that must reach a register file occupies one
/// bus and one write port of that file for one modulo cycle, and a bus or
/// write port carries one value per modulo cycle, so
/// `ceil(values / buses)` and `ceil(values into f / write ports of f)`
/// both bound II from below, counting only buses and write ports that lie
/// on some route. Files are counted only when every legal slot
/// of some consumer reads from them. With writeback timing two results of
/// one port can share a cycle, so the bound is 1 there.
pub fn route_mii(g: &LoopGraph, p: &Processor, writeback_offset: bool) -> u32 {
    if writeback_offset {
        return 1;
    }
    let mut routed = BTreeSet::new();
    let mut into: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); p.register_files.len()];
    for (_, d) in g.data_deps() {
        let Some(reg) = g.operations[d.src].def() else { continue };
        let positions: Vec<usize> = g.operand_positions(d.dst, reg).collect();
        if positions.is_empty() {
            continue;
        }
        routed.insert(d.src);
        let per_slot: Vec<BTreeSet<usize>> = g
            .legal_slots(p, d.dst)
            .into_iter()
            .filter_map(|s| p.binding(&g.operations[d.dst].opcode, s))
            .map(|b| positions.iter().filter_map(|&k| b.operand_rfs.get(k).copied()).collect())
            .collect();
        if let Some((first, rest)) = per_slot.split_first() {
            for &rf in first {
                if rest.iter().all(|x| x.contains(&rf)) {
                    into[rf].insert(d.src);
                }
            }
        }
    }
    // only buses and write ports on some port-to-file route can carry a value
    let mut buses = BTreeSet::new();
    let mut wps: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); p.register_files.len()];
    for port in 0..p.ports.len() {
        for (rf, w) in wps.iter_mut().enumerate() {
            for (b, wp) in p.routing_options(port, rf) {
                buses.insert(b);
                w.insert(wp);
            }
        }
    }
    let ratio = |n: usize, k: usize| if k == 0 { 1 } else { n.div_ceil(k) as u32 };
    let mut bound = ratio(routed.len(), buses.len());
    for (vals, w) in into.iter().zip(&wps) {
        bound = bound.max(ratio(vals.len(), w.len()));
    }
    bound.max(1)
}

/// Longest-path relaxation from every node at 0 over `edges`. `None` if a
/// positive cycle exists.
fn longest_paths(n: usize, edges: &[(usize, usize, i64)]) -> Option<Vec<i64>> {
    let mut dist = vec![0i64; n];
    for round in 0..=n {
        let mut changed = false;
        for &(a, b, w) in edges {
            if dist[a] + w > dist[b] {
                dist[b] = dist[a] + w;
                changed = true;
            }
        }
        if !changed {
            return Some(dist);
        }
        if round == n {
            break;
        }
    }
    None
}

fn has_positive_cycle(g: &LoopGraph, ii: u32) -> bool {
    let edges: Vec<_> = g
        .deps
        .iter()
        .map(|d| (d.src, d.dst, i64::from(d.latency) - i64::from(d.distance) * i64::from(ii)))
        .collect();
    longest_paths(g.operations.len(), &edges).is_none()
}

fn zero_distance_cycle(g: &LoopGraph) -> Option<Vec<String>> {
    let edges: Vec<_> = g
        .deps
        .iter()
        .filter(|d| d.distance == 0)
        .map(|d| (d.src, d.dst, i64::from(d.latency)))
        .collect();
    if longest_paths(g.operations.len(), &edges).is_some() {
        return None;
    }
    // Report the ops on some zero-distance strongly connected component.
    let mut involved: Vec<String> = Vec::new();
    for (i, op) in g.operations.iter().enumerate() {
        let reach_from = reachable(g.operations.len(), &edges, i);
        if edges.iter().any(|&(a, b, _)| b == i && reach_from[a]) {
            involved.push(op.id.clone());
        }
    }
    Some(involved)
}

fn reachable(n: usize, edges: &[(usize, usize, i64)], from: usize) -> Vec<bool> {
    let mut seen = vec![false; n];
    let mut stack = vec![from];
    seen[from] = true;
    while let Some(x) = stack.pop() {
        for &(a, b, _) in edges {
            if a == x && !seen[b] {
                seen[b] = true;
                stack.push(b);
            }
        }
    }
    seen
}

/// Recurrence bound: the smallest II for which no dependence cycle has
/// positive weight under `latency - distance * II`.
pub fn rec_mii(g: &LoopGraph) -> Result<u32, BoundsError> {
    if let Some(ops) = zero_distance_cycle(g) {
        return Err(BoundsError::ZeroDistanceCycle { ops });
    }
    // Every remaining cycle has distance >= 1, so II = sum of positive
    // latencies is always enough.
    let hi: u32 = g
        .deps
        .iter()
        .map(|d| d.latency.max(0) as u32)
        .sum::<u32>()
        .max(1);
    if hi <= 64 {
        return Ok((1..=hi).find(|&ii| !has_positive_cycle(g, ii)).unwrap_or(hi));
    }
    let (mut lo, mut hi) = (1, hi);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if has_positive_cycle(g, mid) {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

pub fn mii(g: &LoopGraph, p: &Processor) -> Result<u32, BoundsError> {
    Ok(res_mii(g, p).max(rec_mii(g)?))
}

/// All-pairs shortest paths over the separation graph: for each dependency
/// `a -> b` an edge `b -> a` weighing `distance * II - latency`. Entry
/// `[x][y]` bounds `Cycle(y) - Cycle(x)` in every schedule at this II.
pub fn separation_bounds(g: &LoopGraph, ii: u32) -> Result<Vec<Vec<Option<i64>>>, BoundsError> {
    let n = g.operations.len();
    let mut dist: Vec<Vec<Option<i64>>> = vec![vec![None; n]; n];
    for (i, row) in dist.iter_mut().enumerate() {
        row[i] = Some(0);
    }
    for d in &g.deps {
        let w = i64::from(d.distance) * i64::from(ii) - i64::from(d.latency);
        let cell = &mut dist[d.dst][d.src];
        *cell = Some(cell.map_or(w, |c| c.min(w)));
    }
    for k in 0..n {
        for i in 0..n {
            let Some(ik) = dist[i][k] else { continue };
            for j in 0..n {
                if let Some(kj) = dist[k][j] {
                    let via = ik + kj;
                    if dist[i][j].is_none_or(|c| via < c) {
                        dist[i][j] = Some(via);
                    }
                }
            }
        }
    }
    if (0..n).any(|i| dist[i][i].is_some_and(|d| d < 0)) {
        return Err(BoundsError::NegativeCycle { ii });
    }
    Ok(dist)
}

pub fn weakly_connected(g: &LoopGraph) -> bool {
    let n = g.operations.len();
    let mut uf = UnionFind::new(n);
    for d in &g.deps {
        uf.union(d.src, d.dst);
    }
    (0..n).all(|i| uf.find(i) == uf.find(0))
}

/// Length in cycles of the longest same-iteration latency chain, counting
/// the issue cycle of its last op.
pub fn critical_path(g: &LoopGraph) -> Result<i64, BoundsError> {
    let edges: Vec<_> = g
        .deps
        .iter()
        .filter(|d| d.distance == 0)
        .map(|d| (d.src, d.dst, i64::from(d.latency)))
        .collect();
    let dist = longest_paths(g.operations.len(), &edges).ok_or_else(|| {
        BoundsError::ZeroDistanceCycle {
            ops: zero_distance_cycle(g).unwrap_or_default(),
        }
    })?;
    Ok(dist.into_iter().max().unwrap_or(0) + 1)
}

fn ceil_div(a: i64, b: i64) -> i64 {
    (a + b - 1).div_euclid(b)
}

/// Stage window at `ii`. `min_stages` comes from the critical path.
///
/// When every pair of ops has a finite separation bound both ways,
/// `max_stages` is `ceil((d* + 1) / II)` with `d*` the widest such bound (a
/// span of `d* + 1` cycles has to fit). Otherwise some op may drift
/// arbitrarily far from another and `d*` bounds nothing; the window then
/// ends at [`gap_stage_bound`].
pub fn stage_bounds(g: &LoopGraph, ii: u32) -> Result<StageBounds, BoundsError> {
    assert!(ii >= 1, "II must be positive");
    let iil = i64::from(ii);
    let min_stages = ceil_div(critical_path(g)?, iil).max(1);
    let dist = separation_bounds(g, ii)?;
    if !weakly_connected(g) {
        return Err(BoundsError::Disconnected);
    }
    let max_stages = if dist.iter().flatten().all(Option::is_some) {
        let d_star = dist.iter().flatten().flatten().copied().max().unwrap_or(0).max(0);
        ceil_div(d_star + 1, iil)
    } else {
        i64::from(gap_stage_bound(g, ii))
    };
    Ok(StageBounds {
        min_stages: min_stages as u32,
        max_stages: min_stages.max(max_stages) as u32,
    })
}

/// Stage count within which any schedule feasible at `ii` has a feasible
/// counterpart (cycle pins aside).
///
/// Moving an op by a multiple of II keeps every modulo resource where it
/// was, so take the earliest schedule with non-negative cycles and the same
/// residues. If its sorted issue cycles had a gap of `W + II` or more, with
/// `W` the largest dependency weight `latency - distance * II` (at least
/// 0), everything above the gap could move down by II. So
/// `span + 1 <= II + (n - 1) * (W + II - 1)`.
pub fn gap_stage_bound(g: &LoopGraph, ii: u32) -> u32 {
    let iil = i64::from(ii);
    let w = g
        .deps
        .iter()
        .map(|d| i64::from(d.latency) - i64::from(d.distance) * iil)
        .max()
        .unwrap_or(0)
        .max(0);
    let n = g.operations.len() as i64;
    ceil_div(iil + (n - 1).max(0) * (w + iil - 1), iil).max(1) as u32
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.parent[r] != r {
            r = self.parent[r];
        }
        let mut x = x;
        while self.parent[x] != r {
            let next = self.parent[x];
            self.parent[x] = r;
            x = next;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::loop_ir::{augment_loop_carried, DepKind, Dependency};

    fn g4_aug() -> LoopGraph {
        augment_loop_carried(&fixtures::g4(&fixtures::toy5()))
    }

    #[test]
    fn res_mii_examples() {
        let p = fixtures::toy5();
        assert_eq!(res_mii(&fixtures::g4(&p), &p), 1);
        let p1 = fixtures::toy4_1lsu();
        assert_eq!(res_mii(&fixtures::g4(&p1), &p1), 2);
        let mut single = fixtures::g4(&p);
        single.operations.truncate(1);
        single.deps.clear();
        assert_eq!(res_mii(&single, &p), 1);
    }

    #[test]
    fn rec_mii_examples() {
        assert_eq!(rec_mii(&fixtures::g4(&fixtures::toy5())).unwrap(), 1);
        assert_eq!(rec_mii(&g4_aug()).unwrap(), 1);
        let mut g = g4_aug();
        g.deps.push(Dependency {
            src: 2,
            dst: 2,
            latency: 3,
            distance: 1,
            kind: DepKind::Other,
        });
        assert_eq!(rec_mii(&g).unwrap(), 3);
        assert_eq!(mii(&g, &fixtures::toy5()).unwrap(), 3);
        assert_eq!(mii(&g4_aug(), &fixtures::toy4_1lsu()).unwrap(), 2);
    }

    #[test]
    fn rec_mii_binary_search_range() {
        let mut g = g4_aug();
        g.deps.push(Dependency {
            src: 3,
            dst: 0,
            latency: 200,
            distance: 2,
            kind: DepKind::Other,
        });
        // cycle LD->ADD->MUL->ST->LD: latency 203, distance 2
        assert_eq!(rec_mii(&g).unwrap(), 102);
    }

    #[test]
    fn zero_distance_cycle_rejected() {
        let mut g = g4_aug();
        g.deps.push(Dependency {
            src: 3,
            dst: 0,
            latency: 1,
            distance: 0,
            kind: DepKind::Other,
        });
        match rec_mii(&g) {
            Err(BoundsError::ZeroDistanceCycle { ops }) => assert_eq!(ops.len(), 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn stage_bounds_g4() {
        let g = g4_aug();
        assert_eq!(
            stage_bounds(&g, 1).unwrap(),
            StageBounds {
                min_stages: 4,
                max_stages: 4
            }
        );
        // At II=2 each anti edge allows a separation of 2, so LD..ST may be
        // 6 cycles apart: max = ceil(7 / 2) = 4.
        assert_eq!(
            stage_bounds(&g, 2).unwrap(),
            StageBounds {
                min_stages: 2,
                max_stages: 4
            }
        );
        let dist = separation_bounds(&g, 2).unwrap();
        assert_eq!(dist[0][3], Some(6));
        assert_eq!(dist[3][0], Some(-3));
    }

    #[test]
    fn stage_bounds_single_op_and_disconnected() {
        let p = fixtures::toy5();
        let mut g = fixtures::g4(&p);
        g.operations.truncate(1);
        g.deps.clear();
        assert_eq!(
            stage_bounds(&g, 1).unwrap(),
            StageBounds {
                min_stages: 1,
                max_stages: 1
            }
        );
        let mut g = fixtures::g4(&p);
        g.deps.truncate(1);
        assert_eq!(stage_bounds(&g, 1), Err(BoundsError::Disconnected));
    }

    /// A one-way constraint bounds nothing from above, so `d*` would cap
    /// the window at one stage although two are needed.
    #[test]
    fn one_way_separation_uses_the_gap_bound() {
        let p = fixtures::toy5();
        let text = r#"{"ops":[{"id":"x","opcode":"ADD"},{"id":"y","opcode":"ADD"}],
            "deps":[{"src":"y","dst":"x","latency":3,"distance":2,"kind":"other"}]}"#;
        let g = crate::loop_ir::load_loop_str(text, &p).unwrap();
        let b = stage_bounds(&g, 1).unwrap();
        let lim = crate::schedule::OracleLimits::default();
        let oracle = |k| crate::schedule::feasible_at(&g, &p, 1, Some(k), &lim).unwrap();
        assert!(oracle(1).is_none());
        assert!(oracle(2).is_some());
        assert!(b.min_stages <= 2 && 2 <= b.max_stages, "{b:?}");
    }

    #[test]
    fn negative_cycle_below_rec_mii() {
        let mut g = g4_aug();
        g.deps.push(Dependency {
            src: 2,
            dst: 2,
            latency: 3,
            distance: 1,
            kind: DepKind::Other,
        });
        assert_eq!(stage_bounds(&g, 2), Err(BoundsError::NegativeCycle { ii: 2 }));
        assert!(stage_bounds(&g, 3).is_ok());
    }

    #[test]
    fn route_bound_counts_writes_per_port() {
        let p = fixtures::rf1_1port();
        let g = augment_loop_carried(&fixtures::triple_write(&p));
        assert_eq!(route_mii(&g, &p, false), 3);
        assert_eq!(route_mii(&g, &p, true), 1);
        let lim = crate::schedule::OracleLimits::default();
        assert!(crate::schedule::feasible_at(&g, &p, 2, None, &lim).unwrap().is_none());
        assert!(crate::schedule::feasible_at(&g, &p, 3, None, &lim).unwrap().is_some());
    }
}
