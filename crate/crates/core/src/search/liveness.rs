//! Register liveness of a concrete schedule on kernel cycles `0..II`, using
//! the same live-range rules as the pressure constraints but evaluated on
//! numbers instead of solver terms.

use std::collections::{BTreeMap, BTreeSet};

use crate::loop_ir::LoopGraph;
use crate::machine::Processor;
use crate::schedule::ModuloSchedule;

/// Summary of one register in one file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LiveRange {
    pub start: i64,
    pub end: i64,
    pub used_before_def: bool,
    pub live_out: bool,
}

impl LiveRange {
    pub fn live_at(&self, c: i64) -> bool {
        if self.used_before_def {
            c <= self.end || self.start <= c
        } else {
            self.start <= c && (c <= self.end || self.live_out)
        }
    }
}

/// Live range of every register in every file it is read from (or is
/// live-out into). Files are keyed by name.
pub fn live_ranges(
    s: &ModuloSchedule,
    g: &LoopGraph,
    p: &Processor,
) -> BTreeMap<String, BTreeMap<String, LiveRange>> {
    let ii = i64::from(s.ii);
    let modc = |id: &str| s.cycle_of(id).map(|c| c.rem_euclid(ii));
    let mut out: BTreeMap<String, BTreeMap<String, LiveRange>> = BTreeMap::new();
    for rf in &p.register_files {
        out.insert(rf.name.clone(), BTreeMap::new());
    }
    for reg in &g.virtual_registers {
        let start = g
            .operations
            .iter()
            .find(|o| o.def() == Some(reg.as_str()))
            .and_then(|o| modc(&o.id))
            .unwrap_or(0);
        // modulo cycles of the reads of `reg`, per register file
        let mut reads: BTreeMap<String, Vec<i64>> = BTreeMap::new();
        for op in &g.operations {
            let Some(pl) = s.placement(&op.id) else { continue };
            let Some(b) = p
                .slot_index(&pl.slot)
                .ok()
                .and_then(|si| p.binding(&op.opcode, si))
            else {
                continue;
            };
            for (k, u) in op.uses.iter().enumerate() {
                if u == reg {
                    if let Some(&rf) = b.operand_rfs.get(k) {
                        reads
                            .entry(p.register_files[rf].name.clone())
                            .or_default()
                            .push(pl.cycle.rem_euclid(ii));
                    }
                }
            }
        }
        for rf in &p.register_files {
            let live_out = g.live_out.get(reg).is_some_and(|fs| fs.contains(&rf.name));
            let uses = reads.get(&rf.name).cloned().unwrap_or_default();
            if uses.is_empty() && !live_out {
                continue;
            }
            let min_use = uses.iter().copied().min().unwrap_or(ii);
            let max_use = uses.iter().copied().max().unwrap_or(-1);
            let used_before_def = !uses.is_empty() && min_use <= start;
            let end = if used_before_def {
                uses.iter().copied().filter(|&u| u <= start).max().unwrap_or(-1)
            } else {
                max_use
            };
            out.get_mut(&rf.name).unwrap().insert(
                reg.clone(),
                LiveRange {
                    start,
                    end,
                    used_before_def,
                    live_out,
                },
            );
        }
    }
    out
}

/// Registers live at each kernel cycle, per register file.
pub fn live_sets(s: &ModuloSchedule, g: &LoopGraph, p: &Processor) -> BTreeMap<String, Vec<BTreeSet<String>>> {
    let ii = i64::from(s.ii);
    live_ranges(s, g, p)
        .into_iter()
        .map(|(rf, ranges)| {
            let sets = (0..ii)
                .map(|c| {
                    ranges
                        .iter()
                        .filter(|(_, r)| r.live_at(c))
                        .map(|(v, _)| v.clone())
                        .collect()
                })
                .collect();
            (rf, sets)
        })
        .collect()
}

/// Largest number of simultaneously live registers per register file.
pub fn measure_pressure(s: &ModuloSchedule, g: &LoopGraph, p: &Processor) -> BTreeMap<String, u32> {
    live_sets(s, g, p)
        .into_iter()
        .map(|(rf, sets)| (rf, sets.iter().map(|x| x.len() as u32).max().unwrap_or(0)))
        .collect()
}
