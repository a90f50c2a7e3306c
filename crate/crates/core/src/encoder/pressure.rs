//! Register-pressure extension of the scheduling model.
//!
//! Liveness is tracked on kernel (modulo) cycles `0..II`. For a virtual
//! register `v` and register file `RF`:
//!
//! * `Start_v` is the modulo cycle of its definition (0 for loop inputs).
//! * `MinUse`/`MaxUse` range over the modulo cycles of the reads of `v`
//!   from `RF`, with sentinels `II` and `-1` for slot choices that do not
//!   read from `RF`.
//! * a read at or before `Start_v` (modulo) means the live range wraps
//!   around the kernel; it then ends at the last such read.
//! * `Live_{RF,v,c}` follows from the above, and the number of live
//!   registers per `(RF, c)` is capped by the file's capacity.

use std::collections::BTreeSet;

use super::ast::{BoolExpr, BoolVar, IntExpr, IntVar};
use super::problem::{Entity, Family, LabelInfo, Problem, VarKey};
use super::{cycle_var, slot_var, EncodeError};
use crate::loop_ir::LoopGraph;
use crate::machine::{Processor, RfIdx};

/// `(op, slot)` choices under which `reg` is read from `rf`.
pub(crate) fn reads_from(g: &LoopGraph, p: &Processor, reg: &str, rf: RfIdx) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (u, op) in g.operations.iter().enumerate() {
        let positions: Vec<usize> = g.operand_positions(u, reg).collect();
        if positions.is_empty() {
            continue;
        }
        for s in g.legal_slots(p, u) {
            let b = p.binding(&op.opcode, s).expect("legal slot binding");
            if positions.iter().any(|&k| b.operand_rfs[k] == rf) {
                out.push((u, s));
            }
        }
    }
    out
}

pub(crate) fn is_live_out(g: &LoopGraph, p: &Processor, reg: &str, rf: RfIdx) -> bool {
    g.live_out
        .get(reg)
        .is_some_and(|rfs| rfs.contains(&p.register_files[rf].name))
}

/// The `Live_{rf,reg,cycle}` variable, if the pair is tracked.
pub fn live_var(pr: &Problem, rf: RfIdx, reg: usize, cycle: i64) -> Option<BoolVar> {
    pr.find_bool(&VarKey::Live { rf, reg, cycle })
}

fn info(family: Family, entities: Vec<Entity>, text: String) -> LabelInfo {
    LabelInfo {
        family,
        entities,
        text,
    }
}

/// Adds the register-pressure variables and constraints for every register
/// file in `rfs` not yet covered by `pr`.
///
/// Register/file pairs that can never be live (no read from the file and not
/// live-out into it) get no variables.
pub fn encode_register_pressure(
    pr: &mut Problem,
    g: &LoopGraph,
    p: &Processor,
    rfs: &BTreeSet<RfIdx>,
) -> Result<(), EncodeError> {
    if rfs.is_empty() {
        return Err(EncodeError::NoRegisterFiles);
    }
    if let Some(&bad) = rfs.iter().find(|&&rf| rf >= p.register_files.len()) {
        return Err(EncodeError::UnknownRegisterFile(bad));
    }
    let ii = i64::from(pr.ii);
    let modc = |v: IntVar| IntExpr::Var(v).modulo(ii);

    for &rf in rfs {
        if !pr.rp_rfs.insert(rf) {
            continue;
        }
        let rfname = p.register_files[rf].name.clone();
        let mut tracked = Vec::new();
        for (ri, reg) in g.virtual_registers.iter().enumerate() {
            let reads = reads_from(g, p, reg, rf);
            let live_out = is_live_out(g, p, reg, rf);
            if reads.is_empty() && !live_out {
                continue;
            }
            tracked.push(ri);
            let ents = || vec![Entity::RegisterFile(rfname.clone()), Entity::Register(reg.clone())];
            let tag = format!("rf={rfname}/v={reg}");

            // r1
            let start = match pr.find_int(&VarKey::Start { reg: ri }) {
                Some(v) => v,
                None => {
                    let v = pr.int_var(VarKey::Start { reg: ri }, format!("start[{reg}]"), -1, ii);
                    let def = match g.definer(reg) {
                        Some(d) => modc(cycle_var(pr, g, d)),
                        None => IntExpr::Const(0),
                    };
                    pr.assert(
                        format!("r1/v={reg}"),
                        IntExpr::Var(v).eq(def),
                        info(
                            Family::RpStart,
                            vec![Entity::Register(reg.clone())],
                            format!("live range of {reg} starts at its definition (modulo II)"),
                        ),
                    );
                    v
                }
            };
            let int = |pr: &mut Problem, key: VarKey, nm: &str| {
                pr.int_var(key, format!("{nm}[{rfname},{reg}]"), -1, ii)
            };
            let bool_ = |pr: &mut Problem, key: VarKey, nm: &str| {
                pr.bool_var(key, format!("{nm}[{rfname},{reg}]"))
            };
            let end = int(pr, VarKey::End { rf, reg: ri }, "end");
            let min_use = int(pr, VarKey::MinUse { rf, reg: ri }, "minuse");
            let max_use = int(pr, VarKey::MaxUse { rf, reg: ri }, "maxuse");
            let max_ubd = int(pr, VarKey::MaxUseBeforeDef { rf, reg: ri }, "maxusebeforedef");
            let used = bool_(pr, VarKey::Used { rf, reg: ri }, "used");
            let ubd = bool_(pr, VarKey::UsedBeforeDef { rf, reg: ri }, "usedbeforedef");
            let live_out_v = bool_(pr, VarKey::LiveOut { rf, reg: ri }, "liveout");

            // r2
            let terms: Vec<(BoolExpr, IntExpr)> = reads
                .iter()
                .map(|&(u, s)| {
                    let sv = BoolExpr::Var(slot_var(pr, g, p, u, s));
                    (sv, modc(cycle_var(pr, g, u)))
                })
                .collect();
            let used_def = BoolExpr::or(terms.iter().map(|(s, _)| s.clone()).collect());
            let min_def = if terms.is_empty() {
                IntExpr::Const(ii)
            } else {
                IntExpr::Min(
                    terms
                        .iter()
                        .map(|(s, c)| IntExpr::ite(s.clone(), c.clone(), IntExpr::Const(ii)))
                        .collect(),
                )
            };
            let max_def = if terms.is_empty() {
                IntExpr::Const(-1)
            } else {
                IntExpr::Max(
                    terms
                        .iter()
                        .map(|(s, c)| IntExpr::ite(s.clone(), c.clone(), IntExpr::Const(-1)))
                        .collect(),
                )
            };
            let max_ubd_def = if terms.is_empty() {
                IntExpr::Const(-1)
            } else {
                IntExpr::Max(
                    terms
                        .iter()
                        .map(|(s, c)| {
                            IntExpr::ite(
                                BoolExpr::and(vec![s.clone(), c.clone().le(IntExpr::Var(start))]),
                                c.clone(),
                                IntExpr::Const(-1),
                            )
                        })
                        .collect(),
                )
            };
            pr.assert(
                format!("r2/used/{tag}"),
                BoolExpr::Var(used).iff(used_def),
                info(Family::RpUse, ents(), format!("{reg} is read from {rfname}")),
            );
            pr.assert(
                format!("r2/minuse/{tag}"),
                IntExpr::Var(min_use).eq(min_def),
                info(Family::RpUse, ents(), format!("first read of {reg} from {rfname}")),
            );
            pr.assert(
                format!("r2/maxuse/{tag}"),
                IntExpr::Var(max_use).eq(max_def),
                info(Family::RpUse, ents(), format!("last read of {reg} from {rfname}")),
            );
            pr.assert(
                format!("r2/maxusebeforedef/{tag}"),
                IntExpr::Var(max_ubd).eq(max_ubd_def),
                info(
                    Family::RpUse,
                    ents(),
                    format!("last read of {reg} from {rfname} at or before its definition"),
                ),
            );

            // r3
            pr.assert(
                format!("r3/{tag}"),
                BoolExpr::Var(ubd).iff(BoolExpr::and(vec![
                    BoolExpr::Var(used),
                    IntExpr::Var(min_use).le(IntExpr::Var(start)),
                ])),
                info(
                    Family::RpUsedBeforeDef,
                    ents(),
                    format!("{reg} is read from {rfname} at or before its definition"),
                ),
            );

            // r4
            pr.assert(
                format!("r4/{tag}"),
                IntExpr::Var(end).eq(IntExpr::ite(
                    BoolExpr::Var(ubd),
                    IntExpr::Var(max_ubd),
                    IntExpr::Var(max_use),
                )),
                info(Family::RpEnd, ents(), format!("end of the live range of {reg} in {rfname}")),
            );

            // r5: reads after the loop are not scheduled here; the file they
            // target is fixed by the loop description.
            pr.assert(
                format!("r5/{tag}"),
                BoolExpr::Var(live_out_v).iff(BoolExpr::Const(live_out)),
                info(Family::RpLiveOut, ents(), format!("{reg} live-out into {rfname}: {live_out}")),
            );

            // r6
            for c in 0..ii {
                let live = pr.bool_var(
                    VarKey::Live { rf, reg: ri, cycle: c },
                    format!("live[{rfname},{reg},{c}]"),
                );
                let c_le_end = IntExpr::Const(c).le(IntExpr::Var(end));
                let start_le_c = IntExpr::Var(start).le(IntExpr::Const(c));
                let def = BoolExpr::ite(
                    BoolExpr::Var(ubd),
                    BoolExpr::or(vec![c_le_end.clone(), start_le_c.clone()]),
                    BoolExpr::and(vec![
                        start_le_c,
                        BoolExpr::or(vec![c_le_end, BoolExpr::Var(live_out_v)]),
                    ]),
                );
                let mut e = ents();
                e.push(Entity::ModCycle(c));
                pr.assert(
                    format!("r6/{tag}/c={c}"),
                    BoolExpr::Var(live).iff(def),
                    info(Family::RpLive, e, format!("{reg} live in {rfname} at modulo cycle {c}")),
                );
            }
        }

        // r7
        let cap = i64::from(p.register_files[rf].capacity);
        for c in 0..ii {
            let count = IntExpr::Sum(
                tracked
                    .iter()
                    .map(|&ri| BoolExpr::Var(live_var(pr, rf, ri, c).unwrap()).indicator())
                    .collect(),
            );
            pr.assert(
                format!("r7/rf={rfname}/c={c}"),
                count.le(IntExpr::Const(cap)),
                info(
                    Family::RpCapacity,
                    vec![Entity::RegisterFile(rfname.clone()), Entity::ModCycle(c)],
                    format!("at most {cap} registers of {rfname} live at modulo cycle {c}"),
                ),
            );
        }
    }
    Ok(())
}
