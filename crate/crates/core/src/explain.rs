//! Human-readable reasons behind an unsatisfiable core.
//!
//! Core labels are grouped by constraint family and the entity they share
//! (a slot, bus, write port, register file or a chain of operations); no
//! solver calls are made while grouping.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::BoundsError;
use crate::encoder::{Entity, Family, Label, LabelInfo, Problem};
use crate::loop_ir::{augment_loop_carried, LoopGraph};
use crate::machine::Processor;
use crate::schedule::ModuloSchedule;
use crate::search::{probe, stage_window, ProbeOutcome, SearchError, SearchOptions, TraceRow};
use crate::solver::{minimize_core, Backend};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    SlotContention,
    PortContention,
    BusContention,
    DependencyCycle,
    CycleRange,
    RoutingGap,
    RegisterPressure,
    /// Labels no rule recognises, quoted verbatim.
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub category: Category,
    pub entities: Vec<String>,
    pub involved_labels: Vec<Label>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub ii: u32,
    pub num_stages: u32,
    pub findings: Vec<Finding>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExplainError {
    #[error("empty unsatisfiable core")]
    EmptyCore,
    #[error("diagnosis has no findings")]
    NoFindings,
}

fn entity_name(e: &Entity) -> String {
    match e {
        Entity::Op(x)
        | Entity::Slot(x)
        | Entity::Port(x)
        | Entity::Bus(x)
        | Entity::WritePort(x)
        | Entity::RegisterFile(x)
        | Entity::Register(x) => x.clone(),
        Entity::Cycle(c) => format!("cycle {c}"),
        Entity::ModCycle(c) => format!("modulo cycle {c}"),
    }
}

fn first<'a>(info: &'a LabelInfo, pick: impl Fn(&'a Entity) -> Option<&'a String>) -> Option<&'a String> {
    info.entities.iter().find_map(pick)
}

fn ops_of(info: &LabelInfo) -> impl Iterator<Item = &String> {
    info.entities.iter().filter_map(|e| match e {
        Entity::Op(x) => Some(x),
        _ => None,
    })
}

fn mod_cycles(labels: &[(&Label, &LabelInfo)]) -> BTreeSet<i64> {
    labels
        .iter()
        .flat_map(|(_, i)| i.entities.iter())
        .filter_map(|e| match e {
            Entity::ModCycle(c) => Some(*c),
            _ => None,
        })
        .collect()
}

fn list<T: ToString>(xs: impl IntoIterator<Item = T>) -> String {
    xs.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

/// Whether the directed graph on `edges` has a cycle.
fn has_cycle(edges: &BTreeSet<(String, String)>) -> bool {
    let mut indeg: BTreeMap<&str, usize> = BTreeMap::new();
    for (a, b) in edges {
        indeg.entry(a).or_default();
        *indeg.entry(b).or_default() += 1;
    }
    let mut ready: Vec<&str> = indeg.iter().filter(|(_, &d)| d == 0).map(|(&n, _)| n).collect();
    let mut removed = 0;
    while let Some(n) = ready.pop() {
        removed += 1;
        for (a, b) in edges {
            if a == n {
                let d = indeg.get_mut(b.as_str()).unwrap();
                *d -= 1;
                if *d == 0 {
                    ready.push(b);
                }
            }
        }
    }
    removed < indeg.len()
}

/// Groups `core` (labels of `pr`) into findings.
pub fn explain_core(core: &BTreeSet<Label>, pr: &Problem) -> Result<Diagnosis, ExplainError> {
    if core.is_empty() {
        return Err(ExplainError::EmptyCore);
    }
    let ii = pr.ii;
    let mut findings = Vec::new();
    let mut residual: Vec<&Label> = Vec::new();
    let mut by_family: BTreeMap<Family, Vec<(&Label, &LabelInfo)>> = BTreeMap::new();
    for l in core {
        match pr.label_info.get(l) {
            Some(info) => by_family.entry(info.family).or_default().push((l, info)),
            None => residual.push(l),
        }
    }
    let labels_of = |xs: &[(&Label, &LabelInfo)]| xs.iter().map(|(l, _)| (*l).clone()).collect::<Vec<_>>();

    // write ports, with the routing demands into their file
    let mut routing = by_family.remove(&Family::Routing).unwrap_or_default();
    let mut per_wp: BTreeMap<(String, String), Vec<(&Label, &LabelInfo)>> = BTreeMap::new();
    for (l, i) in by_family.remove(&Family::WritePortExclusive).unwrap_or_default() {
        let wp = first(i, |e| match e {
            Entity::WritePort(x) => Some(x),
            _ => None,
        });
        let rf = first(i, |e| match e {
            Entity::RegisterFile(x) => Some(x),
            _ => None,
        });
        per_wp
            .entry((wp.cloned().unwrap_or_default(), rf.cloned().unwrap_or_default()))
            .or_default()
            .push((l, i));
    }
    let rf_of = |i: &LabelInfo| {
        first(i, |e| match e {
            Entity::RegisterFile(x) => Some(x),
            _ => None,
        })
        .cloned()
    };
    for ((wp, rf), mut group) in per_wp {
        let (into_rf, rest): (Vec<_>, Vec<_>) = routing.into_iter().partition(|(_, i)| rf_of(i).as_ref() == Some(&rf));
        routing = rest;
        let producers: BTreeSet<&String> = into_rf.iter().filter_map(|(_, i)| ops_of(i).next()).collect();
        let mcs = mod_cycles(&group);
        let mut message = format!(
            "write port {wp} of register file {rf} is overloaded at II={ii}: at most one bus per modulo cycle ({}) ",
            list(mcs)
        );
        if producers.is_empty() {
            message.push_str("cannot serve the values routed into it");
        } else {
            write!(message, "cannot take the results of {}", list(&producers)).unwrap();
        }
        group.extend(into_rf);
        findings.push(Finding {
            category: Category::PortContention,
            entities: vec![wp, rf],
            involved_labels: labels_of(&group),
            message,
        });
    }

    // buses
    let mut per_bus: BTreeMap<String, Vec<(&Label, &LabelInfo)>> = BTreeMap::new();
    for (l, i) in by_family.remove(&Family::BusExclusive).unwrap_or_default() {
        let b = first(i, |e| match e {
            Entity::Bus(x) => Some(x),
            _ => None,
        });
        per_bus.entry(b.cloned().unwrap_or_default()).or_default().push((l, i));
    }
    for (bus, group) in per_bus {
        let ports: BTreeSet<&String> = group
            .iter()
            .flat_map(|(_, i)| i.entities.iter())
            .filter_map(|e| match e {
                Entity::Port(x) => Some(x),
                _ => None,
            })
            .collect();
        let message = format!(
            "bus {bus} is overloaded at II={ii}: output ports {} compete for it at modulo cycles {}",
            list(&ports),
            list(mod_cycles(&group))
        );
        findings.push(Finding {
            category: Category::BusContention,
            entities: vec![bus],
            involved_labels: labels_of(&group),
            message,
        });
    }

    // slots, with the one-slot rules of the ops involved
    let mut one_slot = by_family.remove(&Family::OneSlot).unwrap_or_default();
    let mut per_slot: BTreeMap<String, Vec<(&Label, &LabelInfo)>> = BTreeMap::new();
    for (l, i) in by_family.remove(&Family::SlotExclusive).unwrap_or_default() {
        let s = first(i, |e| match e {
            Entity::Slot(x) => Some(x),
            _ => None,
        });
        per_slot.entry(s.cloned().unwrap_or_default()).or_default().push((l, i));
    }
    for (slot, mut group) in per_slot {
        let ops: BTreeSet<String> = group.iter().flat_map(|(_, i)| ops_of(i).cloned()).collect();
        let (mine, rest): (Vec<_>, Vec<_>) =
            one_slot.into_iter().partition(|(_, i)| ops_of(i).any(|o| ops.contains(o)));
        one_slot = rest;
        group.extend(mine);
        findings.push(Finding {
            category: Category::SlotContention,
            entities: vec![slot.clone()],
            involved_labels: labels_of(&group),
            message: format!(
                "issue slot {slot} is overloaded at II={ii}: {} cannot all issue on it",
                list(&ops)
            ),
        });
    }

    // dependency chains: cycles, or chains too long for the cycle range
    let deps = by_family.remove(&Family::Dependency).unwrap_or_default();
    let mut ranges = by_family.remove(&Family::CycleRange).unwrap_or_default();
    let mut comps: Vec<(BTreeSet<String>, Vec<(&Label, &LabelInfo)>)> = Vec::new();
    for (l, i) in deps {
        let ops: BTreeSet<String> = ops_of(i).cloned().collect();
        let mut merged = (ops, vec![(l, i)]);
        comps.retain(|(o, g)| {
            if o.is_disjoint(&merged.0) {
                true
            } else {
                merged.0.extend(o.iter().cloned());
                merged.1.extend(g.iter().cloned());
                false
            }
        });
        comps.push(merged);
    }
    comps.sort_by(|a, b| a.0.cmp(&b.0));
    for (ops, mut group) in comps {
        let edges: BTreeSet<(String, String)> = group
            .iter()
            .filter_map(|(_, i)| {
                let mut o = ops_of(i);
                Some((o.next()?.clone(), o.next()?.clone()))
            })
            .collect();
        if has_cycle(&edges) {
            findings.push(Finding {
                category: Category::DependencyCycle,
                entities: ops.iter().cloned().collect(),
                involved_labels: labels_of(&group),
                message: format!(
                    "dependency cycle through {} needs more than II={ii} cycles per iteration",
                    list(&ops)
                ),
            });
        } else {
            let (mine, rest): (Vec<_>, Vec<_>) =
                ranges.into_iter().partition(|(_, i)| ops_of(i).any(|o| ops.contains(o)));
            ranges = rest;
            group.extend(mine);
            findings.push(Finding {
                category: Category::CycleRange,
                entities: ops.iter().cloned().collect(),
                involved_labels: labels_of(&group),
                message: format!(
                    "dependency chain through {} does not fit in {} stage(s) of {ii} cycle(s) (cycles 0..={})",
                    list(&ops),
                    pr.num_stages,
                    pr.max_cycle
                ),
            });
        }
    }
    if !ranges.is_empty() {
        let ops: BTreeSet<String> = ranges.iter().flat_map(|(_, i)| ops_of(i).cloned()).collect();
        findings.push(Finding {
            category: Category::CycleRange,
            entities: ops.iter().cloned().collect(),
            involved_labels: labels_of(&ranges),
            message: format!("{} must issue within cycles 0..={}", list(&ops), pr.max_cycle),
        });
    }

    // routing demands not explained by a write port
    let mut per_rf: BTreeMap<String, Vec<(&Label, &LabelInfo)>> = BTreeMap::new();
    for (l, i) in routing {
        per_rf.entry(rf_of(i).unwrap_or_default()).or_default().push((l, i));
    }
    for (rf, group) in per_rf {
        let ops: BTreeSet<String> = group.iter().flat_map(|(_, i)| ops_of(i).cloned()).collect();
        findings.push(Finding {
            category: Category::RoutingGap,
            entities: vec![rf.clone()],
            involved_labels: labels_of(&group),
            message: format!("values of {} cannot be routed into register file {rf} at II={ii}", list(&ops)),
        });
    }

    // register pressure, per file
    let mut rp: Vec<(&Label, &LabelInfo)> = Vec::new();
    by_family.retain(|f, xs| {
        if f.is_register_pressure() {
            rp.append(xs);
            false
        } else {
            true
        }
    });
    let mut per_file: BTreeMap<String, Vec<(&Label, &LabelInfo)>> = BTreeMap::new();
    let mut loose = Vec::new();
    for (l, i) in rp {
        match rf_of(i) {
            Some(rf) => per_file.entry(rf).or_default().push((l, i)),
            None => loose.push((l, i)),
        }
    }
    if per_file.is_empty() && !loose.is_empty() {
        per_file.insert(String::new(), Vec::new());
    }
    if let Some(group) = per_file.values_mut().next() {
        group.append(&mut loose);
    }
    for (rf, group) in per_file {
        let cycles = mod_cycles(&group);
        let message = if cycles.is_empty() {
            format!("register pressure in {rf} exceeds its capacity at II={ii}")
        } else {
            format!(
                "register pressure in {rf} exceeds its capacity at II={ii} (modulo cycles {})",
                list(cycles)
            )
        };
        findings.push(Finding {
            category: Category::RegisterPressure,
            entities: vec![rf],
            involved_labels: labels_of(&group),
            message,
        });
    }

    // everything else, verbatim
    let mut other: Vec<(&Label, Option<&LabelInfo>)> = residual.into_iter().map(|l| (l, None)).collect();
    other.extend(one_slot.into_iter().map(|(l, i)| (l, Some(i))));
    other.extend(by_family.into_values().flatten().map(|(l, i)| (l, Some(i))));
    other.sort_by(|a, b| a.0.cmp(b.0));
    for (l, i) in other {
        findings.push(Finding {
            category: Category::Other,
            entities: i.map(|i| i.entities.iter().map(entity_name).collect()).unwrap_or_default(),
            involved_labels: vec![l.clone()],
            message: match i {
                Some(i) => format!("{l}: {}", i.text),
                None => l.to_string(),
            },
        });
    }

    Ok(Diagnosis {
        ii,
        num_stages: pr.num_stages,
        findings,
    })
}

pub fn render(d: &Diagnosis, format: Format) -> Result<String, ExplainError> {
    if d.findings.is_empty() {
        return Err(ExplainError::NoFindings);
    }
    Ok(match format {
        Format::Json => serde_json::to_string_pretty(d).expect("diagnosis serializes") + "\n",
        Format::Text => {
            let mut out = format!("no schedule with II={} and {} stage(s):\n", d.ii, d.num_stages);
            for f in &d.findings {
                let cat = serde_json::to_value(f.category).unwrap();
                writeln!(out, "  [{}] {}", cat.as_str().unwrap(), f.message).unwrap();
            }
            out.push_str("core labels:\n");
            let labels: BTreeSet<&Label> = d.findings.iter().flat_map(|f| &f.involved_labels).collect();
            for l in labels {
                writeln!(out, "  {l}").unwrap();
            }
            out
        }
    })
}

#[derive(Debug)]
pub enum ExplainOutcome {
    /// The II admits a schedule, so there is nothing to explain.
    Feasible(ModuloSchedule),
    Infeasible(Diagnosis),
    GaveUp(String),
}

/// Probes every stage count of `ii` and explains the core of the last
/// (largest) one.
pub fn explain_ii(
    backend: &dyn Backend,
    g: &LoopGraph,
    p: &Processor,
    ii: u32,
    opts: &SearchOptions,
    minimize: bool,
    trace: &mut Vec<TraceRow>,
) -> Result<ExplainOutcome, SearchError> {
    let g = &augment_loop_carried(g);
    let opts = SearchOptions {
        want_core: true,
        ..opts.clone()
    };
    let window = match stage_window(g, ii, &opts) {
        Ok(w) => w,
        Err(BoundsError::NegativeCycle { .. }) => {
            return explain_negative_cycle(backend, g, p, ii, &opts, minimize, trace);
        }
        Err(e) => return Err(e.into()),
    };
    let mut sticky = BTreeSet::new();
    let mut last = None;
    for stages in window.min_stages..=window.max_stages {
        match probe(backend, g, p, ii, stages, &opts, &mut sticky, trace)? {
            ProbeOutcome::Found { schedule, .. } => return Ok(ExplainOutcome::Feasible(schedule)),
            ProbeOutcome::Unknown(r) => return Ok(ExplainOutcome::GaveUp(r)),
            ProbeOutcome::Unsat { core, problem } => last = Some((core, problem)),
        }
    }
    let (core, problem) = last.expect("stage window is never empty");
    diagnose(backend, core, &problem, &opts, minimize)
}

/// At an II below the recurrence bound no stage count works; one probe at
/// the smallest count that fits the dependency chain carries the reason.
fn explain_negative_cycle(
    backend: &dyn Backend,
    g: &LoopGraph,
    p: &Processor,
    ii: u32,
    opts: &SearchOptions,
    minimize: bool,
    trace: &mut Vec<TraceRow>,
) -> Result<ExplainOutcome, SearchError> {
    let l = crate::bounds::critical_path(g)?;
    let stages = opts
        .stages
        .unwrap_or_else(|| ((l + i64::from(ii) - 1) / i64::from(ii)).max(1) as u32);
    match probe(backend, g, p, ii, stages, opts, &mut BTreeSet::new(), trace)? {
        ProbeOutcome::Found { schedule, .. } => Ok(ExplainOutcome::Feasible(schedule)),
        ProbeOutcome::Unknown(r) => Ok(ExplainOutcome::GaveUp(r)),
        ProbeOutcome::Unsat { core, problem } => diagnose(backend, core, &problem, opts, minimize),
    }
}

fn diagnose(
    backend: &dyn Backend,
    core: BTreeSet<Label>,
    problem: &Problem,
    opts: &SearchOptions,
    minimize: bool,
) -> Result<ExplainOutcome, SearchError> {
    let core = if minimize {
        minimize_core(backend, problem, &core, &opts.budget)?
    } else {
        core
    };
    let d = explain_core(&core, problem).map_err(|e| SearchError::Internal(e.to_string()))?;
    Ok(ExplainOutcome::Infeasible(d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{encode_core, EncodeOptions};
    use crate::fixtures;
    use crate::search::RpMode;
    use crate::solver::{solve, Budget, SatBackend, SolveOutcome};

    fn diagnose_at(g: &LoopGraph, p: &Processor, ii: u32) -> Diagnosis {
        let mut trace = Vec::new();
        match explain_ii(&SatBackend, g, p, ii, &SearchOptions::default(), false, &mut trace).unwrap() {
            ExplainOutcome::Infeasible(d) => d,
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn single_write_port_is_named() {
        let p = fixtures::rf1_1port();
        let g = fixtures::triple_write(&p);
        let d = diagnose_at(&g, &p, 2);
        let f = d
            .findings
            .iter()
            .find(|f| f.category == Category::PortContention)
            .expect("port finding");
        assert_eq!(f.entities, vec!["ip0".to_string(), "RF1".to_string()]);
        let text = render(&d, Format::Text).unwrap();
        let line = text.lines().find(|l| l.contains("[port_contention]")).unwrap();
        assert!(line.contains("ip0") && line.contains("RF1") && line.contains("II=2"), "{line}");
    }

    #[test]
    fn short_stage_window_is_a_cycle_range_problem() {
        let p = fixtures::toy5();
        let g = augment_loop_carried(&fixtures::g4(&p));
        let pr = encode_core(&g, &p, 1, 3, EncodeOptions::default());
        let SolveOutcome::Unsat(core) = solve(&SatBackend, &pr, &Budget::default(), true).unwrap() else {
            panic!()
        };
        let d = explain_core(&core, &pr).unwrap();
        assert!(d.findings.iter().any(|f| f.category == Category::CycleRange), "{d:?}");
    }

    #[test]
    fn recurrence_below_its_bound_is_a_dependency_cycle() {
        let p = fixtures::toy5();
        let text = r#"{"ops":[{"id":"A","opcode":"ADD","defs":["x"],"uses":["y"]},
            {"id":"M","opcode":"MUL","defs":["y"],"uses":["x"]}],
            "deps":[{"src":"A","dst":"M","latency":1,"distance":0,"kind":"data"},
                    {"src":"M","dst":"A","latency":1,"distance":1,"kind":"data"}]}"#;
        let g = crate::loop_ir::load_loop_str(text, &p).unwrap();
        let d = diagnose_at(&g, &p, 1);
        let f = d
            .findings
            .iter()
            .find(|f| f.category == Category::DependencyCycle)
            .unwrap_or_else(|| panic!("{d:?}"));
        assert_eq!(f.entities, vec!["A".to_string(), "M".to_string()]);
    }

    #[test]
    fn every_finding_cites_core_labels() {
        let p = fixtures::rf1_1port();
        let g = augment_loop_carried(&fixtures::triple_write(&p));
        let pr = encode_core(&g, &p, 2, 2, EncodeOptions::default());
        let SolveOutcome::Unsat(core) = solve(&SatBackend, &pr, &Budget::default(), true).unwrap() else {
            panic!()
        };
        let d = explain_core(&core, &pr).unwrap();
        let cited: BTreeSet<Label> = d.findings.iter().flat_map(|f| f.involved_labels.clone()).collect();
        assert!(d.findings.iter().all(|f| !f.involved_labels.is_empty()));
        assert_eq!(cited, core);
    }

    #[test]
    fn unknown_label_is_quoted() {
        let pr = Problem::new(1, 1, EncodeOptions::default());
        let core = BTreeSet::from([Label("user/pin-clash".into())]);
        let d = explain_core(&core, &pr).unwrap();
        assert_eq!(d.findings.len(), 1);
        assert_eq!(d.findings[0].category, Category::Other);
        assert!(render(&d, Format::Text).unwrap().contains("user/pin-clash"));
    }

    #[test]
    fn empty_inputs_are_errors() {
        let pr = Problem::new(1, 1, EncodeOptions::default());
        assert_eq!(explain_core(&BTreeSet::new(), &pr), Err(ExplainError::EmptyCore));
        let d = Diagnosis {
            ii: 1,
            num_stages: 1,
            findings: vec![],
        };
        assert_eq!(render(&d, Format::Text), Err(ExplainError::NoFindings));
    }

    #[test]
    fn json_round_trips() {
        let p = fixtures::rf1_1port();
        let g = fixtures::triple_write(&p);
        let d = diagnose_at(&g, &p, 2);
        let back: Diagnosis = serde_json::from_str(&render(&d, Format::Json).unwrap()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn pressure_core_names_the_file() {
        let p = fixtures::toy5_with_capacity(2);
        let g = fixtures::g4(&p);
        let opts = SearchOptions {
            rp_mode: RpMode::Eager,
            ..SearchOptions::default()
        };
        let mut trace = Vec::new();
        match explain_ii(&SatBackend, &g, &p, 2, &opts, true, &mut trace).unwrap() {
            ExplainOutcome::Infeasible(d) => {
                assert!(d
                    .findings
                    .iter()
                    .any(|f| f.category == Category::RegisterPressure && f.entities == ["RF0"]));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn feasible_ii_has_nothing_to_explain() {
        let p = fixtures::toy5();
        let g = fixtures::g4(&p);
        let mut trace = Vec::new();
        let out = explain_ii(&SatBackend, &g, &p, 1, &SearchOptions::default(), false, &mut trace).unwrap();
        assert!(matches!(out, ExplainOutcome::Feasible(_)));
    }
}
