use std::collections::{BTreeMap, HashMap};

use serde::Serialize;
use thiserror::Error;

use super::ModuloSchedule;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BundleOp {
    pub op: String,
    /// Stage of the op within its own iteration (`cycle / II`).
    pub stage: u32,
}

/// Ops issued in one machine cycle, keyed by slot name.
pub type Bundle = BTreeMap<String, BundleOp>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PipelineCode {
    pub prolog: Vec<Bundle>,
    pub kernel: Vec<Bundle>,
    pub epilog: Vec<Bundle>,
}

impl PipelineCode {
    /// Straight-line code for `trip_count` iterations: prolog, the kernel
    /// `trip_count - stages + 1` times, epilog.
    pub fn unroll(&self, stages: u32, trip_count: u64) -> Vec<Bundle> {
        assert!(trip_count >= u64::from(stages), "trip count below stage count");
        let mut out = self.prolog.clone();
        for _ in 0..trip_count - u64::from(stages) + 1 {
            out.extend(self.kernel.iter().cloned());
        }
        out.extend(self.epilog.iter().cloned());
        out
    }
}

fn bundle_at(s: &ModuloSchedule, k: i64, keep: impl Fn(u32) -> bool) -> Bundle {
    let ii = i64::from(s.ii);
    s.ops
        .iter()
        .filter(|o| o.cycle.rem_euclid(ii) == k)
        .map(|o| (o, (o.cycle / ii) as u32))
        .filter(|&(_, st)| keep(st))
        .map(|(o, st)| {
            (
                o.slot.clone(),
                BundleOp {
                    op: o.id.clone(),
                    stage: st,
                },
            )
        })
        .collect()
}

/// Kernel by folding cycle `c` onto `c mod II`; prolog and epilog by peeling
/// the stages that are not yet (resp. no longer) active.
pub fn expand_pipeline(s: &ModuloSchedule) -> PipelineCode {
    let ii = i64::from(s.ii);
    let fill = i64::from(s.stages.saturating_sub(1)) * ii;
    let kernel = (0..ii).map(|k| bundle_at(s, k, |_| true)).collect();
    let prolog = (0..fill)
        .map(|t| {
            let active = (t / ii) as u32;
            bundle_at(s, t % ii, |st| st <= active)
        })
        .collect();
    let epilog = (0..fill)
        .map(|t| {
            let retired = (t / ii) as u32;
            bundle_at(s, t % ii, |st| st > retired)
        })
        .collect();
    PipelineCode { prolog, kernel, epilog }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("trip count {trip_count} is below the stage count {stages}; the loop needs a guard")]
    TooFewIterations { trip_count: u64, stages: u32 },
    #[error("resource conflict at cycle {cycle} on {resource}: {first} and {second}")]
    Conflict {
        cycle: i64,
        resource: String,
        first: String,
        second: String,
    },
}

/// Total cycles for `trip_count` overlapped iterations, `(N - 1) * II + span`.
/// Replays every iteration cycle by cycle and fails on any slot, bus or
/// write-port clash between iterations.
pub fn simulate(s: &ModuloSchedule, trip_count: u64) -> Result<u64, SimError> {
    if trip_count < u64::from(s.stages) {
        return Err(SimError::TooFewIterations {
            trip_count,
            stages: s.stages,
        });
    }
    let ii = i64::from(s.ii);
    let mut taken: HashMap<(i64, String), String> = HashMap::new();
    let mut claim = |cycle: i64, resource: String, who: String| -> Result<(), SimError> {
        match taken.get(&(cycle, resource.clone())) {
            Some(first) if *first != who => Err(SimError::Conflict {
                cycle,
                resource,
                first: first.clone(),
                second: who,
            }),
            Some(_) => Ok(()),
            None => {
                taken.insert((cycle, resource), who);
                Ok(())
            }
        }
    };
    let mut end = 0i64;
    for it in 0..trip_count as i64 {
        let base = it * ii;
        for o in &s.ops {
            let t = base + o.cycle;
            end = end.max(t + 1);
            claim(t, format!("slot {}", o.slot), format!("{}#{it}", o.id))?;
        }
        for r in &s.routing {
            let t = base + r.cycle;
            // A bus carries one port's value, a write port listens to one bus.
            claim(t, format!("bus {}", r.bus), format!("port {}", r.out_port))?;
            claim(t, format!("write port {}", r.write_port), format!("bus {}", r.bus))?;
        }
    }
    Ok(end.max(0) as u64)
}
