//! Seeded random machines and loops for differential and property tests.
//!
//! Instances are small and always load: every opcode has a legal slot,
//! every output port reaches every register file over some bus.
//! Zero-distance dependencies only go from lower to higher op index, so
//! the only cycles carry a positive distance.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bounds;
use crate::loop_ir::{augment_loop_carried, load_loop, DepDoc, DepKind, LiveOutDoc, LoopDoc, LoopGraph, OpDoc};
use crate::machine::{load_machine, MachineDoc, OpcodeDoc, Processor, RegisterFileDoc, SlotDoc};
use crate::search::{default_max_ii, SearchOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenLimits {
    pub max_ops: usize,
    pub max_slots: usize,
    pub max_buses: usize,
    /// Per register file.
    pub max_write_ports: usize,
    pub max_register_files: usize,
    pub max_latency: u32,
    pub max_distance: u32,
    /// Register file capacities are drawn from `1..=c`; `None` leaves them
    /// large enough never to bind.
    pub max_capacity: Option<u32>,
}

impl GenLimits {
    /// Instances the exhaustive oracle handles quickly.
    pub fn oracle() -> Self {
        GenLimits {
            max_ops: 5,
            max_slots: 3,
            max_buses: 2,
            max_write_ports: 2,
            max_register_files: 1,
            max_latency: 3,
            max_distance: 2,
            max_capacity: None,
        }
    }

    pub fn fuzz() -> Self {
        GenLimits {
            max_ops: 12,
            max_slots: 4,
            max_buses: 3,
            max_write_ports: 2,
            max_register_files: 2,
            max_latency: 3,
            max_distance: 2,
            max_capacity: None,
        }
    }

    pub fn pressure() -> Self {
        GenLimits {
            max_ops: 5,
            max_capacity: Some(3),
            ..GenLimits::oracle()
        }
    }
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub seed: u64,
    pub machine_doc: MachineDoc,
    pub loop_doc: LoopDoc,
    pub machine: Processor,
    pub graph: LoopGraph,
}

struct Opcode {
    name: String,
    latency: u32,
    produces: bool,
    operands: usize,
}

fn pick_some<T: Clone>(rng: &mut ChaCha8Rng, xs: &[T], p: f64) -> Vec<T> {
    let mut out: Vec<T> = xs.iter().filter(|_| rng.gen_bool(p)).cloned().collect();
    if out.is_empty() {
        out.push(xs.choose(rng).expect("non-empty").clone());
    }
    out
}

fn gen_machine(rng: &mut ChaCha8Rng, lim: &GenLimits) -> (MachineDoc, Vec<Opcode>) {
    let n_slots = rng.gen_range(1..=lim.max_slots);
    let n_buses = rng.gen_range(1..=lim.max_buses);
    let n_rfs = rng.gen_range(1..=lim.max_register_files);
    let rfs: Vec<String> = (0..n_rfs).map(|i| format!("R{i}")).collect();

    let mut opcodes = vec![Opcode {
        name: "ST".into(),
        latency: 1,
        produces: false,
        operands: rng.gen_range(1..=2),
    }];
    for i in 0..rng.gen_range(1..=3) {
        opcodes.push(Opcode {
            name: format!("OP{i}"),
            latency: rng.gen_range(1..=lim.max_latency),
            produces: true,
            operands: rng.gen_range(0..=2),
        });
    }

    let mut on_slot: Vec<Vec<usize>> = vec![Vec::new(); n_slots];
    for o in 0..opcodes.len() {
        on_slot[rng.gen_range(0..n_slots)].push(o);
        for list in on_slot.iter_mut() {
            if !list.contains(&o) && rng.gen_bool(0.4) {
                list.push(o);
            }
        }
    }

    let buses: Vec<String> = (0..n_buses).map(|i| format!("b{i}")).collect();
    let mut slots = Vec::new();
    let mut ports = Vec::new();
    for (s, list) in on_slot.iter_mut().enumerate() {
        list.sort();
        let id = format!("S{s}");
        let port = format!("S{s}.out");
        let has_port = list.iter().any(|&o| opcodes[o].produces);
        let ops = list
            .iter()
            .map(|&o| {
                let op = &opcodes[o];
                OpcodeDoc {
                    name: op.name.clone(),
                    latency: op.latency,
                    out_port: op.produces.then(|| port.clone()),
                    operand_rfs: (0..op.operands).map(|_| rfs.choose(rng).unwrap().clone()).collect(),
                }
            })
            .collect();
        if has_port {
            ports.push(port.clone());
        }
        slots.push(SlotDoc {
            id,
            opcodes: ops,
            out_ports: if has_port { vec![port] } else { Vec::new() },
        });
    }

    let mut port_bus = Vec::new();
    for port in &ports {
        for b in pick_some(rng, &buses, 0.5) {
            port_bus.push((port.clone(), b));
        }
    }
    let mut register_files = Vec::new();
    let mut bus_wp = Vec::new();
    for rf in &rfs {
        let wps: Vec<String> = (0..rng.gen_range(1..=lim.max_write_ports))
            .map(|i| format!("{rf}.w{i}"))
            .collect();
        for wp in &wps {
            for b in pick_some(rng, &buses, 0.5) {
                bus_wp.push((b, wp.clone()));
            }
        }
        register_files.push(RegisterFileDoc {
            id: rf.clone(),
            capacity: lim.max_capacity.map_or(64, |c| rng.gen_range(1..=c)),
            write_ports: wps,
        });
    }
    // every port reaches every register file over some bus
    for port in &ports {
        for rf in &register_files {
            let reaches = |b: &String| bus_wp.iter().any(|(x, w)| x == b && rf.write_ports.contains(w));
            let ok = port_bus.iter().any(|(q, b)| q == port && reaches(b));
            if !ok {
                let b = buses.iter().find(|b| reaches(b)).expect("write ports have buses").clone();
                port_bus.push((port.clone(), b));
            }
        }
    }
    bus_wp.sort();

    let doc = MachineDoc {
        name: "generated".into(),
        slots,
        buses,
        register_files,
        port_bus,
        bus_wp,
    };
    (doc, opcodes)
}

fn gen_loop(rng: &mut ChaCha8Rng, lim: &GenLimits, opcodes: &[Opcode], rfs: &[String]) -> LoopDoc {
    let n = rng.gen_range(1..=lim.max_ops);
    let kinds: Vec<usize> = (0..n).map(|_| rng.gen_range(0..opcodes.len())).collect();
    let id = |i: usize| format!("n{i}");
    let reg = |i: usize| format!("v{i}");
    let mut ops: Vec<OpDoc> = (0..n)
        .map(|i| OpDoc {
            id: id(i),
            opcode: opcodes[kinds[i]].name.clone(),
            defs: if opcodes[kinds[i]].produces { vec![reg(i)] } else { Vec::new() },
            uses: Vec::new(),
            pin: Default::default(),
        })
        .collect();
    let mut deps = Vec::new();

    for j in 0..n {
        let room = opcodes[kinds[j]].operands;
        let mut producers: Vec<usize> = (0..n).filter(|&i| opcodes[kinds[i]].produces).collect();
        producers.shuffle(rng);
        for i in producers {
            if ops[j].uses.len() == room {
                break;
            }
            let distance = if i < j && rng.gen_bool(0.7) {
                0
            } else if lim.max_distance > 0 && rng.gen_bool(0.3) {
                rng.gen_range(1..=lim.max_distance)
            } else {
                continue;
            };
            ops[j].uses.push(reg(i));
            deps.push(DepDoc {
                src: id(i),
                dst: id(j),
                latency: opcodes[kinds[i]].latency as i32,
                distance,
                kind: DepKind::Data,
            });
        }
    }

    // ordering constraints without a value
    for _ in 0..rng.gen_range(0..=n / 2) {
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        let distance = if a < b && rng.gen_bool(0.5) {
            0
        } else if lim.max_distance > 0 {
            rng.gen_range(1..=lim.max_distance)
        } else {
            continue;
        };
        deps.push(DepDoc {
            src: id(a),
            dst: id(b),
            latency: rng.gen_range(0..=lim.max_latency as i32),
            distance,
            kind: DepKind::Other,
        });
    }

    let mut live_out = Vec::new();
    for op in &ops {
        if let Some(r) = op.defs.first() {
            if rng.gen_bool(0.15) {
                live_out.push(LiveOutDoc {
                    reg: r.clone(),
                    rfs: vec![rfs.choose(rng).unwrap().clone()],
                });
            }
        }
    }

    LoopDoc {
        ops,
        deps,
        live_out,
        trip_count: None,
    }
}

/// Options for searching `g` on `p` with defaults, except that a
/// disconnected loop gets the gap bound as its stage cap.
pub fn search_options(g: &LoopGraph, p: &Processor) -> SearchOptions {
    let mut opts = SearchOptions::default();
    let g = augment_loop_carried(g);
    if !bounds::weakly_connected(&g) {
        let max_ii = default_max_ii(&g, p).max(bounds::mii(&g, p).unwrap_or(1));
        opts.max_stages = (1..=max_ii).map(|ii| bounds::gap_stage_bound(&g, ii)).max();
    }
    opts
}

/// The instance for `seed`; the same seed and limits always give the same
/// instance.
pub fn generate(seed: u64, lim: &GenLimits) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (machine_doc, opcodes) = gen_machine(&mut rng, lim);
    let rfs: Vec<String> = machine_doc.register_files.iter().map(|r| r.id.clone()).collect();
    let machine = load_machine(machine_doc.clone()).expect("generated machine loads");
    let loop_doc = gen_loop(&mut rng, lim, &opcodes, &rfs);
    let graph = load_loop(&loop_doc, &machine).expect("generated loop loads");
    Instance {
        seed,
        machine_doc,
        loop_doc,
        machine,
        graph,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        for seed in 0..50 {
            let a = generate(seed, &GenLimits::fuzz());
            let b = generate(seed, &GenLimits::fuzz());
            assert_eq!(a.machine_doc, b.machine_doc);
            assert_eq!(a.loop_doc, b.loop_doc);
        }
    }

    #[test]
    fn limits_are_respected() {
        let lim = GenLimits::oracle();
        for seed in 0..300 {
            let x = generate(seed, &lim);
            assert!(x.graph.operations.len() <= lim.max_ops);
            assert!(x.machine.slots.len() <= lim.max_slots);
            assert!(x.machine.buses.len() <= lim.max_buses);
            assert!(x.machine.register_files.iter().all(|r| r.write_ports.len() <= 2));
            assert!(x.graph.deps.iter().all(|d| d.distance <= lim.max_distance));
            assert!(x.machine.opcodes.values().all(|o| o.latency <= lim.max_latency));
        }
    }
}
