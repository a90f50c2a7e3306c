//! Small machines and loops shipped with the crate (also under `fixtures/`).
//!
//! * `toy5`: two arithmetic slots, two load/store slots and a branch slot;
//!   one register file `RF0` (capacity 8, write ports `wp0`..`wp2`) behind
//!   three fully connected buses, enough to write three results per cycle.
//! * `toy4_1lsu`: `toy5` with a single load/store slot.
//! * `g4`: `a = LD; b = ADD a; c = MUL b; ST c`.
//! * `rf1_1port` + `triple_write`: three values per iteration funnelled
//!   through the single write port `ip0` of `RF1`.
//! * `routing_scarce_machine` + `routing_scarce_loop`: two producers of
//!   latency 3 and 2 feeding one store, with a single bus and write port.
//!   The optimum is II=3; the iterative heuristic settles for 4.

use crate::loop_ir::{load_loop, LoopDoc, LoopGraph};
use crate::machine::{load_machine_str, Processor};

pub const TOY5_JSON: &str = include_str!("../fixtures/toy5.json");
pub const TOY4_1LSU_JSON: &str = include_str!("../fixtures/toy4_1lsu.json");
pub const G4_JSON: &str = include_str!("../fixtures/g4.json");
pub const RF1_1PORT_JSON: &str = include_str!("../fixtures/rf1_1port.json");
pub const TRIPLE_WRITE_JSON: &str = include_str!("../fixtures/triple_write.json");
pub const ROUTING_SCARCE_MACHINE_JSON: &str = include_str!("../fixtures/routing_scarce_machine.json");
pub const ROUTING_SCARCE_LOOP_JSON: &str = include_str!("../fixtures/routing_scarce_loop.json");

pub fn toy5() -> Processor {
    load_machine_str(TOY5_JSON).expect("toy5 fixture")
}

pub fn toy4_1lsu() -> Processor {
    load_machine_str(TOY4_1LSU_JSON).expect("toy4_1lsu fixture")
}

pub fn rf1_1port() -> Processor {
    load_machine_str(RF1_1PORT_JSON).expect("rf1_1port fixture")
}

pub fn routing_scarce_machine() -> Processor {
    load_machine_str(ROUTING_SCARCE_MACHINE_JSON).expect("routing_scarce fixture")
}

pub fn g4_doc() -> LoopDoc {
    serde_json::from_str(G4_JSON).expect("g4 fixture")
}

pub fn g4(p: &Processor) -> LoopGraph {
    load_loop(&g4_doc(), p).expect("g4 fixture")
}

pub fn triple_write(p: &Processor) -> LoopGraph {
    load_loop(&serde_json::from_str(TRIPLE_WRITE_JSON).unwrap(), p).expect("triple_write fixture")
}

pub fn routing_scarce_loop(p: &Processor) -> LoopGraph {
    load_loop(&serde_json::from_str(ROUTING_SCARCE_LOOP_JSON).unwrap(), p)
        .expect("routing_scarce fixture")
}

/// `toy5` with the capacity of `RF0` replaced.
pub fn toy5_with_capacity(capacity: u32) -> Processor {
    let mut doc = toy5().doc().clone();
    doc.register_files[0].capacity = capacity;
    crate::machine::load_machine(doc).expect("toy5 variant")
}
