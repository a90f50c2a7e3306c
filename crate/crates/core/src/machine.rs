//! Declarative VLIW machine description.
//!
//! A [`Processor`] is a set of issue slots, each with output ports, a set of
//! buses, and register files with write ports. Values produced on an output
//! port reach a register file through one port→bus edge and one bus→write-port
//! edge. Everything is index based internally; names are only used at the
//! document boundary and in diagnostics.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type SlotIdx = usize;
pub type PortIdx = usize;
pub type BusIdx = usize;
pub type RfIdx = usize;
pub type WpIdx = usize;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MachineError {
    #[error("{path}: {msg}")]
    Schema { path: String, msg: String },
    #[error("{path}: duplicate id '{id}'")]
    Duplicate { path: String, id: String },
    #[error("{path}: reference to undeclared {kind} '{id}'")]
    Dangling {
        path: String,
        kind: &'static str,
        id: String,
    },
    #[error("{path}: {msg}")]
    Invalid { path: String, msg: String },
    #[error("unknown opcode '{0}'")]
    UnknownOpcode(String),
    #[error("unknown {kind} '{id}'")]
    UnknownId { kind: &'static str, id: String },
}

// ---------------------------------------------------------------------------
// Document form

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineDoc {
    pub name: String,
    pub slots: Vec<SlotDoc>,
    pub buses: Vec<String>,
    pub register_files: Vec<RegisterFileDoc>,
    pub port_bus: Vec<(String, String)>,
    pub bus_wp: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlotDoc {
    pub id: String,
    pub opcodes: Vec<OpcodeDoc>,
    pub out_ports: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpcodeDoc {
    pub name: String,
    pub latency: u32,
    #[serde(default)]
    pub out_port: Option<String>,
    #[serde(default)]
    pub operand_rfs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegisterFileDoc {
    pub id: String,
    pub capacity: u32,
    pub write_ports: Vec<String>,
}

// ---------------------------------------------------------------------------
// Validated form

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IssueSlot {
    pub name: String,
    pub legal_opcodes: BTreeSet<String>,
    pub output_ports: Vec<PortIdx>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputPort {
    pub name: String,
    pub slot: SlotIdx,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegisterFile {
    pub name: String,
    pub capacity: u32,
    pub write_ports: Vec<WpIdx>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WritePort {
    pub name: String,
    pub rf: RfIdx,
}

/// How an opcode behaves when issued on one particular slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotBinding {
    pub out_port: Option<PortIdx>,
    pub operand_rfs: Vec<RfIdx>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpcodeInfo {
    pub opcode: String,
    pub latency: u32,
    pub bindings: BTreeMap<SlotIdx, SlotBinding>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Processor {
    pub name: String,
    pub slots: Vec<IssueSlot>,
    pub ports: Vec<OutputPort>,
    pub buses: Vec<String>,
    pub register_files: Vec<RegisterFile>,
    pub write_ports: Vec<WritePort>,
    pub port_bus: BTreeSet<(PortIdx, BusIdx)>,
    pub bus_wp: BTreeSet<(BusIdx, WpIdx)>,
    pub opcodes: BTreeMap<String, OpcodeInfo>,
    doc: MachineDoc,
}

/// Parses and validates a machine description from JSON text.
pub fn load_machine_str(text: &str) -> Result<Processor, MachineError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: MachineDoc = serde_path_to_error::deserialize(de).map_err(|e| MachineError::Schema {
        path: e.path().to_string(),
        msg: e.inner().to_string(),
    })?;
    load_machine(doc)
}

fn index_unique(
    names: impl IntoIterator<Item = (String, String)>,
    into: &mut HashMap<String, usize>,
) -> Result<(), MachineError> {
    for (path, name) in names {
        let next = into.len();
        if into.insert(name.clone(), next).is_some() {
            return Err(MachineError::Duplicate { path, id: name });
        }
    }
    Ok(())
}

/// Validates a machine document.
pub fn load_machine(doc: MachineDoc) -> Result<Processor, MachineError> {
    let mut slot_ix = HashMap::new();
    index_unique(
        doc.slots
            .iter()
            .enumerate()
            .map(|(i, s)| (format!("slots[{i}].id"), s.id.clone())),
        &mut slot_ix,
    )?;

    let mut port_ix = HashMap::new();
    let mut ports = Vec::new();
    for (si, s) in doc.slots.iter().enumerate() {
        for (pi, p) in s.out_ports.iter().enumerate() {
            let path = format!("slots[{si}].out_ports[{pi}]");
            if port_ix.insert(p.clone(), ports.len()).is_some() {
                return Err(MachineError::Duplicate { path, id: p.clone() });
            }
            ports.push(OutputPort {
                name: p.clone(),
                slot: si,
            });
        }
    }

    let mut bus_ix = HashMap::new();
    index_unique(
        doc.buses
            .iter()
            .enumerate()
            .map(|(i, b)| (format!("buses[{i}]"), b.clone())),
        &mut bus_ix,
    )?;

    let mut rf_ix = HashMap::new();
    index_unique(
        doc.register_files
            .iter()
            .enumerate()
            .map(|(i, r)| (format!("register_files[{i}].id"), r.id.clone())),
        &mut rf_ix,
    )?;

    let mut wp_ix = HashMap::new();
    let mut write_ports = Vec::new();
    let mut register_files = Vec::new();
    for (ri, rf) in doc.register_files.iter().enumerate() {
        if rf.capacity == 0 {
            return Err(MachineError::Invalid {
                path: format!("register_files[{ri}].capacity"),
                msg: "capacity must be at least 1".into(),
            });
        }
        if rf.write_ports.is_empty() {
            return Err(MachineError::Invalid {
                path: format!("register_files[{ri}].write_ports"),
                msg: "a register file needs at least one write port".into(),
            });
        }
        let mut wps = Vec::new();
        for (wi, wp) in rf.write_ports.iter().enumerate() {
            if wp_ix.insert(wp.clone(), write_ports.len()).is_some() {
                return Err(MachineError::Duplicate {
                    path: format!("register_files[{ri}].write_ports[{wi}]"),
                    id: wp.clone(),
                });
            }
            wps.push(write_ports.len());
            write_ports.push(WritePort {
                name: wp.clone(),
                rf: ri,
            });
        }
        register_files.push(RegisterFile {
            name: rf.id.clone(),
            capacity: rf.capacity,
            write_ports: wps,
        });
    }

    let lookup = |map: &HashMap<String, usize>, kind: &'static str, id: &str, path: String| {
        map.get(id).copied().ok_or_else(|| MachineError::Dangling {
            path,
            kind,
            id: id.to_string(),
        })
    };

    let mut port_bus = BTreeSet::new();
    for (i, (p, b)) in doc.port_bus.iter().enumerate() {
        let pi = lookup(&port_ix, "output port", p, format!("port_bus[{i}][0]"))?;
        let bi = lookup(&bus_ix, "bus", b, format!("port_bus[{i}][1]"))?;
        port_bus.insert((pi, bi));
    }
    let mut bus_wp = BTreeSet::new();
    for (i, (b, w)) in doc.bus_wp.iter().enumerate() {
        let bi = lookup(&bus_ix, "bus", b, format!("bus_wp[{i}][0]"))?;
        let wi = lookup(&wp_ix, "write port", w, format!("bus_wp[{i}][1]"))?;
        bus_wp.insert((bi, wi));
    }

    let mut slots = Vec::new();
    let mut opcodes: BTreeMap<String, OpcodeInfo> = BTreeMap::new();
    for (si, s) in doc.slots.iter().enumerate() {
        let mut legal = BTreeSet::new();
        for (oi, op) in s.opcodes.iter().enumerate() {
            let path = format!("slots[{si}].opcodes[{oi}]");
            if !legal.insert(op.name.clone()) {
                return Err(MachineError::Duplicate {
                    path: format!("{path}.name"),
                    id: op.name.clone(),
                });
            }
            let out_port = match &op.out_port {
                None => None,
                Some(p) => {
                    let pi = lookup(&port_ix, "output port", p, format!("{path}.out_port"))?;
                    if ports[pi].slot != si {
                        return Err(MachineError::Invalid {
                            path: format!("{path}.out_port"),
                            msg: format!("port '{p}' does not belong to slot '{}'", s.id),
                        });
                    }
                    Some(pi)
                }
            };
            let operand_rfs = op
                .operand_rfs
                .iter()
                .enumerate()
                .map(|(k, rf)| lookup(&rf_ix, "register file", rf, format!("{path}.operand_rfs[{k}]")))
                .collect::<Result<Vec<_>, _>>()?;
            let info = opcodes.entry(op.name.clone()).or_insert_with(|| OpcodeInfo {
                opcode: op.name.clone(),
                latency: op.latency,
                bindings: BTreeMap::new(),
            });
            if info.latency != op.latency {
                return Err(MachineError::Invalid {
                    path: format!("{path}.latency"),
                    msg: format!(
                        "opcode '{}' has latency {} here but {} on another slot",
                        op.name, op.latency, info.latency
                    ),
                });
            }
            info.bindings.insert(
                si,
                SlotBinding {
                    out_port,
                    operand_rfs,
                },
            );
        }
        slots.push(IssueSlot {
            name: s.id.clone(),
            legal_opcodes: legal,
            output_ports: ports
                .iter()
                .enumerate()
                .filter(|(_, p)| p.slot == si)
                .map(|(i, _)| i)
                .collect(),
        });
    }

    Ok(Processor {
        name: doc.name.clone(),
        slots,
        ports,
        buses: doc.buses.clone(),
        register_files,
        write_ports,
        port_bus,
        bus_wp,
        opcodes,
        doc,
    })
}

impl Processor {
    pub fn doc(&self) -> &MachineDoc {
        &self.doc
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.doc).expect("machine document serializes")
    }

    pub fn opcode(&self, opcode: &str) -> Result<&OpcodeInfo, MachineError> {
        self.opcodes
            .get(opcode)
            .ok_or_else(|| MachineError::UnknownOpcode(opcode.to_string()))
    }

    pub fn latency(&self, opcode: &str) -> Result<u32, MachineError> {
        Ok(self.opcode(opcode)?.latency)
    }

    /// Slots on which `opcode` may issue. Never empty for a declared opcode.
    pub fn slots_for(&self, opcode: &str) -> Result<Vec<SlotIdx>, MachineError> {
        Ok(self.opcode(opcode)?.bindings.keys().copied().collect())
    }

    pub fn slot_names_for(&self, opcode: &str) -> Result<BTreeSet<String>, MachineError> {
        Ok(self
            .slots_for(opcode)?
            .into_iter()
            .map(|s| self.slots[s].name.clone())
            .collect())
    }

    pub fn binding(&self, opcode: &str, slot: SlotIdx) -> Option<&SlotBinding> {
        self.opcodes.get(opcode)?.bindings.get(&slot)
    }

    /// Every `(bus, write port)` through which `port` can deliver a value
    /// into `rf`. Empty when no route exists.
    pub fn routing_options(&self, port: PortIdx, rf: RfIdx) -> Vec<(BusIdx, WpIdx)> {
        let mut out = Vec::new();
        for &(p, b) in self.port_bus.range((port, 0)..=(port, usize::MAX)) {
            debug_assert_eq!(p, port);
            for &wp in &self.register_files[rf].write_ports {
                if self.bus_wp.contains(&(b, wp)) {
                    out.push((b, wp));
                }
            }
        }
        out
    }

    /// Name-based variant of [`Processor::routing_options`].
    pub fn routing_options_by_name(
        &self,
        port: &str,
        rf: &str,
    ) -> Result<BTreeSet<(String, String)>, MachineError> {
        let p = self.port_index(port)?;
        let r = self.rf_index(rf)?;
        Ok(self
            .routing_options(p, r)
            .into_iter()
            .map(|(b, w)| (self.buses[b].clone(), self.write_ports[w].name.clone()))
            .collect())
    }

    pub fn slot_index(&self, name: &str) -> Result<SlotIdx, MachineError> {
        self.slots
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| unknown("slot", name))
    }

    pub fn port_index(&self, name: &str) -> Result<PortIdx, MachineError> {
        self.ports
            .iter()
            .position(|p| p.name == name)
            .ok_or_else(|| unknown("output port", name))
    }

    pub fn bus_index(&self, name: &str) -> Result<BusIdx, MachineError> {
        self.buses
            .iter()
            .position(|b| b == name)
            .ok_or_else(|| unknown("bus", name))
    }

    pub fn rf_index(&self, name: &str) -> Result<RfIdx, MachineError> {
        self.register_files
            .iter()
            .position(|r| r.name == name)
            .ok_or_else(|| unknown("register file", name))
    }

    pub fn wp_index(&self, name: &str) -> Result<WpIdx, MachineError> {
        self.write_ports
            .iter()
            .position(|w| w.name == name)
            .ok_or_else(|| unknown("write port", name))
    }
}

fn unknown(kind: &'static str, id: &str) -> MachineError {
    MachineError::UnknownId {
        kind,
        id: id.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn toy5_loads() {
        let p = fixtures::toy5();
        assert_eq!(p.slots.len(), 5);
        let names: Vec<_> = p.slots.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["ARU0", "ARU1", "LSU0", "LSU1", "BRA"]);
        assert_eq!(p.register_files.len(), 1);
        assert_eq!(p.buses.len(), 3);
    }

    #[test]
    fn slots_for_loads_and_adds() {
        let p = fixtures::toy5();
        let set = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
        assert_eq!(p.slot_names_for("LD").unwrap(), set(&["LSU0", "LSU1"]));
        assert_eq!(p.slot_names_for("ADD").unwrap(), set(&["ARU0", "ARU1"]));
        assert_eq!(
            p.slots_for("FOO"),
            Err(MachineError::UnknownOpcode("FOO".into()))
        );
    }

    #[test]
    fn routing_options_fully_connected() {
        let p = fixtures::toy5();
        let got = p.routing_options_by_name("ARU0.out0", "RF0").unwrap();
        let mut want = BTreeSet::new();
        for b in ["b0", "b1", "b2"] {
            for w in ["wp0", "wp1", "wp2"] {
                want.insert((b.to_string(), w.to_string()));
            }
        }
        assert_eq!(got, want);
    }

    #[test]
    fn routing_options_empty_topology() {
        let mut doc = fixtures::toy5().doc().clone();
        doc.port_bus.clear();
        let p = load_machine(doc).unwrap();
        assert!(p.routing_options_by_name("ARU0.out0", "RF0").unwrap().is_empty());
        assert!(matches!(
            p.routing_options_by_name("ARU0.out0", "RF9"),
            Err(MachineError::UnknownId { .. })
        ));
    }

    #[test]
    fn dangling_bus_edge_is_named() {
        let mut doc = fixtures::toy5().doc().clone();
        doc.bus_wp.push(("b0".into(), "wp7".into()));
        let err = load_machine(doc).unwrap_err();
        match &err {
            MachineError::Dangling { path, id, .. } => {
                assert!(path.starts_with("bus_wp["), "{path}");
                assert_eq!(id, "wp7");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_slot_rejected() {
        let mut doc = fixtures::toy5().doc().clone();
        let mut dup = doc.slots[0].clone();
        dup.out_ports = vec!["X.out".into()];
        doc.slots.push(dup);
        assert!(matches!(
            load_machine(doc),
            Err(MachineError::Duplicate { id, .. }) if id == "ARU0"
        ));
    }

    #[test]
    fn unknown_keys_rejected_with_path() {
        let mut v: serde_json::Value = serde_json::from_str(&fixtures::toy5().to_json()).unwrap();
        v["slots"][1]["colour"] = serde_json::json!("red");
        let err = load_machine_str(&v.to_string()).unwrap_err();
        match err {
            MachineError::Schema { path, msg } => {
                assert!(path.starts_with("slots[1]"), "{path}");
                assert!(msg.contains("colour"), "{msg}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn json_load_is_deterministic() {
        let text = fixtures::toy5().to_json();
        assert_eq!(load_machine_str(&text).unwrap(), load_machine_str(&text).unwrap());
    }

    #[test]
    fn every_route_is_witnessed_by_edges() {
        let p = fixtures::toy5();
        for port in 0..p.ports.len() {
            for rf in 0..p.register_files.len() {
                for (b, wp) in p.routing_options(port, rf) {
                    assert!(p.port_bus.contains(&(port, b)));
                    assert!(p.bus_wp.contains(&(b, wp)));
                    assert_eq!(p.write_ports[wp].rf, rf);
                }
            }
        }
    }
}
