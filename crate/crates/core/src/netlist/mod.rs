//! Combinational gate-level netlists.
//!
//! A [`Netlist`] is immutable once built. It is constructed either from a
//! [`RawNetlist`] (the name-based form shared by the text format, the JSON
//! mirror and the generators) or by parsing text with [`parse_netlist`].
//! Output bits are numbered LSB first across all output buses in declaration
//! order, so bit position `i` of an arithmetic result is `primary_outputs()[i]`.

mod gen;
mod sim;
mod text;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

pub use gen::{gen_baugh_wooley, gen_cla_adder, gen_mac_int8, gen_ripple_adder};
pub use sim::Injection;
pub use text::{emit_netlist, parse_netlist};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NetId(pub u32);

impl NetId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GateId(pub u32);

impl fmt::Display for GateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum GateKind {
    And,
    Or,
    Nand,
    Nor,
    Xor,
    Xnor,
    Not,
    Buf,
}

impl GateKind {
    pub const ALL: [GateKind; 8] = [
        GateKind::And,
        GateKind::Or,
        GateKind::Nand,
        GateKind::Nor,
        GateKind::Xor,
        GateKind::Xnor,
        GateKind::Not,
        GateKind::Buf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GateKind::And => "AND",
            GateKind::Or => "OR",
            GateKind::Nand => "NAND",
            GateKind::Nor => "NOR",
            GateKind::Xor => "XOR",
            GateKind::Xnor => "XNOR",
            GateKind::Not => "NOT",
            GateKind::Buf => "BUF",
        }
    }

    pub fn from_name(s: &str) -> Option<GateKind> {
        GateKind::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn is_unary(self) -> bool {
        matches!(self, GateKind::Not | GateKind::Buf)
    }

    /// Input value that forces the output regardless of the other inputs.
    pub fn controlling_value(self) -> Option<bool> {
        match self {
            GateKind::And | GateKind::Nand => Some(false),
            GateKind::Or | GateKind::Nor => Some(true),
            _ => None,
        }
    }

    /// Whether the output is complemented relative to the AND/OR/XOR/BUF core.
    pub fn inverting(self) -> bool {
        matches!(
            self,
            GateKind::Nand | GateKind::Nor | GateKind::Xnor | GateKind::Not
        )
    }

    pub fn eval_words(self, mut inputs: impl Iterator<Item = u64>) -> u64 {
        let first = inputs.next().unwrap_or(0);
        match self {
            GateKind::And => inputs.fold(first, |a, b| a & b),
            GateKind::Nand => !inputs.fold(first, |a, b| a & b),
            GateKind::Or => inputs.fold(first, |a, b| a | b),
            GateKind::Nor => !inputs.fold(first, |a, b| a | b),
            GateKind::Xor => inputs.fold(first, |a, b| a ^ b),
            GateKind::Xnor => !inputs.fold(first, |a, b| a ^ b),
            GateKind::Not => !first,
            GateKind::Buf => first,
        }
    }
}

impl fmt::Display for GateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Gate {
    pub id: GateId,
    pub kind: GateKind,
    pub inputs: Vec<NetId>,
    pub output: NetId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bus {
    pub name: String,
    /// LSB first.
    pub nets: Vec<NetId>,
}

impl Bus {
    pub fn width(&self) -> usize {
        self.nets.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Driver {
    Input(u32),
    Gate(u32),
}

/// A gate pin. Input pins are numbered in the order the gate lists them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Pin {
    Output,
    Input(u8),
}

impl fmt::Display for Pin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pin::Output => f.write_str("out"),
            Pin::Input(i) => write!(f, "in{}", i),
        }
    }
}

impl Pin {
    pub fn parse(s: &str) -> Option<Pin> {
        if s == "out" {
            Some(Pin::Output)
        } else {
            s.strip_prefix("in")?.parse().ok().map(Pin::Input)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum NetlistError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("net `{net}` is driven more than once")]
    MultiplyDriven { net: String },
    #[error("combinational cycle through net `{net}`")]
    Cycle { net: String },
    #[error("dangling net `{net}`: {reason}")]
    Dangling { net: String, reason: &'static str },
    #[error("unknown net `{net}`")]
    UnknownNet { net: String },
    #[error("duplicate declaration of `{name}`")]
    Duplicate { name: String },
    #[error("gate {gate} ({kind}) has {got} inputs")]
    Arity {
        gate: GateId,
        kind: GateKind,
        got: usize,
    },
    #[error("primary output `{net}` is not reachable from any primary input")]
    UnreachableOutput { net: String },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("missing input bus `{bus}`")]
    MissingInput { bus: String },
    #[error("input bus `{bus}` has width {got}, expected {expected}")]
    InputWidth {
        bus: String,
        expected: usize,
        got: usize,
    },
}

/// Name-based netlist description. This is the JSON mirror of the text
/// format and the input to [`Netlist::from_raw`].
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawNetlist {
    pub inputs: Vec<RawBus>,
    pub outputs: Vec<RawBus>,
    /// Internal nets (bus bits are implicit: `name[i]`).
    pub nets: Vec<String>,
    pub gates: Vec<RawGate>,
    #[serde(default)]
    pub annotations: Vec<RawAnnotation>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawBus {
    pub name: String,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawGate {
    pub id: u32,
    pub kind: GateKind,
    pub output: String,
    pub inputs: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawAnnotation {
    /// Only `carry_in_of_bit` is defined.
    pub role: String,
    pub bit: usize,
    pub net: String,
}

pub const CARRY_IN_ROLE: &str = "carry_in_of_bit";

pub fn bus_bit_name(bus: &str, bit: usize) -> String {
    format!("{}[{}]", bus, bit)
}

#[derive(Clone, Debug)]
pub struct Netlist {
    net_names: Vec<String>,
    gates: Vec<Gate>,
    inputs: Vec<Bus>,
    outputs: Vec<Bus>,
    carry_in: BTreeMap<usize, NetId>,
    n_internal_start: usize,

    driver: Vec<Option<Driver>>,
    readers: Vec<Vec<(u32, u8)>>,
    topo: Vec<u32>,
    pi_nets: Vec<NetId>,
    po_nets: Vec<NetId>,
    is_po: Vec<bool>,
    gate_index: BTreeMap<GateId, u32>,
}

impl PartialEq for Netlist {
    fn eq(&self, other: &Self) -> bool {
        self.to_raw() == other.to_raw()
    }
}

impl Netlist {
    pub fn from_raw(raw: &RawNetlist) -> Result<Netlist, NetlistError> {
        let mut names: Vec<String> = Vec::new();
        let mut by_name: BTreeMap<String, NetId> = BTreeMap::new();
        let mut declare = |name: String,
                           names: &mut Vec<String>|
         -> Result<NetId, NetlistError> {
            if by_name.contains_key(&name) {
                return Err(NetlistError::Duplicate { name });
            }
            let id = NetId(names.len() as u32);
            by_name.insert(name.clone(), id);
            names.push(name);
            Ok(id)
        };

        let mut bus_names = BTreeSet::new();
        let mut inputs = Vec::new();
        for b in &raw.inputs {
            if b.width == 0 {
                return Err(NetlistError::InvalidParameter(format!(
                    "bus `{}` has zero width",
                    b.name
                )));
            }
            if !bus_names.insert(b.name.clone()) {
                return Err(NetlistError::Duplicate {
                    name: b.name.clone(),
                });
            }
            let nets = (0..b.width)
                .map(|i| declare(bus_bit_name(&b.name, i), &mut names))
                .collect::<Result<Vec<_>, _>>()?;
            inputs.push(Bus {
                name: b.name.clone(),
                nets,
            });
        }
        let mut outputs = Vec::new();
        for b in &raw.outputs {
            if b.width == 0 {
                return Err(NetlistError::InvalidParameter(format!(
                    "bus `{}` has zero width",
                    b.name
                )));
            }
            if !bus_names.insert(b.name.clone()) {
                return Err(NetlistError::Duplicate {
                    name: b.name.clone(),
                });
            }
            let nets = (0..b.width)
                .map(|i| declare(bus_bit_name(&b.name, i), &mut names))
                .collect::<Result<Vec<_>, _>>()?;
            outputs.push(Bus {
                name: b.name.clone(),
                nets,
            });
        }
        let n_internal_start = names.len();
        for n in &raw.nets {
            declare(n.clone(), &mut names)?;
        }

        let lookup = |name: &str| -> Result<NetId, NetlistError> {
            by_name
                .get(name)
                .copied()
                .ok_or_else(|| NetlistError::UnknownNet { net: name.into() })
        };

        let mut gates = Vec::with_capacity(raw.gates.len());
        let mut seen_ids = BTreeSet::new();
        for g in &raw.gates {
            let id = GateId(g.id);
            if !seen_ids.insert(id) {
                return Err(NetlistError::Duplicate {
                    name: format!("gate {}", g.id),
                });
            }
            let arity_ok = if g.kind.is_unary() {
                g.inputs.len() == 1
            } else {
                g.inputs.len() >= 2
            };
            if !arity_ok || g.inputs.len() > u8::MAX as usize {
                return Err(NetlistError::Arity {
                    gate: id,
                    kind: g.kind,
                    got: g.inputs.len(),
                });
            }
            let inputs = g
                .inputs
                .iter()
                .map(|n| lookup(n))
                .collect::<Result<Vec<_>, _>>()?;
            gates.push(Gate {
                id,
                kind: g.kind,
                inputs,
                output: lookup(&g.output)?,
            });
        }
        gates.sort_by_key(|g| g.id);

        let mut carry_in = BTreeMap::new();
        for a in &raw.annotations {
            if a.role != CARRY_IN_ROLE {
                return Err(NetlistError::InvalidParameter(format!(
                    "unknown annotation role `{}`",
                    a.role
                )));
            }
            if carry_in.insert(a.bit, lookup(&a.net)?).is_some() {
                return Err(NetlistError::Duplicate {
                    name: format!("{} {}", CARRY_IN_ROLE, a.bit),
                });
            }
        }

        Netlist::assemble(names, gates, inputs, outputs, carry_in, n_internal_start)
    }

    fn assemble(
        net_names: Vec<String>,
        gates: Vec<Gate>,
        inputs: Vec<Bus>,
        outputs: Vec<Bus>,
        carry_in: BTreeMap<usize, NetId>,
        n_internal_start: usize,
    ) -> Result<Netlist, NetlistError> {
        let n = net_names.len();
        let name = |id: NetId| net_names[id.index()].clone();

        let mut driver: Vec<Option<Driver>> = vec![None; n];
        let mut pi_nets = Vec::new();
        for b in &inputs {
            for &net in &b.nets {
                driver[net.index()] = Some(Driver::Input(pi_nets.len() as u32));
                pi_nets.push(net);
            }
        }
        for (gi, g) in gates.iter().enumerate() {
            let slot = &mut driver[g.output.index()];
            if slot.is_some() {
                return Err(NetlistError::MultiplyDriven {
                    net: name(g.output),
                });
            }
            *slot = Some(Driver::Gate(gi as u32));
        }

        let mut readers: Vec<Vec<(u32, u8)>> = vec![Vec::new(); n];
        for (gi, g) in gates.iter().enumerate() {
            for (pin, &net) in g.inputs.iter().enumerate() {
                readers[net.index()].push((gi as u32, pin as u8));
            }
        }
        let po_nets: Vec<NetId> = outputs.iter().flat_map(|b| b.nets.iter().copied()).collect();
        let mut is_po = vec![false; n];
        for &net in &po_nets {
            is_po[net.index()] = true;
        }

        for (i, d) in driver.iter().enumerate() {
            let net = NetId(i as u32);
            match d {
                None if is_po[i] => {
                    return Err(NetlistError::Dangling {
                        net: name(net),
                        reason: "primary output has no driver",
                    })
                }
                None if !readers[i].is_empty() => {
                    return Err(NetlistError::Dangling {
                        net: name(net),
                        reason: "net is read but never driven",
                    })
                }
                None => {
                    return Err(NetlistError::Dangling {
                        net: name(net),
                        reason: "net is never driven or read",
                    })
                }
                Some(Driver::Gate(_)) if !is_po[i] && readers[i].is_empty() => {
                    return Err(NetlistError::Dangling {
                        net: name(net),
                        reason: "gate output is never read",
                    })
                }
                _ => {}
            }
        }

        // Kahn's algorithm, ties broken by gate order so the result is canonical.
        let mut pending: Vec<u32> = gates
            .iter()
            .map(|g| {
                g.inputs
                    .iter()
                    .filter(|n| matches!(driver[n.index()], Some(Driver::Gate(_))))
                    .count() as u32
            })
            .collect();
        let mut ready: alloc::collections::BinaryHeap<core::cmp::Reverse<u32>> = pending
            .iter()
            .enumerate()
            .filter(|(_, &p)| p == 0)
            .map(|(i, _)| core::cmp::Reverse(i as u32))
            .collect();
        let mut topo = Vec::with_capacity(gates.len());
        while let Some(core::cmp::Reverse(gi)) = ready.pop() {
            topo.push(gi);
            let out = gates[gi as usize].output;
            for &(r, _) in &readers[out.index()] {
                pending[r as usize] -= 1;
                if pending[r as usize] == 0 {
                    ready.push(core::cmp::Reverse(r));
                }
            }
        }
        if topo.len() != gates.len() {
            let stuck = pending.iter().position(|&p| p > 0).unwrap();
            return Err(NetlistError::Cycle {
                net: name(gates[stuck].output),
            });
        }

        let gate_index = gates
            .iter()
            .enumerate()
            .map(|(i, g)| (g.id, i as u32))
            .collect();

        let nl = Netlist {
            net_names,
            gates,
            inputs,
            outputs,
            carry_in,
            n_internal_start,
            driver,
            readers,
            topo,
            pi_nets,
            po_nets,
            is_po,
            gate_index,
        };
        // With no undriven nets and no cycles every output traces back to
        // inputs, unless the netlist has no inputs at all.
        if nl.pi_nets.is_empty() {
            if let Some(&po) = nl.po_nets.first() {
                return Err(NetlistError::UnreachableOutput {
                    net: nl.net_name(po).into(),
                });
            }
        }
        Ok(nl)
    }

    pub fn to_raw(&self) -> RawNetlist {
        let nn = |id: NetId| self.net_names[id.index()].clone();
        RawNetlist {
            inputs: self
                .inputs
                .iter()
                .map(|b| RawBus {
                    name: b.name.clone(),
                    width: b.width(),
                })
                .collect(),
            outputs: self
                .outputs
                .iter()
                .map(|b| RawBus {
                    name: b.name.clone(),
                    width: b.width(),
                })
                .collect(),
            nets: self.net_names[self.n_internal_start..].to_vec(),
            gates: self
                .gates
                .iter()
                .map(|g| RawGate {
                    id: g.id.0,
                    kind: g.kind,
                    output: nn(g.output),
                    inputs: g.inputs.iter().map(|&n| nn(n)).collect(),
                })
                .collect(),
            annotations: self
                .carry_in
                .iter()
                .map(|(&bit, &net)| RawAnnotation {
                    role: CARRY_IN_ROLE.into(),
                    bit,
                    net: nn(net),
                })
                .collect(),
        }
    }

    /// Same netlist with `carry_in_of_bit[bit]` pointing at `net`.
    pub fn with_carry_annotation(&self, bit: usize, net: &str) -> Result<Netlist, NetlistError> {
        let id = self
            .net_by_name(net)
            .ok_or_else(|| NetlistError::UnknownNet { net: net.into() })?;
        let mut out = self.clone();
        out.carry_in.insert(bit, id);
        Ok(out)
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn gate(&self, index: usize) -> &Gate {
        &self.gates[index]
    }

    pub fn gate_index(&self, id: GateId) -> Option<usize> {
        self.gate_index.get(&id).map(|&i| i as usize)
    }

    pub fn num_nets(&self) -> usize {
        self.net_names.len()
    }

    pub fn net_name(&self, id: NetId) -> &str {
        &self.net_names[id.index()]
    }

    pub fn net_by_name(&self, name: &str) -> Option<NetId> {
        self.net_names
            .iter()
            .position(|n| n == name)
            .map(|i| NetId(i as u32))
    }

    pub fn input_buses(&self) -> &[Bus] {
        &self.inputs
    }

    pub fn output_buses(&self) -> &[Bus] {
        &self.outputs
    }

    pub fn input_bus(&self, name: &str) -> Option<&Bus> {
        self.inputs.iter().find(|b| b.name == name)
    }

    /// Flattened primary inputs, buses in declaration order, LSB first.
    pub fn primary_inputs(&self) -> &[NetId] {
        &self.pi_nets
    }

    /// Flattened primary outputs. Index `i` is output bit position `i`.
    pub fn primary_outputs(&self) -> &[NetId] {
        &self.po_nets
    }

    /// Position of the most significant output bit.
    pub fn msb_position(&self) -> usize {
        self.po_nets.len() - 1
    }

    pub fn carry_in_of_bit(&self, bit: usize) -> Option<NetId> {
        self.carry_in.get(&bit).copied()
    }

    pub fn carry_annotations(&self) -> &BTreeMap<usize, NetId> {
        &self.carry_in
    }

    pub fn driver(&self, net: NetId) -> Driver {
        self.driver[net.index()].expect("validated netlist has no undriven nets")
    }

    /// Gates reading `net`, as (gate index, pin index).
    pub fn readers(&self, net: NetId) -> &[(u32, u8)] {
        &self.readers[net.index()]
    }

    pub fn is_primary_output(&self, net: NetId) -> bool {
        self.is_po[net.index()]
    }

    /// Gate indices in topological order.
    pub fn topo_order(&self) -> &[u32] {
        &self.topo
    }

    /// Number of fault sites: one output pin plus every input pin, per gate.
    pub fn pin_count(&self) -> usize {
        self.gates.iter().map(|g| g.inputs.len() + 1).sum()
    }
}
