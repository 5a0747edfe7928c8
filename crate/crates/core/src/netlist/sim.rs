//! Bit-parallel evaluation. Every net carries one `u64` word, so one pass
//! evaluates 64 input patterns.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{Netlist, NetlistError, Pin};
use crate::bits::BitVec;

/// A stuck value forced onto one gate pin.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Injection {
    /// Gate index (not id).
    pub gate: usize,
    pub pin: Pin,
    pub value: bool,
}

#[inline]
fn word(b: bool) -> u64 {
    if b {
        u64::MAX
    } else {
        0
    }
}

impl Netlist {
    /// Evaluate with one word per primary input. `values` is resized to one
    /// word per net.
    pub fn simulate(&self, pi_words: &[u64], values: &mut Vec<u64>) {
        self.load_inputs(pi_words, values);
        for &gi in self.topo_order() {
            let g = &self.gates[gi as usize];
            let v = g.kind.eval_words(g.inputs.iter().map(|n| values[n.index()]));
            values[g.output.index()] = v;
        }
    }

    /// Like [`Netlist::simulate`], with stuck-at values forced on gate pins.
    pub fn simulate_with(&self, pi_words: &[u64], faults: &[Injection], values: &mut Vec<u64>) {
        if faults.is_empty() {
            return self.simulate(pi_words, values);
        }
        let mut by_gate: BTreeMap<usize, Vec<Injection>> = BTreeMap::new();
        for f in faults {
            by_gate.entry(f.gate).or_default().push(*f);
        }
        self.load_inputs(pi_words, values);
        let mut scratch: Vec<u64> = Vec::new();
        for &gi in self.topo_order() {
            let gi = gi as usize;
            let g = &self.gates[gi];
            let v = match by_gate.get(&gi) {
                None => g.kind.eval_words(g.inputs.iter().map(|n| values[n.index()])),
                Some(inj) => {
                    scratch.clear();
                    scratch.extend(g.inputs.iter().map(|n| values[n.index()]));
                    let mut out_force = None;
                    for f in inj {
                        match f.pin {
                            Pin::Input(p) => scratch[p as usize] = word(f.value),
                            Pin::Output => out_force = Some(word(f.value)),
                        }
                    }
                    out_force.unwrap_or_else(|| g.kind.eval_words(scratch.iter().copied()))
                }
            };
            values[g.output.index()] = v;
        }
    }

    fn load_inputs(&self, pi_words: &[u64], values: &mut Vec<u64>) {
        assert_eq!(pi_words.len(), self.pi_nets.len());
        values.clear();
        values.resize(self.num_nets(), 0);
        for (&net, &w) in self.pi_nets.iter().zip(pi_words) {
            values[net.index()] = w;
        }
    }

    /// Flattened primary-input bits (buses concatenated in declaration
    /// order) to flattened output bits, one pattern.
    pub fn eval_flat(&self, inputs: &BitVec) -> BitVec {
        self.eval_flat_with(inputs, &[])
    }

    pub fn eval_flat_with(&self, inputs: &BitVec, faults: &[Injection]) -> BitVec {
        assert_eq!(inputs.width(), self.pi_nets.len());
        let words: Vec<u64> = inputs.iter().map(word).collect();
        let mut values = Vec::new();
        self.simulate_with(&words, faults, &mut values);
        let bits: Vec<bool> = self
            .po_nets
            .iter()
            .map(|n| values[n.index()] & 1 == 1)
            .collect();
        BitVec::from_bits(&bits)
    }

    /// Evaluate one input assignment given per bus.
    pub fn eval(
        &self,
        inputs: &BTreeMap<String, BitVec>,
    ) -> Result<BTreeMap<String, BitVec>, NetlistError> {
        self.eval_with(inputs, &[])
    }

    pub fn eval_with(
        &self,
        inputs: &BTreeMap<String, BitVec>,
        faults: &[Injection],
    ) -> Result<BTreeMap<String, BitVec>, NetlistError> {
        let flat = self.flatten_inputs(inputs)?;
        let out = self.eval_flat_with(&flat, faults);
        Ok(self.split_outputs(&out))
    }

    pub fn flatten_inputs(&self, inputs: &BTreeMap<String, BitVec>) -> Result<BitVec, NetlistError> {
        let mut bits = Vec::with_capacity(self.pi_nets.len());
        for bus in &self.inputs {
            let v = inputs.get(&bus.name).ok_or_else(|| NetlistError::MissingInput {
                bus: bus.name.clone(),
            })?;
            if v.width() != bus.width() {
                return Err(NetlistError::InputWidth {
                    bus: bus.name.clone(),
                    expected: bus.width(),
                    got: v.width(),
                });
            }
            bits.extend(v.iter());
        }
        Ok(BitVec::from_bits(&bits))
    }

    pub fn split_outputs(&self, flat: &BitVec) -> BTreeMap<String, BitVec> {
        let mut out = BTreeMap::new();
        let mut lo = 0;
        for bus in &self.outputs {
            out.insert(bus.name.clone(), flat.slice(lo, bus.width()));
            lo += bus.width();
        }
        out
    }

    /// Pack integer operands (one per input bus, two's complement truncated
    /// to the bus width) into a flattened input vector.
    pub fn pack_inputs(&self, operands: &[i64]) -> BitVec {
        assert_eq!(operands.len(), self.inputs.len());
        let mut bits = vec![false; self.pi_nets.len()];
        let mut lo = 0;
        for (bus, &v) in self.inputs.iter().zip(operands) {
            for (i, bit) in bits[lo..lo + bus.width()].iter_mut().enumerate() {
                *bit = if i < 64 { (v >> i) & 1 == 1 } else { v < 0 };
            }
            lo += bus.width();
        }
        BitVec::from_bits(&bits)
    }
}

/// Unpack lane `lane` of per-output words into an integer (LSB first).
#[cfg(test)]
pub(crate) fn lane_value(words: &[u64], lane: usize) -> u64 {
    words
        .iter()
        .enumerate()
        .fold(0u64, |acc, (i, w)| acc | (((w >> lane) & 1) << i))
}
