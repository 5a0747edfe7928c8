use alloc::vec;
use alloc::vec::Vec;

use crate::bits::BitVec;
use crate::cones::fanout_gates;
use crate::netlist::{Injection, Netlist, Pin};
use crate::par;

/// Packs patterns into blocks of 64, one word per primary input.
pub fn pack_patterns(netlist: &Netlist, patterns: &[BitVec]) -> Vec<Vec<u64>> {
    let width = netlist.primary_inputs().len();
    patterns
        .chunks(64)
        .map(|chunk| {
            let mut words = vec![0u64; width];
            for (lane, p) in chunk.iter().enumerate() {
                assert_eq!(p.width(), width, "pattern width mismatch");
                for (i, b) in p.iter().enumerate() {
                    if b {
                        words[i] |= 1 << lane;
                    }
                }
            }
            words
        })
        .collect()
}

fn lane_mask(n: usize) -> u64 {
    if n >= 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

/// Fault simulator that re-evaluates only the fan-out cone of the faulted
/// gate on top of the fault-free values.
pub struct FaultSim<'a> {
    netlist: &'a Netlist,
    cones: Vec<Vec<usize>>,
    observed: Vec<Vec<usize>>,
}

/// Fault-free net values for one block of patterns.
pub struct GoodBlock {
    pub values: Vec<u64>,
    pub mask: u64,
}

impl<'a> FaultSim<'a> {
    pub fn new(netlist: &'a Netlist) -> Self {
        let n = netlist.gates().len();
        let cones: Vec<Vec<usize>> = par::map_range(n, |g| fanout_gates(netlist, g));
        let observed = cones
            .iter()
            .map(|c| {
                let mut nets: Vec<usize> = c
                    .iter()
                    .map(|&g| netlist.gate(g).output)
                    .filter(|&o| netlist.is_primary_output(o))
                    .map(|o| o.index())
                    .collect();
                nets.sort_unstable();
                nets
            })
            .collect();
        FaultSim {
            netlist,
            cones,
            observed,
        }
    }

    pub fn netlist(&self) -> &Netlist {
        self.netlist
    }

    pub fn good_blocks(&self, patterns: &[BitVec]) -> Vec<GoodBlock> {
        let packed = pack_patterns(self.netlist, patterns);
        packed
            .iter()
            .enumerate()
            .map(|(b, words)| {
                let mut values = Vec::new();
                self.netlist.simulate(words, &mut values);
                GoodBlock {
                    values,
                    mask: lane_mask(patterns.len() - 64 * b),
                }
            })
            .collect()
    }

    /// Lanes of `good` whose outputs change under `fault`.
    pub fn detect_word(&self, good: &GoodBlock, fault: &Injection, scratch: &mut Vec<u64>) -> u64 {
        scratch.clear();
        scratch.extend_from_slice(&good.values);
        let cone = &self.cones[fault.gate];
        let stuck = if fault.value { u64::MAX } else { 0 };
        let mut ins: Vec<u64> = Vec::new();
        for &gi in cone {
            let g = self.netlist.gate(gi);
            let v = if gi == fault.gate {
                match fault.pin {
                    Pin::Output => stuck,
                    Pin::Input(p) => {
                        ins.clear();
                        ins.extend(g.inputs.iter().map(|n| scratch[n.index()]));
                        ins[p as usize] = stuck;
                        g.kind.eval_words(ins.iter().copied())
                    }
                }
            } else {
                g.kind.eval_words(g.inputs.iter().map(|n| scratch[n.index()]))
            };
            scratch[g.output.index()] = v;
        }
        let mut diff = 0u64;
        for &o in &self.observed[fault.gate] {
            diff |= scratch[o] ^ good.values[o];
        }
        diff & good.mask
    }

    /// Per fault, one detection word per block.
    pub fn detection_words(&self, blocks: &[GoodBlock], faults: &[Injection]) -> Vec<Vec<u64>> {
        par::map(faults, |f| {
            let mut scratch = Vec::new();
            blocks
                .iter()
                .map(|b| self.detect_word(b, f, &mut scratch))
                .collect()
        })
    }

    /// Per fault, the index of the first detecting pattern.
    pub fn first_detection(&self, patterns: &[BitVec], faults: &[Injection]) -> Vec<Option<usize>> {
        let blocks = self.good_blocks(patterns);
        par::map(faults, |f| {
            let mut scratch = Vec::new();
            for (bi, b) in blocks.iter().enumerate() {
                let w = self.detect_word(b, f, &mut scratch);
                if w != 0 {
                    return Some(64 * bi + w.trailing_zeros() as usize);
                }
            }
            None
        })
    }
}

/// Per pattern, indices of the faults it detects.
pub fn detects_by_pattern(netlist: &Netlist, patterns: &[BitVec], faults: &[Injection]) -> Vec<Vec<u32>> {
    let sim = FaultSim::new(netlist);
    let blocks = sim.good_blocks(patterns);
    let words = sim.detection_words(&blocks, faults);
    let mut out = vec![Vec::new(); patterns.len()];
    for (fi, ws) in words.iter().enumerate() {
        for (bi, &w) in ws.iter().enumerate() {
            let mut w = w;
            while w != 0 {
                let lane = w.trailing_zeros() as usize;
                out[64 * bi + lane].push(fi as u32);
                w &= w - 1;
            }
        }
    }
    out
}

/// One fault, one pattern, full re-evaluation.
pub fn serial_detects(netlist: &Netlist, pattern: &BitVec, fault: &Injection) -> bool {
    netlist.eval_flat(pattern) != netlist.eval_flat_with(pattern, core::slice::from_ref(fault))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atpg::all_faults;
    use crate::netlist::{gen_baugh_wooley, gen_mac_int8, parse_netlist};
    use crate::rng;
    use rand::Rng;

    #[test]
    fn all_zero_pattern_detects_output_sa1() {
        let nl = parse_netlist("input a 2\noutput y 1\ngate 0 AND y[0] a[0] a[1]\n").unwrap();
        let inj = Injection {
            gate: 0,
            pin: Pin::Output,
            value: true,
        };
        let d = detects_by_pattern(&nl, &[BitVec::zeros(2)], &[inj]);
        assert_eq!(d, vec![vec![0]]);
    }

    #[test]
    fn parallel_matches_serial_on_mac() {
        let nl = gen_mac_int8().unwrap();
        let faults = all_faults(&nl).injections(&nl).unwrap();
        let mut r = rng::stream(5, &[]);
        let patterns: Vec<BitVec> = (0..100)
            .map(|_| {
                let bits: Vec<bool> = (0..32).map(|_| r.gen()).collect();
                BitVec::from_bits(&bits)
            })
            .collect();
        let par_d = detects_by_pattern(&nl, &patterns, &faults);
        for (pi, p) in patterns.iter().enumerate() {
            for (fi, f) in faults.iter().enumerate().step_by(7) {
                assert_eq!(
                    par_d[pi].contains(&(fi as u32)),
                    serial_detects(&nl, p, f),
                    "pattern {pi}, fault {fi}"
                );
            }
        }
    }

    #[test]
    fn parallel_matches_serial_on_small_multiplier() {
        let nl = gen_baugh_wooley(3).unwrap();
        let faults = all_faults(&nl).injections(&nl).unwrap();
        let patterns: Vec<BitVec> = (0..64).map(|v| BitVec::from_u64(6, v)).collect();
        let par_d = detects_by_pattern(&nl, &patterns, &faults);
        for (pi, p) in patterns.iter().enumerate() {
            for (fi, f) in faults.iter().enumerate() {
                assert_eq!(par_d[pi].contains(&(fi as u32)), serial_detects(&nl, p, f));
            }
        }
    }
}
