//! Structural generators for the MAC datapath.
//!
//! Circuits are built over [`Sig`] values so constants (the Baugh-Wooley
//! correction ones, an absent carry-in) fold away instead of producing
//! constant-driven gates. Logic that ends up unobservable is pruned before
//! the netlist is assembled.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{
    bus_bit_name, GateKind, Netlist, NetlistError, RawAnnotation, RawBus, RawGate, RawNetlist,
    CARRY_IN_ROLE,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Sig {
    Zero,
    One,
    Net(usize),
}

enum NetOrigin {
    Input { bus: usize, bit: usize },
    Gate(usize),
}

struct Builder {
    origins: Vec<NetOrigin>,
    gates: Vec<(GateKind, Vec<usize>, usize)>,
    inputs: Vec<(String, usize)>,
    outputs: Vec<(String, Vec<Sig>)>,
    carry_in: Vec<(usize, Sig)>,
}

impl Builder {
    fn new() -> Self {
        Builder {
            origins: Vec::new(),
            gates: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            carry_in: Vec::new(),
        }
    }

    fn input_bus(&mut self, name: &str, width: usize) -> Vec<Sig> {
        let bus = self.inputs.len();
        self.inputs.push((name.into(), width));
        (0..width)
            .map(|bit| {
                self.origins.push(NetOrigin::Input { bus, bit });
                Sig::Net(self.origins.len() - 1)
            })
            .collect()
    }

    fn gate(&mut self, kind: GateKind, ins: &[Sig]) -> Sig {
        let nets = ins
            .iter()
            .map(|s| match s {
                Sig::Net(n) => *n,
                _ => unreachable!("constants are folded before gate creation"),
            })
            .collect();
        let out = self.origins.len();
        self.origins.push(NetOrigin::Gate(self.gates.len()));
        self.gates.push((kind, nets, out));
        Sig::Net(out)
    }

    fn not(&mut self, a: Sig) -> Sig {
        match a {
            Sig::Zero => Sig::One,
            Sig::One => Sig::Zero,
            n => self.gate(GateKind::Not, &[n]),
        }
    }

    fn xor(&mut self, a: Sig, b: Sig) -> Sig {
        match (a, b) {
            (Sig::Zero, x) | (x, Sig::Zero) => x,
            (Sig::One, x) | (x, Sig::One) => self.not(x),
            (x, y) if x == y => Sig::Zero,
            (x, y) => self.gate(GateKind::Xor, &[x, y]),
        }
    }

    fn and_n(&mut self, terms: &[Sig]) -> Sig {
        if terms.contains(&Sig::Zero) {
            return Sig::Zero;
        }
        let mut live: Vec<Sig> = Vec::new();
        for &t in terms {
            if t != Sig::One && !live.contains(&t) {
                live.push(t);
            }
        }
        match live.len() {
            0 => Sig::One,
            1 => live[0],
            _ => self.gate(GateKind::And, &live),
        }
    }

    fn or_n(&mut self, terms: &[Sig]) -> Sig {
        if terms.contains(&Sig::One) {
            return Sig::One;
        }
        let mut live: Vec<Sig> = Vec::new();
        for &t in terms {
            if t != Sig::Zero && !live.contains(&t) {
                live.push(t);
            }
        }
        match live.len() {
            0 => Sig::Zero,
            1 => live[0],
            _ => self.gate(GateKind::Or, &live),
        }
    }

    fn and(&mut self, a: Sig, b: Sig) -> Sig {
        self.and_n(&[a, b])
    }

    fn or(&mut self, a: Sig, b: Sig) -> Sig {
        self.or_n(&[a, b])
    }

    fn nand(&mut self, a: Sig, b: Sig) -> Sig {
        match (a, b) {
            (Sig::Net(_), Sig::Net(_)) if a != b => self.gate(GateKind::Nand, &[a, b]),
            _ => {
                let t = self.and(a, b);
                self.not(t)
            }
        }
    }

    /// Full adder from 2-input primitives: (sum, carry).
    fn full_add(&mut self, a: Sig, b: Sig, c: Sig) -> (Sig, Sig) {
        let t = self.xor(a, b);
        let s = self.xor(t, c);
        let g = self.and(a, b);
        let h = self.and(t, c);
        let co = self.or(g, h);
        (s, co)
    }

    fn output_bus(&mut self, name: &str, bits: Vec<Sig>) {
        self.outputs.push((name.into(), bits));
    }

    fn finish(self) -> Result<Netlist, NetlistError> {
        let n = self.origins.len();
        // Backward liveness from outputs.
        let mut live = vec![false; n];
        let mut stack: Vec<usize> = Vec::new();
        for (_, bits) in &self.outputs {
            for s in bits {
                match s {
                    Sig::Net(x) => stack.push(*x),
                    _ => {
                        return Err(NetlistError::InvalidParameter(
                            "generated output folded to a constant".into(),
                        ))
                    }
                }
            }
        }
        while let Some(x) = stack.pop() {
            if live[x] {
                continue;
            }
            live[x] = true;
            if let NetOrigin::Gate(g) = self.origins[x] {
                stack.extend(self.gates[g].1.iter().copied());
            }
        }

        let mut names: Vec<Option<String>> = (0..n)
            .map(|i| match self.origins[i] {
                NetOrigin::Input { bus, bit } => Some(bus_bit_name(&self.inputs[bus].0, bit)),
                NetOrigin::Gate(_) => None,
            })
            .collect();

        // Output bits take over the name of the gate net driving them; inputs
        // or nets already claimed by another output bit get a buffer.
        let mut gates: Vec<(GateKind, Vec<usize>, usize)> = self
            .gates
            .iter()
            .filter(|g| live[g.2])
            .cloned()
            .collect();
        let mut extra = n;
        let mut buffers: Vec<(usize, String)> = Vec::new();
        for (bus, bits) in &self.outputs {
            for (i, s) in bits.iter().enumerate() {
                let Sig::Net(x) = *s else { unreachable!() };
                let want = bus_bit_name(bus, i);
                if names[x].is_none() {
                    names[x] = Some(want);
                } else {
                    gates.push((GateKind::Buf, vec![x], extra));
                    buffers.push((extra, want));
                    extra += 1;
                }
            }
        }
        let mut internal = Vec::new();
        let mut counter = 0usize;
        for (i, nm) in names.iter_mut().enumerate() {
            if nm.is_none() && live[i] {
                let s = format!("n{}", counter);
                counter += 1;
                internal.push(s.clone());
                *nm = Some(s);
            }
        }
        let lookup = |x: usize| -> String {
            if x < n {
                names[x].clone().expect("live net is named")
            } else {
                buffers
                    .iter()
                    .find(|(id, _)| *id == x)
                    .map(|(_, s)| s.clone())
                    .unwrap()
            }
        };

        let raw = RawNetlist {
            inputs: self
                .inputs
                .iter()
                .map(|(name, width)| RawBus {
                    name: name.clone(),
                    width: *width,
                })
                .collect(),
            outputs: self
                .outputs
                .iter()
                .map(|(name, bits)| RawBus {
                    name: name.clone(),
                    width: bits.len(),
                })
                .collect(),
            nets: internal,
            gates: gates
                .iter()
                .enumerate()
                .map(|(id, (kind, ins, out))| RawGate {
                    id: id as u32,
                    kind: *kind,
                    output: lookup(*out),
                    inputs: ins.iter().map(|&x| lookup(x)).collect(),
                })
                .collect(),
            annotations: self
                .carry_in
                .iter()
                .filter_map(|&(bit, s)| match s {
                    Sig::Net(x) if live[x] => Some(RawAnnotation {
                        role: CARRY_IN_ROLE.into(),
                        bit,
                        net: lookup(x),
                    }),
                    _ => None,
                })
                .collect(),
        };
        Netlist::from_raw(&raw)
    }
}

/// Baugh-Wooley partial products reduced column by column to at most two
/// bits, then a final ripple adder. Returns the `2n` product bits and the
/// carry into each final-adder column.
fn baugh_wooley_product(bld: &mut Builder, a: &[Sig], b: &[Sig]) -> (Vec<Sig>, Vec<Sig>) {
    let n = a.len();
    let w = 2 * n;
    let mut cols: Vec<alloc::collections::VecDeque<Sig>> = vec![Default::default(); w];
    for j in 0..n {
        for i in 0..n {
            let neg = (i == n - 1) != (j == n - 1);
            let pp = if neg {
                bld.nand(a[i], b[j])
            } else {
                bld.and(a[i], b[j])
            };
            cols[i + j].push_back(pp);
        }
    }
    cols[n].push_back(Sig::One);
    cols[w - 1].push_back(Sig::One);

    for c in 0..w {
        while cols[c].len() > 2 {
            let x = cols[c].pop_front().unwrap();
            let y = cols[c].pop_front().unwrap();
            let z = cols[c].pop_front().unwrap();
            let (s, co) = bld.full_add(x, y, z);
            cols[c].push_back(s);
            if c + 1 < w {
                cols[c + 1].push_back(co);
            }
        }
    }

    let mut product = Vec::with_capacity(w);
    let mut carries = Vec::with_capacity(w);
    let mut carry = Sig::Zero;
    for col in cols.iter().take(w) {
        carries.push(carry);
        let x = col.front().copied().unwrap_or(Sig::Zero);
        let y = col.get(1).copied().unwrap_or(Sig::Zero);
        let (s, co) = bld.full_add(x, y, carry);
        product.push(s);
        carry = co;
    }
    (product, carries)
}

/// Carries into every position of an `n`-bit addition (index 0 is `cin`)
/// plus the carry out, using 4-bit lookahead blocks applied recursively.
fn lookahead(bld: &mut Builder, g: &[Sig], p: &[Sig], cin: Sig) -> (Vec<Sig>, Sig) {
    let n = g.len();
    if n <= 4 {
        let mut carries = Vec::with_capacity(n);
        for i in 0..=n {
            // c_i = g_{i-1} | p_{i-1} g_{i-2} | ... | p_{i-1}..p_0 cin
            let mut terms = Vec::new();
            for j in (0..i).rev() {
                let mut factors: Vec<Sig> = p[j + 1..i].to_vec();
                factors.push(g[j]);
                terms.push(bld.and_n(&factors));
            }
            let mut factors: Vec<Sig> = p[..i].to_vec();
            factors.push(cin);
            terms.push(bld.and_n(&factors));
            let c = bld.or_n(&terms);
            if i < n {
                carries.push(c);
            } else {
                return (carries, c);
            }
        }
        unreachable!()
    }

    let blocks: Vec<(usize, usize)> = (0..n)
        .step_by(4)
        .map(|lo| (lo, (lo + 4).min(n)))
        .collect();
    let mut bg = Vec::with_capacity(blocks.len());
    let mut bp = Vec::with_capacity(blocks.len());
    for &(lo, hi) in &blocks {
        let mut terms = Vec::new();
        for j in (lo..hi).rev() {
            let mut factors: Vec<Sig> = p[j + 1..hi].to_vec();
            factors.push(g[j]);
            terms.push(bld.and_n(&factors));
        }
        bg.push(bld.or_n(&terms));
        bp.push(bld.and_n(&p[lo..hi]));
    }
    let (block_cin, cout) = lookahead(bld, &bg, &bp, cin);
    let mut carries = Vec::with_capacity(n);
    for (k, &(lo, hi)) in blocks.iter().enumerate() {
        let (inner, _) = lookahead(bld, &g[lo..hi], &p[lo..hi], block_cin[k]);
        carries.extend(inner);
    }
    (carries, cout)
}

/// Returns (sum bits, carry into each bit, carry out).
fn cla_sum(bld: &mut Builder, a: &[Sig], b: &[Sig], cin: Sig) -> (Vec<Sig>, Vec<Sig>, Sig) {
    let p: Vec<Sig> = a.iter().zip(b).map(|(&x, &y)| bld.xor(x, y)).collect();
    let g: Vec<Sig> = a.iter().zip(b).map(|(&x, &y)| bld.and(x, y)).collect();
    let (carries, cout) = lookahead(bld, &g, &p, cin);
    let sum = p
        .iter()
        .zip(&carries)
        .map(|(&pi, &ci)| bld.xor(pi, ci))
        .collect();
    (sum, carries, cout)
}

fn check_width(width: usize) -> Result<(), NetlistError> {
    if width < 2 {
        Err(NetlistError::InvalidParameter(format!(
            "width must be at least 2, got {width}"
        )))
    } else if width > 64 {
        Err(NetlistError::InvalidParameter(format!(
            "width must be at most 64, got {width}"
        )))
    } else {
        Ok(())
    }
}

/// Signed `width x width` Baugh-Wooley multiplier with a `2*width`-bit
/// product `p`. The carry entering each final-adder column is annotated.
pub fn gen_baugh_wooley(width: usize) -> Result<Netlist, NetlistError> {
    check_width(width)?;
    let mut bld = Builder::new();
    let a = bld.input_bus("a", width);
    let b = bld.input_bus("b", width);
    let (product, carries) = baugh_wooley_product(&mut bld, &a, &b);
    bld.carry_in = carries.into_iter().enumerate().collect();
    bld.output_bus("p", product);
    bld.finish()
}

/// Carry-lookahead adder: `s = a + b` plus carry out `cout` (output bit
/// position `width`). The carry into every bit `1..=width` is annotated.
pub fn gen_cla_adder(width: usize) -> Result<Netlist, NetlistError> {
    check_width(width)?;
    let mut bld = Builder::new();
    let a = bld.input_bus("a", width);
    let b = bld.input_bus("b", width);
    let (sum, mut carries, cout) = cla_sum(&mut bld, &a, &b, Sig::Zero);
    carries.push(cout);
    bld.carry_in = carries.into_iter().enumerate().collect();
    bld.output_bus("s", sum);
    bld.output_bus("cout", vec![cout]);
    bld.finish()
}

/// Ripple-carry adder built from full adders. With `cut_after = Some(k)`
/// the carry out of bit `k` is dropped, so the low `k+1` bits no longer
/// feed the upper bits.
pub fn gen_ripple_adder(width: usize, cut_after: Option<usize>) -> Result<Netlist, NetlistError> {
    check_width(width)?;
    if let Some(k) = cut_after {
        if k + 1 >= width {
            return Err(NetlistError::InvalidParameter(format!(
                "cut position {k} must be below the MSB {}",
                width - 1
            )));
        }
    }
    let mut bld = Builder::new();
    let a = bld.input_bus("a", width);
    let b = bld.input_bus("b", width);
    let mut carry = Sig::Zero;
    let mut sum = Vec::with_capacity(width);
    for i in 0..width {
        bld.carry_in.push((i, carry));
        let (s, co) = bld.full_add(a[i], b[i], carry);
        sum.push(s);
        carry = if cut_after == Some(i) { Sig::Zero } else { co };
    }
    bld.output_bus("s", sum);
    bld.finish()
}

/// Signed int8 MAC: `y = a*b + acc` modulo 2^16. The 16-bit Baugh-Wooley
/// product feeds a 16-bit carry-lookahead accumulator adder whose carries
/// are annotated.
pub fn gen_mac_int8() -> Result<Netlist, NetlistError> {
    let mut bld = Builder::new();
    let a = bld.input_bus("a", 8);
    let b = bld.input_bus("b", 8);
    let acc = bld.input_bus("acc", 16);
    let (product, _) = baugh_wooley_product(&mut bld, &a, &b);
    let (sum, carries, _) = cla_sum(&mut bld, &product, &acc, Sig::Zero);
    bld.carry_in = carries.into_iter().enumerate().collect();
    bld.output_bus("y", sum);
    bld.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::BitVec;
    use crate::rng;
    use rand::Rng;

    fn pack_lanes(nl: &Netlist, operands: &[Vec<i64>]) -> Vec<u64> {
        // operands[lane][bus]
        let mut words = vec![0u64; nl.primary_inputs().len()];
        for (lane, ops) in operands.iter().enumerate() {
            let bits = nl.pack_inputs(ops);
            for (i, b) in bits.iter().enumerate() {
                if b {
                    words[i] |= 1 << lane;
                }
            }
        }
        words
    }

    fn outputs(nl: &Netlist, values: &[u64], lane: usize) -> u64 {
        let words: Vec<u64> = nl
            .primary_outputs()
            .iter()
            .map(|n| values[n.index()])
            .collect();
        crate::netlist::sim::lane_value(&words, lane)
    }

    #[test]
    fn baugh_wooley_exhaustive_8bit() {
        let nl = gen_baugh_wooley(8).unwrap();
        let mut values = Vec::new();
        let all: Vec<Vec<i64>> = (-128..128)
            .flat_map(|a| (-128..128).map(move |b| vec![a, b]))
            .collect();
        for chunk in all.chunks(64) {
            nl.simulate(&pack_lanes(&nl, chunk), &mut values);
            for (lane, ops) in chunk.iter().enumerate() {
                let got = BitVec::from_u64(16, outputs(&nl, &values, lane)).to_i64();
                assert_eq!(got, ops[0] * ops[1], "{} * {}", ops[0], ops[1]);
            }
        }
    }

    #[test]
    fn baugh_wooley_small_examples() {
        let nl = gen_baugh_wooley(8).unwrap();
        let ev = |a, b| nl.eval_flat(&nl.pack_inputs(&[a, b])).to_i64();
        assert_eq!(ev(3, 5), 15);
        assert_eq!(ev(-128, -128), 16384);
        assert_eq!(ev(-128, 127), -16256);
    }

    #[test]
    fn baugh_wooley_other_widths_exhaustive() {
        for w in [2usize, 3, 4, 5] {
            let nl = gen_baugh_wooley(w).unwrap();
            let lo = -(1i64 << (w - 1));
            let hi = 1i64 << (w - 1);
            for a in lo..hi {
                for b in lo..hi {
                    let got = nl.eval_flat(&nl.pack_inputs(&[a, b])).to_i64();
                    assert_eq!(got, a * b, "width {w}: {a} * {b}");
                }
            }
        }
    }

    #[test]
    fn width_below_two_is_rejected() {
        assert!(matches!(
            gen_baugh_wooley(1),
            Err(NetlistError::InvalidParameter(_))
        ));
        assert!(matches!(gen_cla_adder(0), Err(NetlistError::InvalidParameter(_))));
    }

    #[test]
    fn cla_examples() {
        let nl = gen_cla_adder(16).unwrap();
        let ev = |a: i64, b: i64| nl.split_outputs(&nl.eval_flat(&nl.pack_inputs(&[a, b])));
        let o = ev(0, 0);
        assert_eq!((o["s"].to_u64(), o["cout"].to_u64()), (0, 0));
        let o = ev(0xffff, 1);
        assert_eq!((o["s"].to_u64(), o["cout"].to_u64()), (0, 1));
    }

    #[test]
    fn cla_random_pairs() {
        let nl = gen_cla_adder(16).unwrap();
        let mut r = rng::stream(7, &[]);
        let mut values = Vec::new();
        for _ in 0..(1 << 14) / 64 {
            let ops: Vec<Vec<i64>> = (0..64)
                .map(|_| vec![r.gen_range(0..1 << 16), r.gen_range(0..1 << 16)])
                .collect();
            nl.simulate(&pack_lanes(&nl, &ops), &mut values);
            for (lane, o) in ops.iter().enumerate() {
                assert_eq!(outputs(&nl, &values, lane) as i64, o[0] + o[1]);
            }
        }
    }

    #[test]
    fn cla_odd_widths_exhaustive() {
        for w in [2usize, 3, 5, 6, 7] {
            let nl = gen_cla_adder(w).unwrap();
            for a in 0..1i64 << w {
                for b in 0..1i64 << w {
                    let got = nl.eval_flat(&nl.pack_inputs(&[a, b])).to_u64() as i64;
                    assert_eq!(got, a + b, "width {w}");
                }
            }
        }
    }

    #[test]
    fn cla_wide_random() {
        // 20 bits exercises two lookahead levels with a partial top block.
        let nl = gen_cla_adder(20).unwrap();
        let mut r = rng::stream(3, &[]);
        for _ in 0..2000 {
            let a = r.gen_range(0..1i64 << 20);
            let b = r.gen_range(0..1i64 << 20);
            assert_eq!(nl.eval_flat(&nl.pack_inputs(&[a, b])).to_u64() as i64, a + b);
        }
    }

    #[test]
    fn cla_annotates_every_carry() {
        let nl = gen_cla_adder(16).unwrap();
        let bits: Vec<usize> = nl.carry_annotations().keys().copied().collect();
        assert_eq!(bits, (1..=16).collect::<Vec<_>>());
    }

    #[test]
    fn ripple_adder_and_cut() {
        let nl = gen_ripple_adder(8, None).unwrap();
        for (a, b) in [(0, 0), (255, 1), (100, 27), (200, 100)] {
            assert_eq!(nl.eval_flat(&nl.pack_inputs(&[a, b])).to_u64() as i64, (a + b) & 0xff);
        }
        let cut = gen_ripple_adder(8, Some(1)).unwrap();
        // 3 + 1 carries out of bit 1, which the cut drops.
        assert_eq!(cut.eval_flat(&cut.pack_inputs(&[3, 1])).to_u64(), 0);
        assert_eq!(cut.eval_flat(&cut.pack_inputs(&[4, 8])).to_u64(), 12);
    }

    #[test]
    fn mac_examples() {
        let nl = gen_mac_int8().unwrap();
        let ev = |a, b, c| nl.eval_flat(&nl.pack_inputs(&[a, b, c])).to_i64();
        assert_eq!(ev(3, 5, 10), 25);
        assert_eq!(ev(-128, -128, 0), 16384);
        assert_eq!(ev(-1, 1, 0), -1);
        assert_eq!(ev(127, 127, 32767), ((127 * 127 + 32767) as i16 as i64).wrapping_add(0));
        let mut r = rng::stream(11, &[]);
        for _ in 0..200 {
            let x = r.gen_range(-128..128);
            let c = r.gen_range(-32768..32768);
            assert_eq!(ev(0, x, c), c);
        }
    }

    #[test]
    fn only_primitive_kinds_and_stable_counts() {
        let mac = gen_mac_int8().unwrap();
        assert!(mac.gates().iter().all(|g| GateKind::ALL.contains(&g.kind)));
        let bw = gen_baugh_wooley(8).unwrap();
        let cla = gen_cla_adder(16).unwrap();
        // Regression pins for the current decomposition.
        assert_eq!(
            (bw.gates().len(), cla.gates().len(), mac.gates().len()),
            (BW8_GATES, CLA16_GATES, MAC_GATES)
        );
        assert_eq!(mac.pin_count() * 2, MAC_FAULT_SITES);
    }

    const BW8_GATES: usize = 323;
    const CLA16_GATES: usize = 107;
    const MAC_GATES: usize = 420;
    const MAC_FAULT_SITES: usize = 2604;
}
