//! PODEM test generation over a good/faulty pair of three-valued
//! simulations, guided by SCOAP testability measures.

use alloc::vec;
use alloc::vec::Vec;

use crate::netlist::{Driver, GateKind, Injection, NetId, Netlist, Pin};

const X: u8 = 2;

fn eval3(kind: GateKind, ins: impl Iterator<Item = u8>) -> u8 {
    let (base, inv) = match kind {
        GateKind::And => (GateKind::And, false),
        GateKind::Nand => (GateKind::And, true),
        GateKind::Or => (GateKind::Or, false),
        GateKind::Nor => (GateKind::Or, true),
        GateKind::Xor => (GateKind::Xor, false),
        GateKind::Xnor => (GateKind::Xor, true),
        GateKind::Buf => (GateKind::Buf, false),
        GateKind::Not => (GateKind::Buf, true),
    };
    let v = match base {
        GateKind::And | GateKind::Or => {
            let c = (base == GateKind::Or) as u8;
            let mut unknown = false;
            let mut hit = false;
            for i in ins {
                if i == c {
                    hit = true;
                } else if i == X {
                    unknown = true;
                }
            }
            if hit {
                c
            } else if unknown {
                X
            } else {
                1 - c
            }
        }
        GateKind::Xor => {
            let mut acc = 0u8;
            for i in ins {
                if i == X {
                    return X;
                }
                acc ^= i;
            }
            acc
        }
        _ => {
            let mut it = ins;
            it.next().unwrap_or(X)
        }
    };
    if v == X || !inv {
        v
    } else {
        1 - v
    }
}

/// SCOAP combinational controllability and observability per net.
#[derive(Clone, Debug)]
pub struct Scoap {
    pub cc0: Vec<u32>,
    pub cc1: Vec<u32>,
    pub co: Vec<u32>,
}

impl Scoap {
    pub fn compute(netlist: &Netlist) -> Scoap {
        let n = netlist.num_nets();
        let inf = u32::MAX / 4;
        let mut cc0 = vec![inf; n];
        let mut cc1 = vec![inf; n];
        for p in netlist.primary_inputs() {
            cc0[p.index()] = 1;
            cc1[p.index()] = 1;
        }
        for &gi in netlist.topo_order() {
            let g = netlist.gate(gi as usize);
            let i0 = g.inputs.iter().map(|x| cc0[x.index()]);
            let i1 = g.inputs.iter().map(|x| cc1[x.index()]);
            let (z, o) = match g.kind {
                GateKind::And | GateKind::Nand => (i0.min().unwrap(), i1.fold(0u32, |a, b| a.saturating_add(b))),
                GateKind::Or | GateKind::Nor => (i0.fold(0u32, |a, b| a.saturating_add(b)), i1.min().unwrap()),
                GateKind::Xor | GateKind::Xnor => {
                    let mut z = cc0[g.inputs[0].index()];
                    let mut o = cc1[g.inputs[0].index()];
                    for x in &g.inputs[1..] {
                        let (b0, b1) = (cc0[x.index()], cc1[x.index()]);
                        let nz = (z.saturating_add(b0)).min(o.saturating_add(b1));
                        let no = (z.saturating_add(b1)).min(o.saturating_add(b0));
                        z = nz;
                        o = no;
                    }
                    (z, o)
                }
                GateKind::Buf | GateKind::Not => (cc0[g.inputs[0].index()], cc1[g.inputs[0].index()]),
            };
            let (z, o) = if g.kind.inverting() { (o, z) } else { (z, o) };
            cc0[g.output.index()] = z.saturating_add(1).min(inf);
            cc1[g.output.index()] = o.saturating_add(1).min(inf);
        }
        let mut co = vec![inf; n];
        for p in netlist.primary_outputs() {
            co[p.index()] = 0;
        }
        for &gi in netlist.topo_order().iter().rev() {
            let g = netlist.gate(gi as usize);
            let out = co[g.output.index()];
            for (pi, x) in g.inputs.iter().enumerate() {
                let side: u32 = g
                    .inputs
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != pi)
                    .map(|(_, y)| match g.kind.controlling_value() {
                        Some(c) => {
                            if c {
                                cc0[y.index()]
                            } else {
                                cc1[y.index()]
                            }
                        }
                        None => cc0[y.index()].min(cc1[y.index()]),
                    })
                    .fold(0u32, |a, b| a.saturating_add(b));
                let v = out.saturating_add(side).saturating_add(1).min(inf);
                if v < co[x.index()] {
                    co[x.index()] = v;
                }
            }
        }
        Scoap { cc0, cc1, co }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PodemOutcome {
    /// Primary-input cube; `None` entries are don't-cares.
    Test(Vec<Option<bool>>),
    /// The search space was exhausted: the fault is undetectable.
    Redundant,
    /// Backtrack limit exceeded.
    Aborted,
}

enum Step {
    Detected,
    Objective(NetId, bool),
    Conflict,
}

struct Search<'a> {
    nl: &'a Netlist,
    sc: &'a Scoap,
    fault: Injection,
    site: NetId,
    assign: Vec<u8>,
    good: Vec<u8>,
    bad: Vec<u8>,
    xpath: Vec<bool>,
}

impl<'a> Search<'a> {
    fn imply(&mut self) {
        for (i, p) in self.nl.primary_inputs().iter().enumerate() {
            self.good[p.index()] = self.assign[i];
            self.bad[p.index()] = self.assign[i];
        }
        let stuck = self.fault.value as u8;
        for &gi in self.nl.topo_order() {
            let gi = gi as usize;
            let g = self.nl.gate(gi);
            let gv = eval3(g.kind, g.inputs.iter().map(|n| self.good[n.index()]));
            let bv = if gi == self.fault.gate {
                match self.fault.pin {
                    Pin::Output => stuck,
                    Pin::Input(p) => eval3(
                        g.kind,
                        g.inputs.iter().enumerate().map(|(j, n)| {
                            if j == p as usize {
                                stuck
                            } else {
                                self.bad[n.index()]
                            }
                        }),
                    ),
                }
            } else {
                eval3(g.kind, g.inputs.iter().map(|n| self.bad[n.index()]))
            };
            self.good[g.output.index()] = gv;
            self.bad[g.output.index()] = bv;
        }
    }

    fn is_d(&self, gi: usize, pin: usize) -> bool {
        let g = self.nl.gate(gi);
        let n = g.inputs[pin].index();
        let gv = self.good[n];
        let bv = if gi == self.fault.gate && self.fault.pin == Pin::Input(pin as u8) {
            self.fault.value as u8
        } else {
            self.bad[n]
        };
        gv != X && bv != X && gv != bv
    }

    fn step(&mut self) -> Step {
        for p in self.nl.primary_outputs() {
            let (g, b) = (self.good[p.index()], self.bad[p.index()]);
            if g != X && b != X && g != b {
                return Step::Detected;
            }
        }
        let want = !self.fault.value;
        match self.good[self.site.index()] {
            X => return Step::Objective(self.site, want),
            v if v != want as u8 => return Step::Conflict,
            _ => {}
        }

        // Nets that can still carry a difference to an output.
        for &gi in self.nl.topo_order().iter().rev() {
            let o = self.nl.gate(gi as usize).output;
            let open = self.good[o.index()] == X || self.bad[o.index()] == X;
            self.xpath[o.index()] = open
                && (self.nl.is_primary_output(o)
                    || self
                        .nl
                        .readers(o)
                        .iter()
                        .any(|&(r, _)| self.xpath[self.nl.gate(r as usize).output.index()]));
        }

        let mut best: Option<(u32, usize)> = None;
        for &gi in self.nl.topo_order() {
            let gi = gi as usize;
            let g = self.nl.gate(gi);
            if !self.xpath[g.output.index()] {
                continue;
            }
            if (0..g.inputs.len()).any(|p| self.is_d(gi, p)) {
                let cost = self.sc.co[g.output.index()];
                if best.is_none_or(|(c, _)| cost < c) {
                    best = Some((cost, gi));
                }
            }
        }
        let Some((_, gi)) = best else {
            return Step::Conflict;
        };
        let g = self.nl.gate(gi);
        let nc = g.kind.controlling_value().map(|c| !c).unwrap_or(false);
        let mut pick: Option<(u32, NetId)> = None;
        for n in &g.inputs {
            if self.good[n.index()] == X {
                let cost = if nc { self.sc.cc1[n.index()] } else { self.sc.cc0[n.index()] };
                if pick.is_none_or(|(c, _)| cost < c) {
                    pick = Some((cost, *n));
                }
            }
        }
        match pick {
            Some((_, n)) => Step::Objective(n, nc),
            None => Step::Conflict,
        }
    }

    fn backtrace(&self, mut net: NetId, mut val: bool) -> (usize, bool) {
        loop {
            match self.nl.driver(net) {
                Driver::Input(i) => return (i as usize, val),
                Driver::Gate(gi) => {
                    let g = self.nl.gate(gi as usize);
                    let target = val ^ g.kind.inverting();
                    let xs = g.inputs.iter().filter(|n| self.good[n.index()] == X);
                    let cost = |n: &NetId, v: bool| {
                        if v {
                            self.sc.cc1[n.index()]
                        } else {
                            self.sc.cc0[n.index()]
                        }
                    };
                    let (next, nv) = match g.kind.controlling_value() {
                        Some(c) => {
                            let n = if target == c {
                                xs.min_by_key(|n| cost(n, target))
                            } else {
                                xs.max_by_key(|n| cost(n, target))
                            };
                            (n.copied(), target)
                        }
                        None if g.kind.is_unary() => (xs.copied().next(), target),
                        None => {
                            let n = xs.min_by_key(|n| cost(n, false).min(cost(n, true))).copied();
                            let parity = g
                                .inputs
                                .iter()
                                .filter(|m| Some(**m) != n && self.good[m.index()] == 1)
                                .count()
                                % 2
                                == 1;
                            (n, target ^ parity)
                        }
                    };
                    net = next.expect("objective net has an unassigned input");
                    val = nv;
                }
            }
        }
    }
}

/// Search for a test for one fault.
pub fn podem(netlist: &Netlist, scoap: &Scoap, fault: Injection, backtrack_limit: usize) -> PodemOutcome {
    let g = netlist.gate(fault.gate);
    let site = match fault.pin {
        Pin::Output => g.output,
        Pin::Input(p) => g.inputs[p as usize],
    };
    let n = netlist.num_nets();
    let mut s = Search {
        nl: netlist,
        sc: scoap,
        fault,
        site,
        assign: vec![X; netlist.primary_inputs().len()],
        good: vec![X; n],
        bad: vec![X; n],
        xpath: vec![false; n],
    };
    let mut stack: Vec<(usize, bool, bool)> = Vec::new();
    let mut backtracks = 0usize;
    loop {
        s.imply();
        match s.step() {
            Step::Detected => {
                return PodemOutcome::Test(
                    s.assign
                        .iter()
                        .map(|&v| if v == X { None } else { Some(v == 1) })
                        .collect(),
                )
            }
            Step::Objective(net, val) => {
                let (pi, v) = s.backtrace(net, val);
                s.assign[pi] = v as u8;
                stack.push((pi, v, false));
            }
            Step::Conflict => loop {
                let Some((pi, v, flipped)) = stack.pop() else {
                    return PodemOutcome::Redundant;
                };
                if flipped {
                    s.assign[pi] = X;
                    continue;
                }
                backtracks += 1;
                if backtracks > backtrack_limit {
                    return PodemOutcome::Aborted;
                }
                s.assign[pi] = (!v) as u8;
                stack.push((pi, !v, true));
                break;
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atpg::{all_faults, fsim::serial_detects};
    use crate::bits::BitVec;
    use crate::netlist::{gen_baugh_wooley, parse_netlist};

    fn fill(cube: &[Option<bool>], v: bool) -> BitVec {
        BitVec::from_bits(&cube.iter().map(|b| b.unwrap_or(v)).collect::<Vec<_>>())
    }

    #[test]
    fn three_valued_tables() {
        assert_eq!(eval3(GateKind::And, [0, X].into_iter()), 0);
        assert_eq!(eval3(GateKind::And, [1, X].into_iter()), X);
        assert_eq!(eval3(GateKind::Nor, [1, X].into_iter()), 0);
        assert_eq!(eval3(GateKind::Xnor, [1, 1].into_iter()), 1);
        assert_eq!(eval3(GateKind::Not, [X].into_iter()), X);
    }

    #[test]
    fn redundant_fault_is_proven() {
        // y = a | (a & b): the AND output SA0 is undetectable.
        let nl = parse_netlist("input a 2\noutput y 1\nnet t\ngate 0 AND t a[0] a[1]\ngate 1 OR y[0] a[0] t\n")
            .unwrap();
        let sc = Scoap::compute(&nl);
        let f = Injection {
            gate: 0,
            pin: Pin::Output,
            value: false,
        };
        assert_eq!(podem(&nl, &sc, f, 100), PodemOutcome::Redundant);
    }

    #[test]
    fn podem_agrees_with_exhaustive_detectability() {
        let nl = gen_baugh_wooley(4).unwrap();
        let sc = Scoap::compute(&nl);
        let all: Vec<BitVec> = (0..256).map(|v| BitVec::from_u64(8, v)).collect();
        for f in all_faults(&nl).injections(&nl).unwrap() {
            let detectable = all.iter().any(|p| serial_detects(&nl, p, &f));
            match podem(&nl, &sc, f, 10_000) {
                PodemOutcome::Test(cube) => {
                    assert!(detectable);
                    assert!(serial_detects(&nl, &fill(&cube, false), &f));
                    assert!(serial_detects(&nl, &fill(&cube, true), &f));
                }
                PodemOutcome::Redundant => assert!(!detectable, "{f:?}"),
                PodemOutcome::Aborted => panic!("aborted on a 4-bit multiplier"),
            }
        }
    }
}
