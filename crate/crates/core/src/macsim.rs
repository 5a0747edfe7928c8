//! Faulty MAC evaluation, worst-case error search, and the error models the
//! array simulator applies at faulty PEs.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::atpg::{FaultError, FaultList, FaultSite};
use crate::bits::BitVec;
use crate::cones::{fanout_gates, input_support, observed_outputs};
use crate::netlist::{Injection, Netlist, NetlistError};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum MacsimError {
    #[error(transparent)]
    Fault(#[from] FaultError),
    #[error(transparent)]
    Netlist(#[from] NetlistError),
    #[error("fault {site} observes {bits} input bits; the table limit is {limit}")]
    SupportTooWide { site: FaultSite, bits: usize, limit: usize },
    #[error("fault list is empty")]
    NoFaults,
}

/// Evaluate with every listed fault injected at once.
pub fn inject_eval(
    netlist: &Netlist,
    faults: &[FaultSite],
    inputs: &BTreeMap<String, BitVec>,
) -> Result<BTreeMap<String, BitVec>, MacsimError> {
    let inj = faults
        .iter()
        .map(|f| f.injection(netlist))
        .collect::<Result<Vec<Injection>, _>>()?;
    Ok(netlist.eval_with(inputs, &inj)?)
}

/// Flattened outputs read as one two's-complement integer.
pub fn signed_output(bits: &BitVec) -> i64 {
    bits.to_i64()
}

/// Signed weight of each flattened output bit.
fn output_weights(netlist: &Netlist) -> Vec<i64> {
    let n = netlist.primary_outputs().len();
    (0..n)
        .map(|i| if i + 1 == n { -(1i64 << i) } else { 1i64 << i })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaxErrorOptions {
    /// Enumerate exhaustively when the fault's observed input support has
    /// at most this many bits.
    pub exhaustive_limit_bits: usize,
    /// Random patterns otherwise.
    pub samples: usize,
    pub seed: u64,
}

impl Default for MaxErrorOptions {
    fn default() -> Self {
        MaxErrorOptions {
            exhaustive_limit_bits: 24,
            samples: 1 << 16,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaxError {
    /// Largest `|faulty - exact|` seen.
    pub max: u64,
    /// True when every input assignment was covered.
    pub exhaustive: bool,
    pub support_bits: usize,
    /// An input achieving `max`, when `max > 0`.
    pub witness: Option<BitVec>,
}

/// Maximum output error of one fault. Only outputs in the fault's fan-out
/// cone can change and they depend only on their input support, so the
/// search enumerates that support with every other input held at zero.
pub fn max_error(netlist: &Netlist, fault: &FaultSite, opts: &MaxErrorOptions) -> Result<MaxError, MacsimError> {
    let inj = fault.injection(netlist)?;
    let cone = fanout_gates(netlist, inj.gate);
    let outs = observed_outputs(netlist, &cone);
    let support = input_support(netlist, &outs);
    let weights = output_weights(netlist);
    let width = netlist.primary_inputs().len();
    let m = support.len();
    let exhaustive = m <= opts.exhaustive_limit_bits;
    let blocks: u64 = if exhaustive {
        1u64 << m.saturating_sub(6)
    } else {
        (opts.samples as u64).div_ceil(64)
    };
    let mut r = rng::stream(opts.seed, &[inj.gate as u64, fault.polarity.value() as u64]);
    let lane_patterns = [
        0xAAAA_AAAA_AAAA_AAAAu64,
        0xCCCC_CCCC_CCCC_CCCC,
        0xF0F0_F0F0_F0F0_F0F0,
        0xFF00_FF00_FF00_FF00,
        0xFFFF_0000_FFFF_0000,
        0xFFFF_FFFF_0000_0000,
    ];
    let pos = netlist.primary_outputs();
    let mut best = 0u64;
    let mut witness: Option<(u64, usize)> = None;
    let mut words = vec![0u64; width];
    let mut good = Vec::new();
    let mut bad = Vec::new();
    let mut best_words: Vec<u64> = Vec::new();
    for b in 0..blocks {
        for (j, &pi) in support.iter().enumerate() {
            words[pi] = if !exhaustive {
                r.gen()
            } else if j < 6 {
                lane_patterns[j]
            } else if (b >> (j - 6)) & 1 == 1 {
                u64::MAX
            } else {
                0
            };
        }
        netlist.simulate(&words, &mut good);
        netlist.simulate_with(&words, &[inj], &mut bad);
        let mut err = [0i64; 64];
        for &o in &outs {
            let n = pos[o].index();
            let plus = bad[n] & !good[n];
            let minus = good[n] & !bad[n];
            if plus | minus == 0 {
                continue;
            }
            for (lane, e) in err.iter_mut().enumerate() {
                *e += weights[o] * (((plus >> lane) & 1) as i64 - ((minus >> lane) & 1) as i64);
            }
        }
        for (lane, e) in err.iter().enumerate() {
            if e.unsigned_abs() > best {
                best = e.unsigned_abs();
                witness = Some((b, lane));
                best_words = words.clone();
            }
        }
    }
    let witness = witness.map(|(_, lane)| {
        let bits: Vec<bool> = best_words.iter().map(|w| (w >> lane) & 1 == 1).collect();
        BitVec::from_bits(&bits)
    });
    Ok(MaxError {
        max: best,
        exhaustive,
        support_bits: m,
        witness,
    })
}

/// Worst-case magnitude `sum_{i=0}^{k+1} 2^i` for tolerated LSB position `k`.
pub fn error_bound(k: u32) -> u64 {
    (1u64 << (k + 2)) - 1
}

/// One row of a max-error sweep.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaxErrorRow {
    pub fault: String,
    pub max_error: u64,
    pub bound: u64,
    pub compliant: bool,
    pub exhaustive: bool,
}

/// Max error of every fault in `faults` against the bound for `k`.
pub fn max_error_sweep(
    netlist: &Netlist,
    faults: &FaultList,
    k: u32,
    opts: &MaxErrorOptions,
) -> Result<Vec<MaxErrorRow>, MacsimError> {
    let bound = error_bound(k);
    crate::par::map(&faults.sites, |s| {
        max_error(netlist, s, opts).map(|m| MaxErrorRow {
            fault: alloc::format!("{s}"),
            max_error: m.max,
            bound,
            compliant: m.max <= bound,
            exhaustive: m.exhaustive,
        })
    })
    .into_iter()
    .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MacFormat {
    Int8Mac,
    Bfloat16MacBehavioral,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorMode {
    /// Constant worst-case magnitude with a per-PE sign.
    WorstCaseSigned,
    /// Each faulty PE carries one fault drawn from the non-critical list of
    /// the int8 MAC netlist; the error depends on the operands.
    PerFaultNetlist,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolarityRule {
    Positive,
    Negative,
    /// Drawn once per PE from the trial seed.
    PerPe,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorModel {
    pub format: MacFormat,
    pub k: u32,
    pub mode: ErrorMode,
    pub polarity: PolarityRule,
}

impl ErrorModel {
    pub fn int8_worst_case(k: u32) -> Self {
        ErrorModel {
            format: MacFormat::Int8Mac,
            k,
            mode: ErrorMode::WorstCaseSigned,
            polarity: PolarityRule::PerPe,
        }
    }

    pub fn bf16_worst_case(k: u32) -> Self {
        ErrorModel {
            format: MacFormat::Bfloat16MacBehavioral,
            k,
            mode: ErrorMode::WorstCaseSigned,
            polarity: PolarityRule::PerPe,
        }
    }

    /// Sign of the error at PE (`row`, `col`) for a trial seed.
    pub fn pe_sign(&self, seed: u64, row: usize, col: usize) -> i64 {
        match self.polarity {
            PolarityRule::Positive => 1,
            PolarityRule::Negative => -1,
            PolarityRule::PerPe => {
                if rng::derive(seed, &[0x5167, row as u64, col as u64]) & 1 == 0 {
                    1
                } else {
                    -1
                }
            }
        }
    }

    /// Worst-case int8 perturbation magnitude.
    pub fn int8_magnitude(&self) -> i64 {
        error_bound(self.k) as i64
    }

    /// The error added per MAC is the same for every operand.
    pub fn operand_independent(&self) -> bool {
        self.format == MacFormat::Int8Mac && self.mode == ErrorMode::WorstCaseSigned
    }
}

/// Int8 worst-case perturbation of an exact MAC value.
pub fn behavioral_error(model: &ErrorModel, sign: i64, exact: i64) -> i64 {
    exact + sign * model.int8_magnitude()
}

/// Round an `f32` to the nearest bfloat16 (ties to even), kept as `f32`.
pub fn round_bf16(x: f32) -> f32 {
    if !x.is_finite() {
        return x;
    }
    let b = x.to_bits();
    let lsb = (b >> 16) & 1;
    let r = b.wrapping_add(0x7FFF + lsb) & 0xFFFF_0000;
    f32::from_bits(r)
}

/// Bfloat16 product with its `k+1` mantissa LSBs driven to the worst case:
/// the product moves by `(2^(k+1) - 1)` units in its last place.
pub fn behavioral_error_bf16(model: &ErrorModel, sign: i64, a: f32, b: f32) -> f32 {
    let p = round_bf16(round_bf16(a) * round_bf16(b));
    if p == 0.0 || !p.is_finite() {
        return p;
    }
    let exp = ((p.to_bits() >> 23) & 0xFF) as i32;
    // bfloat16 keeps 7 explicit mantissa bits.
    let ulp = libm::ldexpf(1.0, exp.max(1) - 127 - 7);
    let steps = ((1u32 << (model.k + 1)) - 1) as f32;
    p + sign as f32 * steps * ulp
}

/// Operand-dependent int8 MAC error for faults taken from the gate-level
/// netlist. The error of each fault is tabulated over its observed input
/// support.
#[derive(Clone, Debug)]
pub struct FaultErrorTable {
    pub faults: Vec<FaultSite>,
    supports: Vec<Vec<usize>>,
    tables: Vec<Vec<i32>>,
}

pub const TABLE_LIMIT_BITS: usize = 16;

impl FaultErrorTable {
    /// Tabulate the errors of `faults` on the int8 MAC netlist, whose
    /// inputs are `a[8] b[8] acc[16]`.
    pub fn build(netlist: &Netlist, faults: &FaultList) -> Result<Self, MacsimError> {
        if faults.is_empty() {
            return Err(MacsimError::NoFaults);
        }
        let weights = output_weights(netlist);
        let pos = netlist.primary_outputs();
        let width = netlist.primary_inputs().len();
        let mut supports = Vec::new();
        let mut tables = Vec::new();
        for site in &faults.sites {
            let inj = site.injection(netlist)?;
            let outs = observed_outputs(netlist, &fanout_gates(netlist, inj.gate));
            let support = input_support(netlist, &outs);
            if support.len() > TABLE_LIMIT_BITS {
                return Err(MacsimError::SupportTooWide {
                    site: *site,
                    bits: support.len(),
                    limit: TABLE_LIMIT_BITS,
                });
            }
            let n = 1usize << support.len();
            let mut table = vec![0i32; n];
            let mut good = Vec::new();
            let mut bad = Vec::new();
            for base in (0..n).step_by(64) {
                let mut words = vec![0u64; width];
                for lane in 0..64.min(n - base) {
                    let idx = base + lane;
                    for (j, &pi) in support.iter().enumerate() {
                        if (idx >> j) & 1 == 1 {
                            words[pi] |= 1 << lane;
                        }
                    }
                }
                netlist.simulate(&words, &mut good);
                netlist.simulate_with(&words, &[inj], &mut bad);
                for lane in 0..64.min(n - base) {
                    let mut e = 0i64;
                    for &o in &outs {
                        let nn = pos[o].index();
                        let gb = (good[nn] >> lane) & 1;
                        let bb = (bad[nn] >> lane) & 1;
                        e += weights[o] * (bb as i64 - gb as i64);
                    }
                    table[base + lane] = e as i32;
                }
            }
            supports.push(support);
            tables.push(table);
        }
        Ok(FaultErrorTable {
            faults: faults.sites.clone(),
            supports,
            tables,
        })
    }

    pub fn len(&self) -> usize {
        self.faults.len()
    }

    pub fn is_empty(&self) -> bool {
        self.faults.is_empty()
    }

    /// Error of fault `which` for operands `a`, `b` and the low 16 bits of
    /// the running sum.
    pub fn error(&self, which: usize, a: i8, b: i8, acc: i64) -> i64 {
        let flat = (a as u8 as u64) | ((b as u8 as u64) << 8) | (((acc as u64) & 0xFFFF) << 16);
        let mut idx = 0usize;
        for (j, &pi) in self.supports[which].iter().enumerate() {
            idx |= (((flat >> pi) & 1) as usize) << j;
        }
        self.tables[which][idx] as i64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atpg::{all_faults, Polarity};
    use crate::cones::partition;
    use crate::netlist::{gen_baugh_wooley, gen_mac_int8, Driver, GateId, Pin};

    fn mac_inputs(nl: &Netlist, a: i64, b: i64, acc: i64) -> BTreeMap<String, BitVec> {
        let flat = nl.pack_inputs(&[a, b, acc]);
        let mut out = BTreeMap::new();
        let mut lo = 0;
        for bus in nl.input_buses() {
            out.insert(bus.name.clone(), flat.slice(lo, bus.width()));
            lo += bus.width();
        }
        out
    }

    fn output_gate(nl: &Netlist, bit: usize) -> GateId {
        match nl.driver(nl.primary_outputs()[bit]) {
            Driver::Gate(g) => nl.gate(g as usize).id,
            Driver::Input(_) => panic!("output driven by an input"),
        }
    }

    #[test]
    fn bit0_sa0_drops_one() {
        let nl = gen_mac_int8().unwrap();
        let f = FaultSite {
            gate: output_gate(&nl, 0),
            pin: Pin::Output,
            polarity: Polarity::Sa0,
        };
        let out = inject_eval(&nl, &[f], &mac_inputs(&nl, 3, 3, 0)).unwrap();
        assert_eq!(out["y"].to_i64(), 8);
    }

    #[test]
    fn empty_injection_is_plain_eval() {
        let nl = gen_mac_int8().unwrap();
        let ins = mac_inputs(&nl, -7, 93, 1234);
        assert_eq!(inject_eval(&nl, &[], &ins).unwrap(), nl.eval(&ins).unwrap());
    }

    #[test]
    fn msb_fault_exceeds_k1_bound() {
        let nl = gen_mac_int8().unwrap();
        let f = FaultSite {
            gate: output_gate(&nl, 15),
            pin: Pin::Output,
            polarity: Polarity::Sa1,
        };
        let m = max_error(&nl, &f, &MaxErrorOptions::default()).unwrap();
        assert!(m.max >= 1 << 15);
        assert!(m.max > error_bound(1));
    }

    #[test]
    fn noncritical_faults_respect_bound() {
        let nl = gen_mac_int8().unwrap();
        let p = partition(&nl, 1).unwrap();
        let rows = max_error_sweep(&nl, &p.f_noncrit, 1, &MaxErrorOptions::default()).unwrap();
        assert!(!rows.is_empty());
        assert!(rows.iter().all(|r| r.exhaustive && r.compliant && r.max_error <= 7));
    }

    #[test]
    fn matches_serial_exhaustive_sweep() {
        let nl = gen_baugh_wooley(4).unwrap();
        let faults = all_faults(&nl);
        let opts = MaxErrorOptions::default();
        for s in faults.sites.iter().step_by(3) {
            let m = max_error(&nl, s, &opts).unwrap();
            assert!(m.exhaustive);
            let inj = s.injection(&nl).unwrap();
            let mut serial = 0u64;
            for v in 0..256u64 {
                let p = BitVec::from_u64(8, v);
                let e = nl.eval_flat_with(&p, &[inj]).to_i64() - nl.eval_flat(&p).to_i64();
                serial = serial.max(e.unsigned_abs());
            }
            assert_eq!(m.max, serial, "{s}");
            if let Some(w) = m.witness {
                let e = nl.eval_flat_with(&w, &[inj]).to_i64() - nl.eval_flat(&w).to_i64();
                assert_eq!(e.unsigned_abs(), m.max);
            }
        }
    }

    #[test]
    fn worst_case_examples() {
        let m = ErrorModel::int8_worst_case(1);
        assert_eq!(behavioral_error(&m, 1, 100), 107);
        assert_eq!(behavioral_error(&m, -1, 0), -7);
        for r in 0..16 {
            for c in 0..16 {
                let s = m.pe_sign(3, r, c);
                assert_eq!((behavioral_error(&m, s, 40) - 40).abs(), 7);
            }
        }
    }

    #[test]
    fn bf16_perturbation_stays_in_low_mantissa_bits() {
        let m = ErrorModel::bf16_worst_case(3);
        let exact = round_bf16(round_bf16(1.5) * round_bf16(3.0));
        let p = behavioral_error_bf16(&m, 1, 1.5, 3.0);
        // 4.5 has exponent 2, so one ulp is 2^(2-7).
        assert_eq!(p - exact, 15.0 * libm::ldexpf(1.0, -5));
        assert_eq!(behavioral_error_bf16(&m, 1, 0.0, 3.0), 0.0);
        assert_eq!(round_bf16(1.0 + libm::ldexpf(1.0, -9)), 1.0);
    }

    #[test]
    fn fault_table_matches_netlist() {
        let nl = gen_mac_int8().unwrap();
        let p = partition(&nl, 1).unwrap();
        let t = FaultErrorTable::build(&nl, &p.f_noncrit).unwrap();
        let mut r = rng::stream(1, &[]);
        for _ in 0..500 {
            let which = r.gen_range(0..t.len());
            let (a, b, acc): (i8, i8, i16) = (r.gen(), r.gen(), r.gen());
            let inj = t.faults[which].injection(&nl).unwrap();
            let flat = nl.pack_inputs(&[a as i64, b as i64, acc as i64]);
            let e = nl.eval_flat_with(&flat, &[inj]).to_i64() - nl.eval_flat(&flat).to_i64();
            assert_eq!(t.error(which, a, b, acc as i64), e);
        }
    }
}
