use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::fsim::{detects_by_pattern, FaultSim};
use super::podem::{podem, PodemOutcome, Scoap};
use super::FaultList;
use crate::bits::BitVec;
use crate::cones::ConePartition;
use crate::netlist::{Injection, Netlist};
use crate::{par, rng};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtpgOptions {
    pub backtrack_limit: usize,
    pub fault_dropping: bool,
    /// Random phase stops after this many 64-pattern blocks without a new
    /// detection.
    pub random_idle_blocks: usize,
    pub random_max_blocks: usize,
}

impl Default for AtpgOptions {
    fn default() -> Self {
        AtpgOptions {
            backtrack_limit: 10_000,
            fault_dropping: true,
            random_idle_blocks: 2,
            random_max_blocks: 64,
        }
    }
}

/// Ordered patterns with their fault-free responses and detection
/// bookkeeping against `faults`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestSet {
    /// Input bus (name, width) order the flattened patterns follow.
    pub input_buses: Vec<(String, usize)>,
    pub patterns: Vec<BitVec>,
    pub expected_outputs: Vec<BitVec>,
    pub faults: FaultList,
    /// Per pattern, indices into `faults.sites`.
    pub detects: Vec<Vec<u32>>,
    /// Per fault, whether some pattern detects it.
    pub detected: Vec<bool>,
    /// Faults proven undetectable.
    pub redundant: Vec<u32>,
    /// Faults given up on at the backtrack limit.
    pub aborted: Vec<u32>,
}

impl TestSet {
    pub fn detected_count(&self) -> usize {
        self.detected.iter().filter(|&&d| d).count()
    }

    /// Detected over all targeted faults.
    pub fn fault_coverage(&self) -> f64 {
        ratio(self.detected_count(), self.faults.len())
    }

    /// Detected over targeted faults not proven undetectable.
    pub fn test_coverage(&self) -> f64 {
        ratio(self.detected_count(), self.faults.len() - self.redundant.len())
    }

    /// Fault coverage over the uncollapsed universe (class sizes as weights).
    pub fn uncollapsed_fault_coverage(&self) -> f64 {
        let (hit, total) = self.weighted(|_| true);
        ratio(hit, total)
    }

    pub fn uncollapsed_test_coverage(&self) -> f64 {
        let redundant = &self.redundant;
        let (hit, total) = self.weighted(|i| redundant.binary_search(&(i as u32)).is_err());
        ratio(hit, total)
    }

    fn weighted(&self, keep: impl Fn(usize) -> bool) -> (usize, usize) {
        let weight = |i: usize| match &self.faults.classes {
            Some(c) => c[i].len(),
            None => 1,
        };
        let mut hit = 0;
        let mut total = 0;
        for i in 0..self.faults.len() {
            if keep(i) {
                total += weight(i);
                if self.detected[i] {
                    hit += weight(i);
                }
            }
        }
        (hit, total)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        1.0
    } else {
        a as f64 / b as f64
    }
}

/// Builds a TestSet by simulating `patterns` against `faults`.
pub fn fault_simulate(netlist: &Netlist, patterns: Vec<BitVec>, faults: &FaultList) -> TestSet {
    let inj = super::faults::site_indices(faults, netlist);
    let detects = detects_by_pattern(netlist, &patterns, &inj);
    let mut detected = vec![false; faults.len()];
    for d in &detects {
        for &f in d {
            detected[f as usize] = true;
        }
    }
    TestSet {
        input_buses: netlist
            .input_buses()
            .iter()
            .map(|b| (b.name.clone(), b.width()))
            .collect(),
        expected_outputs: patterns.iter().map(|p| netlist.eval_flat(p)).collect(),
        patterns,
        faults: faults.clone(),
        detects,
        detected,
        redundant: Vec::new(),
        aborted: Vec::new(),
    }
}

const PODEM_BATCH: usize = 64;

/// Random patterns with fault dropping, then PODEM for what remains, then
/// reverse-order compaction. Results do not depend on the thread count.
pub fn generate_patterns(netlist: &Netlist, faults: &FaultList, seed: u64, opts: &AtpgOptions) -> TestSet {
    let inj = super::faults::site_indices(faults, netlist);
    let sim = FaultSim::new(netlist);
    let width = netlist.primary_inputs().len();
    let mut detected = vec![false; inj.len()];
    let mut patterns: Vec<BitVec> = Vec::new();

    // Random phase.
    let mut r = rng::stream(seed, &[0]);
    let mut idle = 0;
    for _ in 0..opts.random_max_blocks {
        if idle >= opts.random_idle_blocks || detected.iter().all(|&d| d) {
            break;
        }
        let block: Vec<BitVec> = (0..64)
            .map(|_| BitVec::from_bits(&(0..width).map(|_| r.gen()).collect::<Vec<bool>>()))
            .collect();
        let good = sim.good_blocks(&block);
        let targets: Vec<usize> = (0..inj.len())
            .filter(|&i| !opts.fault_dropping || !detected[i])
            .collect();
        let words = par::map(&targets, |&i| sim.detect_word(&good[0], &inj[i], &mut Vec::new()));
        let mut keep = 0u64;
        for (&i, &w) in targets.iter().zip(&words) {
            if w != 0 && !detected[i] {
                detected[i] = true;
                keep |= 1 << w.trailing_zeros();
            }
        }
        if keep == 0 {
            idle += 1;
        } else {
            idle = 0;
        }
        for (lane, p) in block.into_iter().enumerate() {
            if keep >> lane & 1 == 1 {
                patterns.push(p);
            }
        }
    }

    // Deterministic phase.
    let scoap = Scoap::compute(netlist);
    let mut redundant = Vec::new();
    let mut aborted = Vec::new();
    let mut tried = vec![false; inj.len()];
    loop {
        let batch: Vec<usize> = (0..inj.len())
            .filter(|&i| !detected[i] && !tried[i])
            .take(PODEM_BATCH)
            .collect();
        if batch.is_empty() {
            break;
        }
        let outcomes = par::map(&batch, |&i| podem(netlist, &scoap, inj[i], opts.backtrack_limit));
        let mut fresh = Vec::new();
        for (&i, o) in batch.iter().zip(outcomes) {
            tried[i] = true;
            match o {
                PodemOutcome::Test(cube) => {
                    let mut fr = rng::stream(seed, &[1, i as u64]);
                    let bits: Vec<bool> = cube.iter().map(|b| b.unwrap_or_else(|| fr.gen())).collect();
                    fresh.push(BitVec::from_bits(&bits));
                }
                PodemOutcome::Redundant => redundant.push(i as u32),
                PodemOutcome::Aborted => aborted.push(i as u32),
            }
        }
        if fresh.is_empty() {
            continue;
        }
        let first = sim.first_detection(&fresh, &inj);
        for (i, f) in first.iter().enumerate() {
            if f.is_some() {
                detected[i] = true;
            }
        }
        patterns.extend(fresh);
    }

    let patterns = compact(&sim, patterns, &inj, &detected);
    let mut ts = fault_simulate(netlist, patterns, faults);
    ts.redundant = redundant;
    ts.aborted = aborted;
    ts.redundant.sort_unstable();
    ts.aborted.sort_unstable();
    ts
}

/// Reverse-order greedy compaction: walking patterns from last to first,
/// keep one only if it detects a target not yet covered by those kept.
fn compact(sim: &FaultSim<'_>, patterns: Vec<BitVec>, inj: &[Injection], targets: &[bool]) -> Vec<BitVec> {
    let rev: Vec<BitVec> = patterns.into_iter().rev().collect();
    let blocks = sim.good_blocks(&rev);
    let mut remaining: Vec<usize> = (0..inj.len()).filter(|&i| targets[i]).collect();
    let mut keep = vec![false; rev.len()];
    for (bi, b) in blocks.iter().enumerate() {
        let words = par::map(&remaining, |&i| sim.detect_word(b, &inj[i], &mut Vec::new()));
        // Sequential greedy inside the block equals taking, per fault, its
        // first detecting lane once earlier kept lanes are accounted for.
        let mut kept_word = 0u64;
        let mut order: Vec<(u32, usize)> = words
            .iter()
            .enumerate()
            .filter(|(_, &w)| w != 0)
            .map(|(j, &w)| (w.trailing_zeros(), j))
            .collect();
        order.sort_unstable();
        let mut covered = vec![false; remaining.len()];
        for (lane, j) in order {
            if words[j] & kept_word != 0 {
                covered[j] = true;
                continue;
            }
            kept_word |= 1 << lane;
            covered[j] = true;
        }
        for lane in 0..64 {
            if kept_word >> lane & 1 == 1 {
                keep[64 * bi + lane] = true;
            }
        }
        remaining = remaining
            .iter()
            .zip(&covered)
            .filter(|(_, &c)| !c)
            .map(|(&i, _)| i)
            .collect();
    }
    let mut out: Vec<BitVec> = rev
        .into_iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(p, _)| p)
        .collect();
    out.reverse();
    out
}

/// Separate test sets for the critical and non-critical fault lists.
pub fn split_pattern_generation(
    netlist: &Netlist,
    part: &ConePartition,
    seed: u64,
    opts: &AtpgOptions,
) -> (TestSet, TestSet) {
    let crit = generate_patterns(netlist, &part.f_crit, rng::derive(seed, &[1]), opts);
    let noncrit = generate_patterns(netlist, &part.f_noncrit, rng::derive(seed, &[2]), opts);
    (crit, noncrit)
}
