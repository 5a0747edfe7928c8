//! Fan-in cone partitioning of a MAC netlist around a tolerated LSB
//! position `K`.
//!
//! Gates that only reach output bits `0..=K` are non-critical. Gates that
//! reach any bit above `K` are critical, with the exception carved out by
//! the carry into bit `K+1`: those gates are kept apart as
//! `g_carry_overlap` and counted as critical for fault enumeration.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::atpg::{enumerate_faults, FaultList};
use crate::netlist::{Driver, GateId, NetId, Netlist};

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ConeError {
    #[error("output bit {bit} out of range (MSB position is {msb})")]
    BitOutOfRange { bit: usize, msb: usize },
    #[error(
        "no carry-in annotation for bit {bit}; name the carry net explicitly \
         (for example with --carry-net <net>)"
    )]
    MissingCarryAnnotation { bit: usize },
    #[error("K = {k} must be below the MSB position {msb}")]
    KTooLarge { k: usize, msb: usize },
}

/// Gate indices whose output reaches `net`, marked in a per-gate vector.
pub fn fanin_mask(netlist: &Netlist, nets: &[NetId]) -> Vec<bool> {
    let mut mark = vec![false; netlist.gates().len()];
    let mut stack: Vec<NetId> = nets.to_vec();
    while let Some(n) = stack.pop() {
        if let Driver::Gate(g) = netlist.driver(n) {
            let g = g as usize;
            if !mark[g] {
                mark[g] = true;
                stack.extend(netlist.gate(g).inputs.iter().copied());
            }
        }
    }
    mark
}

/// Gate indices reachable from gate `start` (inclusive), in topological order.
pub fn fanout_gates(netlist: &Netlist, start: usize) -> Vec<usize> {
    let mut mark = vec![false; netlist.gates().len()];
    mark[start] = true;
    let mut stack = vec![start];
    while let Some(g) = stack.pop() {
        for &(r, _) in netlist.readers(netlist.gate(g).output) {
            if !mark[r as usize] {
                mark[r as usize] = true;
                stack.push(r as usize);
            }
        }
    }
    netlist
        .topo_order()
        .iter()
        .map(|&g| g as usize)
        .filter(|&g| mark[g])
        .collect()
}

/// Output bit positions driven by any of `gates`.
pub fn observed_outputs(netlist: &Netlist, gates: &[usize]) -> Vec<usize> {
    let set: BTreeSet<NetId> = gates.iter().map(|&g| netlist.gate(g).output).collect();
    netlist
        .primary_outputs()
        .iter()
        .enumerate()
        .filter(|(_, n)| set.contains(n))
        .map(|(i, _)| i)
        .collect()
}

/// Flattened primary-input positions that structurally reach any of the
/// given output bits.
pub fn input_support(netlist: &Netlist, outputs: &[usize]) -> Vec<usize> {
    let pos = netlist.primary_outputs();
    let mut seen = vec![false; netlist.num_nets()];
    let mut stack: Vec<NetId> = outputs.iter().map(|&i| pos[i]).collect();
    let mut pis = BTreeSet::new();
    while let Some(n) = stack.pop() {
        if seen[n.index()] {
            continue;
        }
        seen[n.index()] = true;
        match netlist.driver(n) {
            Driver::Input(i) => {
                pis.insert(i as usize);
            }
            Driver::Gate(g) => stack.extend(netlist.gate(g as usize).inputs.iter().copied()),
        }
    }
    pis.into_iter().collect()
}

fn mask_to_ids(netlist: &Netlist, mask: &[bool]) -> BTreeSet<GateId> {
    mask.iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(i, _)| netlist.gate(i).id)
        .collect()
}

/// Every gate from which output bit `output_bit` is reachable.
pub fn fanin_cone(netlist: &Netlist, output_bit: usize) -> Result<BTreeSet<GateId>, ConeError> {
    let msb = netlist.msb_position();
    if output_bit > msb {
        return Err(ConeError::BitOutOfRange {
            bit: output_bit,
            msb,
        });
    }
    let net = netlist.primary_outputs()[output_bit];
    Ok(mask_to_ids(netlist, &fanin_mask(netlist, &[net])))
}

/// Fan-in cone of the net annotated as the carry into bit `k_plus_1`.
pub fn carryin_cone(netlist: &Netlist, k_plus_1: usize) -> Result<BTreeSet<GateId>, ConeError> {
    let net = netlist
        .carry_in_of_bit(k_plus_1)
        .ok_or(ConeError::MissingCarryAnnotation { bit: k_plus_1 })?;
    Ok(mask_to_ids(netlist, &fanin_mask(netlist, &[net])))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConePartition {
    pub k: usize,
    pub g1: BTreeSet<GateId>,
    pub g2: BTreeSet<GateId>,
    pub g_carryin: BTreeSet<GateId>,
    /// `g1 \ g2`.
    pub g_noncrit: BTreeSet<GateId>,
    /// `g2 \ g_carryin`.
    pub g_crit: BTreeSet<GateId>,
    /// `g2 ∩ g_carryin`, treated as critical.
    pub g_carry_overlap: BTreeSet<GateId>,
    /// Faults on `g_crit ∪ g_carry_overlap`.
    pub f_crit: FaultList,
    /// Faults on `g_noncrit`.
    pub f_noncrit: FaultList,
}

impl ConePartition {
    /// Gates whose faults are targeted as critical.
    pub fn critical_gates(&self) -> BTreeSet<GateId> {
        self.g_crit.union(&self.g_carry_overlap).copied().collect()
    }
}

/// Partition for tolerated LSB position `k` using the annotated carry into
/// bit `k+1`. Fault lists are collapsed.
pub fn partition(netlist: &Netlist, k: usize) -> Result<ConePartition, ConeError> {
    let msb = netlist.msb_position();
    if k >= msb {
        return Err(ConeError::KTooLarge { k, msb });
    }
    let carry = netlist
        .carry_in_of_bit(k + 1)
        .ok_or(ConeError::MissingCarryAnnotation { bit: k + 1 })?;
    partition_with_carry(netlist, k, Some(carry))
}

/// Partition with an explicit carry-in net for bit `k+1`. `None` means the
/// carry is absent (a constant), so the carry-in cone is empty.
pub fn partition_with_carry(
    netlist: &Netlist,
    k: usize,
    carry: Option<NetId>,
) -> Result<ConePartition, ConeError> {
    let msb = netlist.msb_position();
    if k >= msb {
        return Err(ConeError::KTooLarge { k, msb });
    }
    let pos = netlist.primary_outputs();
    let carry: Vec<NetId> = carry.into_iter().collect();
    let g1 = mask_to_ids(netlist, &fanin_mask(netlist, &pos[..=k]));
    let g2 = mask_to_ids(netlist, &fanin_mask(netlist, &pos[k + 1..]));
    let g_carryin = mask_to_ids(netlist, &fanin_mask(netlist, &carry));

    let g_noncrit: BTreeSet<GateId> = g1.difference(&g2).copied().collect();
    let g_crit: BTreeSet<GateId> = g2.difference(&g_carryin).copied().collect();
    let g_carry_overlap: BTreeSet<GateId> = g2.intersection(&g_carryin).copied().collect();

    let crit_all: BTreeSet<GateId> = g_crit.union(&g_carry_overlap).copied().collect();
    let f_crit = enumerate_faults(netlist, &crit_all).collapse(netlist);
    let f_noncrit = enumerate_faults(netlist, &g_noncrit).collapse(netlist);
    Ok(ConePartition {
        k,
        g1,
        g2,
        g_carryin,
        g_noncrit,
        g_crit,
        g_carry_overlap,
        f_crit,
        f_noncrit,
    })
}
