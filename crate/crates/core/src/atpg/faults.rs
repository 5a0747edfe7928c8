use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::netlist::{GateId, GateKind, Injection, Netlist, Pin};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Polarity {
    #[serde(rename = "SA0")]
    Sa0,
    #[serde(rename = "SA1")]
    Sa1,
}

impl Polarity {
    pub fn from_bool(v: bool) -> Polarity {
        if v {
            Polarity::Sa1
        } else {
            Polarity::Sa0
        }
    }

    pub fn value(self) -> bool {
        self == Polarity::Sa1
    }

    pub fn name(self) -> &'static str {
        match self {
            Polarity::Sa0 => "SA0",
            Polarity::Sa1 => "SA1",
        }
    }

    pub fn parse(s: &str) -> Option<Polarity> {
        match s {
            "SA0" => Some(Polarity::Sa0),
            "SA1" => Some(Polarity::Sa1),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FaultSite {
    pub gate: GateId,
    pub pin: Pin,
    pub polarity: Polarity,
}

impl fmt::Display for FaultSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.gate, self.pin, self.polarity.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum FaultError {
    #[error("fault {site}: no gate with that id")]
    UnknownGate { site: FaultSite },
    #[error("fault {site}: gate has no such pin")]
    UnknownPin { site: FaultSite },
}

impl FaultSite {
    /// Resolve against a netlist into a simulator injection.
    pub fn injection(&self, netlist: &Netlist) -> Result<Injection, FaultError> {
        let gate = netlist
            .gate_index(self.gate)
            .ok_or(FaultError::UnknownGate { site: *self })?;
        if let Pin::Input(p) = self.pin {
            if p as usize >= netlist.gate(gate).inputs.len() {
                return Err(FaultError::UnknownPin { site: *self });
            }
        }
        Ok(Injection {
            gate,
            pin: self.pin,
            value: self.polarity.value(),
        })
    }
}

/// Ordered fault sites. When collapsed, `sites` holds one representative
/// per equivalence class and `classes[i]` lists every member of class `i`
/// (representative first).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultList {
    pub sites: Vec<FaultSite>,
    pub collapsed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<Vec<Vec<FaultSite>>>,
}

impl FaultList {
    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    /// Number of sites before collapsing.
    pub fn uncollapsed_len(&self) -> usize {
        match &self.classes {
            Some(c) => c.iter().map(Vec::len).sum(),
            None => self.sites.len(),
        }
    }

    pub fn injections(&self, netlist: &Netlist) -> Result<Vec<Injection>, FaultError> {
        self.sites.iter().map(|s| s.injection(netlist)).collect()
    }

    /// Every member site, expanding classes.
    pub fn all_sites(&self) -> Vec<FaultSite> {
        match &self.classes {
            Some(c) => {
                let mut v: Vec<FaultSite> = c.iter().flatten().copied().collect();
                v.sort();
                v
            }
            None => self.sites.clone(),
        }
    }

    /// Merge structurally equivalent faults:
    ///
    /// * input SA-c of a gate with controlling value c is equivalent to its
    ///   output SA-(c xor inversion);
    /// * NOT/BUF input SA-v is equivalent to output SA-(v xor inversion);
    /// * a gate output driving exactly one gate pin, and no primary output,
    ///   is equivalent to that pin with the same polarity.
    ///
    /// Only sites present in the list are merged. The representative is the
    /// smallest site of each class.
    pub fn collapse(&self, netlist: &Netlist) -> FaultList {
        if self.collapsed {
            return self.clone();
        }
        let sites = &self.sites;
        let index: BTreeMap<FaultSite, usize> =
            sites.iter().enumerate().map(|(i, s)| (*s, i)).collect();
        let mut uf = UnionFind::new(sites.len());
        let mut join = |a: FaultSite, b: FaultSite| {
            if let (Some(&x), Some(&y)) = (index.get(&a), index.get(&b)) {
                uf.union(x, y);
            }
        };
        for s in sites {
            let Some(gi) = netlist.gate_index(s.gate) else {
                continue;
            };
            let g = netlist.gate(gi);
            if let Pin::Input(_) = s.pin {
                let v = s.polarity.value();
                let out = match g.kind {
                    GateKind::Not | GateKind::Buf => Some(v ^ g.kind.inverting()),
                    k => match k.controlling_value() {
                        Some(c) if c == v => Some(c ^ k.inverting()),
                        _ => None,
                    },
                };
                if let Some(o) = out {
                    join(
                        *s,
                        FaultSite {
                            gate: s.gate,
                            pin: Pin::Output,
                            polarity: Polarity::from_bool(o),
                        },
                    );
                }
            } else {
                let readers = netlist.readers(g.output);
                if readers.len() == 1 && !netlist.is_primary_output(g.output) {
                    let (r, pin) = readers[0];
                    join(
                        *s,
                        FaultSite {
                            gate: netlist.gate(r as usize).id,
                            pin: Pin::Input(pin),
                            polarity: s.polarity,
                        },
                    );
                }
            }
        }
        let mut groups: BTreeMap<usize, Vec<FaultSite>> = BTreeMap::new();
        for (i, s) in sites.iter().enumerate() {
            groups.entry(uf.find(i)).or_default().push(*s);
        }
        let mut classes: Vec<Vec<FaultSite>> = groups
            .into_values()
            .map(|mut v| {
                v.sort();
                v
            })
            .collect();
        classes.sort();
        FaultList {
            sites: classes.iter().map(|c| c[0]).collect(),
            collapsed: true,
            classes: Some(classes),
        }
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// SA0 and SA1 on the output and every input pin of each listed gate, in
/// (gate, pin, polarity) order. Ids not in the netlist are skipped.
pub fn enumerate_faults(netlist: &Netlist, gates: &BTreeSet<GateId>) -> FaultList {
    let mut sites = Vec::new();
    for &id in gates {
        let Some(gi) = netlist.gate_index(id) else {
            continue;
        };
        let pins = core::iter::once(Pin::Output)
            .chain((0..netlist.gate(gi).inputs.len()).map(|p| Pin::Input(p as u8)));
        for pin in pins {
            for polarity in [Polarity::Sa0, Polarity::Sa1] {
                sites.push(FaultSite {
                    gate: id,
                    pin,
                    polarity,
                });
            }
        }
    }
    FaultList {
        sites,
        collapsed: false,
        classes: None,
    }
}

/// Faults on every gate of the netlist.
pub fn all_faults(netlist: &Netlist) -> FaultList {
    let ids: BTreeSet<GateId> = netlist.gates().iter().map(|g| g.id).collect();
    enumerate_faults(netlist, &ids)
}

/// Flattened-output response of a single pattern under one fault.
pub fn faulty_response(
    netlist: &Netlist,
    site: &FaultSite,
    pattern: &crate::bits::BitVec,
) -> Result<crate::bits::BitVec, FaultError> {
    let inj = site.injection(netlist)?;
    Ok(netlist.eval_flat_with(pattern, &[inj]))
}

pub(crate) fn site_indices(list: &FaultList, netlist: &Netlist) -> Vec<Injection> {
    list.injections(netlist)
        .expect("fault list was enumerated on this netlist")
}
