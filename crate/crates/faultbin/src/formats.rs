//! On-disk formats: netlists, pattern hex, fault and sweep CSVs, JSON
//! documents.

use std::fs;
use std::path::Path;

use faultbin_core::atpg::{FaultSite, Polarity, TestSet};
use faultbin_core::learn::SweepRow;
use faultbin_core::macsim::MaxErrorRow;
use faultbin_core::netlist::{emit_netlist, parse_netlist, Pin, RawNetlist};
use faultbin_core::{BitVec, GateId, Netlist};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "json")
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::parse(path, e))
}

pub fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    write_bytes(path, to_json(v).as_bytes())
}

/// Text format, or its JSON mirror when the extension is `.json`.
pub fn read_netlist(path: &Path) -> Result<Netlist> {
    if is_json(path) {
        let raw: RawNetlist = read_json(path)?;
        Ok(Netlist::from_raw(&raw)?)
    } else {
        parse_netlist(&read_text(path)?).map_err(|e| match e {
            faultbin_core::netlist::NetlistError::Syntax { .. } => CliError::parse(path, e),
            other => other.into(),
        })
    }
}

pub fn write_netlist(path: &Path, nl: &Netlist) -> Result<()> {
    if is_json(path) {
        write_json(path, &nl.to_raw())
    } else {
        write_bytes(path, emit_netlist(nl).as_bytes())
    }
}

/// Header line naming the bus order, then one hex input per line.
pub fn patterns_text(buses: &[(String, usize)], patterns: &[BitVec]) -> String {
    let mut s = String::from("# buses");
    for (name, w) in buses {
        s.push_str(&format!(" {name}:{w}"));
    }
    s.push('\n');
    for p in patterns {
        s.push_str(&p.to_hex());
        s.push('\n');
    }
    s
}

/// `(name, width)` of each input bus, in netlist order.
pub type Buses = Vec<(String, usize)>;

pub fn read_patterns(path: &Path) -> Result<(Buses, Vec<BitVec>)> {
    let text = read_text(path)?;
    let mut buses = Vec::new();
    let mut patterns = Vec::new();
    let mut width = None;
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if let Some(rest) = line.strip_prefix("# buses") {
            for tok in rest.split_whitespace() {
                let (n, w) = tok
                    .split_once(':')
                    .and_then(|(n, w)| Some((n.to_string(), w.parse::<usize>().ok()?)))
                    .ok_or_else(|| CliError::parse(path, format!("line {}: bad bus `{tok}`", ln + 1)))?;
                buses.push((n, w));
            }
            width = Some(buses.iter().map(|b| b.1).sum::<usize>());
            continue;
        }
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let w = width.ok_or_else(|| CliError::parse(path, "pattern before the `# buses` header"))?;
        let p = BitVec::from_hex(w, line)
            .ok_or_else(|| CliError::parse(path, format!("line {}: bad hex `{line}`", ln + 1)))?;
        patterns.push(p);
    }
    if width.is_none() {
        return Err(CliError::parse(path, "missing `# buses` header"));
    }
    Ok((buses, patterns))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultRow {
    pub gate: u32,
    pub pin: String,
    pub polarity: String,
    /// `crit` or `noncrit`.
    pub class: String,
    /// Index of the first detecting pattern in the class's set, or
    /// `redundant` / `aborted` / empty.
    pub detected_by: String,
}

impl FaultRow {
    pub fn site(&self) -> std::result::Result<FaultSite, String> {
        Ok(FaultSite {
            gate: GateId(self.gate),
            pin: Pin::parse(&self.pin).ok_or_else(|| format!("bad pin `{}`", self.pin))?,
            polarity: Polarity::parse(&self.polarity).ok_or_else(|| format!("bad polarity `{}`", self.polarity))?,
        })
    }
}

/// Fault rows of one class with the first pattern of `ts` detecting each.
pub fn fault_rows(ts: &TestSet, class: &str) -> Vec<FaultRow> {
    let mut first = vec![None; ts.faults.len()];
    for (pi, d) in ts.detects.iter().enumerate() {
        for &f in d {
            first[f as usize].get_or_insert(pi);
        }
    }
    ts.faults
        .sites
        .iter()
        .enumerate()
        .map(|(i, s)| FaultRow {
            gate: s.gate.0,
            pin: s.pin.to_string(),
            polarity: s.polarity.name().to_string(),
            class: class.to_string(),
            detected_by: match first[i] {
                Some(p) => p.to_string(),
                None if ts.redundant.contains(&(i as u32)) => "redundant".into(),
                None if ts.aborted.contains(&(i as u32)) => "aborted".into(),
                None => String::new(),
            },
        })
        .collect()
}

pub fn csv_text<T: Serialize>(rows: &[T]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = read_text(path)?;
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| CliError::parse(path, e))
}

#[derive(Serialize)]
struct MaxErrorCsv<'a> {
    fault: &'a str,
    max_error: u64,
    bound: u64,
    compliant: bool,
    exhaustive: bool,
}

pub fn max_error_csv(rows: &[MaxErrorRow]) -> String {
    let r: Vec<MaxErrorCsv> = rows
        .iter()
        .map(|r| MaxErrorCsv {
            fault: &r.fault,
            max_error: r.max_error,
            bound: r.bound,
            compliant: r.compliant,
            exhaustive: r.exhaustive,
        })
        .collect();
    csv_text(&r)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    csv_text(rows)
}
