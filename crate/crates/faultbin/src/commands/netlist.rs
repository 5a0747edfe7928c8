use std::path::PathBuf;

use faultbin_core::atpg::{
    all_faults, fault_simulate, generate_patterns, split_pattern_generation, AtpgOptions, FaultList, TestSet,
};
use faultbin_core::cones::{partition as cone_partition, partition_with_carry, ConePartition};
use faultbin_core::macsim::{max_error_sweep, MaxErrorOptions};
use faultbin_core::netlist::{gen_baugh_wooley, gen_cla_adder, gen_mac_int8, gen_ripple_adder};
use faultbin_core::{rng, Netlist};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{CliError, Result};
use crate::formats::{
    csv_text, fault_rows, max_error_csv, patterns_text, read_csv, read_json, read_netlist, read_patterns,
    write_bytes, write_json, write_netlist, FaultRow,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenParams {
    /// `mac-int8`, `bw`, `cla` or `ripple`.
    pub kind: String,
    pub width: usize,
    /// Ripple adder only: drop the carry out of this bit.
    pub cut_after: Option<usize>,
    pub json: bool,
    pub out: PathBuf,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            kind: "mac-int8".into(),
            width: 8,
            cut_after: None,
            json: false,
            out: "out/gen".into(),
        }
    }
}

pub fn gen(p: &GenParams) -> Result<Value> {
    let nl = match p.kind.as_str() {
        "mac-int8" => gen_mac_int8(),
        "bw" => gen_baugh_wooley(p.width),
        "cla" => gen_cla_adder(p.width),
        "ripple" => gen_ripple_adder(p.width, p.cut_after),
        k => return Err(CliError::Validation(format!("unknown generator `{k}` (mac-int8, bw, cla, ripple)"))),
    }?;
    write_netlist(&p.out.join("netlist.net"), &nl)?;
    if p.json {
        write_netlist(&p.out.join("netlist.json"), &nl)?;
    }
    Ok(json!({
        "kind": p.kind,
        "gates": nl.gates().len(),
        "nets": nl.num_nets(),
        "inputs": nl.input_buses().iter().map(|b| (b.name.clone(), b.width())).collect::<Vec<_>>(),
        "outputs": nl.output_buses().iter().map(|b| (b.name.clone(), b.width())).collect::<Vec<_>>(),
        "carry_annotations": nl.carry_annotations().len(),
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionParams {
    pub netlist: PathBuf,
    pub k: usize,
    /// Carry-in net of bit `k+1` when the netlist lacks the annotation.
    pub carry_net: Option<String>,
    pub out: PathBuf,
}

impl Default for PartitionParams {
    fn default() -> Self {
        PartitionParams {
            netlist: "out/gen/netlist.net".into(),
            k: 1,
            carry_net: None,
            out: "out/partition".into(),
        }
    }
}

fn compute_partition(nl: &Netlist, k: usize, carry_net: Option<&str>) -> Result<ConePartition> {
    Ok(match carry_net {
        Some(name) => {
            let net = nl
                .net_by_name(name)
                .ok_or_else(|| CliError::Validation(format!("no net named `{name}`")))?;
            partition_with_carry(nl, k, Some(net))?
        }
        None => cone_partition(nl, k)?,
    })
}

fn partition_summary(part: &ConePartition) -> Value {
    json!({
        "k": part.k,
        "g_noncrit": part.g_noncrit.len(),
        "g_crit": part.g_crit.len(),
        "g_carry_overlap": part.g_carry_overlap.len(),
        "f_crit": part.f_crit.len(),
        "f_crit_uncollapsed": part.f_crit.uncollapsed_len(),
        "f_noncrit": part.f_noncrit.len(),
        "f_noncrit_uncollapsed": part.f_noncrit.uncollapsed_len(),
    })
}

pub fn partition(p: &PartitionParams) -> Result<Value> {
    let nl = read_netlist(&p.netlist)?;
    let part = compute_partition(&nl, p.k, p.carry_net.as_deref())?;
    write_json(&p.out.join("partition.json"), &part)?;
    Ok(partition_summary(&part))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AtpgParams {
    pub netlist: PathBuf,
    /// Precomputed partition; otherwise computed from `k`.
    pub partition: Option<PathBuf>,
    pub k: usize,
    pub carry_net: Option<String>,
    pub seed: u64,
    pub backtrack_limit: usize,
    pub out: PathBuf,
}

impl Default for AtpgParams {
    fn default() -> Self {
        AtpgParams {
            netlist: "out/gen/netlist.net".into(),
            partition: None,
            k: 1,
            carry_net: None,
            seed: 1,
            backtrack_limit: AtpgOptions::default().backtrack_limit,
            out: "out/atpg".into(),
        }
    }
}

/// One row of the coverage report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub set: String,
    pub cells: usize,
    pub faults: usize,
    pub faults_uncollapsed: usize,
    pub patterns: usize,
    pub detected: usize,
    pub redundant: usize,
    pub aborted: usize,
    pub fault_coverage: f64,
    /// Detected over detectable (redundant faults excluded).
    pub test_coverage: f64,
    pub uncollapsed_fault_coverage: f64,
    pub uncollapsed_test_coverage: f64,
    /// An independent fault simulation of the written patterns detects
    /// exactly the same faults.
    pub resimulation_agrees: bool,
}

fn coverage_row(nl: &Netlist, set: &str, cells: usize, ts: &TestSet) -> CoverageRow {
    let resim = fault_simulate(nl, ts.patterns.clone(), &ts.faults);
    CoverageRow {
        set: set.into(),
        cells,
        faults: ts.faults.len(),
        faults_uncollapsed: ts.faults.uncollapsed_len(),
        patterns: ts.patterns.len(),
        detected: ts.detected_count(),
        redundant: ts.redundant.len(),
        aborted: ts.aborted.len(),
        fault_coverage: ts.fault_coverage(),
        test_coverage: ts.test_coverage(),
        uncollapsed_fault_coverage: ts.uncollapsed_fault_coverage(),
        uncollapsed_test_coverage: ts.uncollapsed_test_coverage(),
        resimulation_agrees: resim.detected == ts.detected,
    }
}

pub fn atpg(p: &AtpgParams) -> Result<Value> {
    let nl = read_netlist(&p.netlist)?;
    let part: ConePartition = match &p.partition {
        Some(path) => read_json(path)?,
        None => compute_partition(&nl, p.k, p.carry_net.as_deref())?,
    };
    let opts = AtpgOptions {
        backtrack_limit: p.backtrack_limit,
        ..AtpgOptions::default()
    };
    let all = generate_patterns(&nl, &all_faults(&nl).collapse(&nl), rng::derive(p.seed, &[0]), &opts);
    let (crit, noncrit) = split_pattern_generation(&nl, &part, p.seed, &opts);
    let mut rows = Vec::new();
    for (name, cells, ts) in [
        ("all", nl.gates().len(), &all),
        ("crit", part.critical_gates().len(), &crit),
        ("noncrit", part.g_noncrit.len(), &noncrit),
    ] {
        write_bytes(
            &p.out.join(format!("patterns_{name}.hex")),
            patterns_text(&ts.input_buses, &ts.patterns).as_bytes(),
        )?;
        rows.push(coverage_row(&nl, name, cells, ts));
    }
    let mut frows = fault_rows(&crit, "crit");
    frows.extend(fault_rows(&noncrit, "noncrit"));
    write_bytes(&p.out.join("faults.csv"), csv_text(&frows).as_bytes())?;
    let report = json!({ "k": part.k, "seed": p.seed, "rows": rows });
    write_json(&p.out.join("coverage.json"), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FsimParams {
    pub netlist: PathBuf,
    pub patterns: PathBuf,
    /// Fault CSV; all collapsed faults of the netlist otherwise.
    pub faults: Option<PathBuf>,
    /// Restrict the CSV to one class (`crit` or `noncrit`).
    pub class: Option<String>,
    pub out: PathBuf,
}

impl Default for FsimParams {
    fn default() -> Self {
        FsimParams {
            netlist: "out/gen/netlist.net".into(),
            patterns: "out/atpg/patterns_all.hex".into(),
            faults: None,
            class: None,
            out: "out/fsim".into(),
        }
    }
}

pub fn fsim(p: &FsimParams) -> Result<Value> {
    let nl = read_netlist(&p.netlist)?;
    let (buses, patterns) = read_patterns(&p.patterns)?;
    let want: Vec<(String, usize)> = nl.input_buses().iter().map(|b| (b.name.clone(), b.width())).collect();
    if buses != want {
        return Err(CliError::Validation(format!("pattern buses {buses:?} do not match netlist inputs {want:?}")));
    }
    let (faults, redundant) = match &p.faults {
        Some(path) => {
            let rows: Vec<FaultRow> = read_csv(path)?;
            let rows: Vec<FaultRow> = rows
                .into_iter()
                .filter(|r| p.class.as_ref().is_none_or(|c| &r.class == c))
                .collect();
            let sites = rows
                .iter()
                .map(|r| r.site().map_err(|e| CliError::parse(path, e)))
                .collect::<Result<Vec<_>>>()?;
            let redundant = rows.iter().filter(|r| r.detected_by == "redundant").count();
            (
                FaultList {
                    sites,
                    collapsed: false,
                    classes: None,
                },
                redundant,
            )
        }
        None => (all_faults(&nl).collapse(&nl), 0),
    };
    for s in &faults.sites {
        s.injection(&nl)?;
    }
    let ts = fault_simulate(&nl, patterns, &faults);
    let detected = ts.detected_count();
    let n = faults.len();
    let ratio = |a: usize, b: usize| if b == 0 { 1.0 } else { a as f64 / b as f64 };
    let undetected: Vec<String> = faults
        .sites
        .iter()
        .zip(&ts.detected)
        .filter(|(_, &d)| !d)
        .map(|(s, _)| s.to_string())
        .collect();
    let report = json!({
        "faults": n,
        "patterns": ts.patterns.len(),
        "detected": detected,
        "redundant": redundant,
        "fault_coverage": ratio(detected, n),
        "test_coverage": ratio(detected, n - redundant),
        "undetected": undetected,
    });
    write_json(&p.out.join("fsim.json"), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaxErrorParams {
    /// Defaults to the generated int8 MAC.
    pub netlist: Option<PathBuf>,
    pub k: usize,
    pub carry_net: Option<String>,
    /// `noncrit`, `crit` or `all`.
    pub class: String,
    pub exhaustive_limit_bits: usize,
    pub samples: usize,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for MaxErrorParams {
    fn default() -> Self {
        let o = MaxErrorOptions::default();
        MaxErrorParams {
            netlist: None,
            k: 1,
            carry_net: None,
            class: "noncrit".into(),
            exhaustive_limit_bits: o.exhaustive_limit_bits,
            samples: o.samples,
            seed: o.seed,
            out: "out/max_error".into(),
        }
    }
}

pub fn max_error(p: &MaxErrorParams) -> Result<Value> {
    let nl = match &p.netlist {
        Some(path) => read_netlist(path)?,
        None => gen_mac_int8()?,
    };
    let part = compute_partition(&nl, p.k, p.carry_net.as_deref())?;
    let list = match p.class.as_str() {
        "noncrit" => part.f_noncrit,
        "crit" => part.f_crit,
        "all" => all_faults(&nl).collapse(&nl),
        c => return Err(CliError::Validation(format!("unknown class `{c}` (noncrit, crit, all)"))),
    };
    let opts = MaxErrorOptions {
        exhaustive_limit_bits: p.exhaustive_limit_bits,
        samples: p.samples,
        seed: p.seed,
    };
    let rows = max_error_sweep(&nl, &list, p.k as u32, &opts)?;
    write_bytes(&p.out.join("max_error.csv"), max_error_csv(&rows).as_bytes())?;
    let report = json!({
        "k": p.k,
        "class": p.class,
        "faults": rows.len(),
        "compliant": rows.iter().filter(|r| r.compliant).count(),
        "exhaustive": rows.iter().all(|r| r.exhaustive),
        "worst": rows.iter().map(|r| r.max_error).max().unwrap_or(0),
        "bound": faultbin_core::macsim::error_bound(p.k as u32),
    });
    write_json(&p.out.join("max_error.json"), &report)?;
    Ok(report)
}
