use std::path::PathBuf;

use faultbin_core::array::{
    add_critical_faults, build_fault_map, deactivate_to_threshold, exact_matmul, per_column_quota, plan_bypass,
    systolic_exec, throughput, workload_steps, FaultMap, FsrFile, Injector, Mat, PeStatus,
};
use faultbin_core::rng;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{CliError, Result};
use crate::formats::{read_json, write_json};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArrayBuildParams {
    pub rows: usize,
    pub cols: usize,
    /// Non-critical fault rate in percent.
    pub fr: f64,
    /// Critical fault rate in percent.
    pub fr_crit: f64,
    pub seed: u64,
    pub chip_id: String,
    pub fr_max_non_crit: f64,
    pub out: PathBuf,
}

impl Default for ArrayBuildParams {
    fn default() -> Self {
        ArrayBuildParams {
            rows: 128,
            cols: 128,
            fr: 5.0,
            fr_crit: 0.0,
            seed: 1,
            chip_id: "chip0".into(),
            fr_max_non_crit: 5.0,
            out: "out/array".into(),
        }
    }
}

fn map_summary(map: &FaultMap) -> Value {
    json!({
        "rows": map.rows,
        "cols": map.cols,
        "healthy": map.count(PeStatus::Healthy),
        "noncrit_faulty": map.count(PeStatus::NonCriticalFaulty),
        "crit_faulty": map.count(PeStatus::CriticalFaulty),
        "deactivated": map.count(PeStatus::Deactivated),
        "max_column_rate": (0..map.cols).map(|c| map.fault_rate(c)).fold(0.0, f64::max),
    })
}

pub fn array_build(p: &ArrayBuildParams) -> Result<Value> {
    let mut map = build_fault_map(p.rows, p.cols, p.fr, p.seed)?;
    if p.fr_crit > 0.0 {
        map = add_critical_faults(&map, p.fr_crit)?;
    }
    let fsr = FsrFile::from_map(&map, &p.chip_id, p.fr_max_non_crit);
    fsr.to_map()?;
    write_json(&p.out.join("fsr.json"), &fsr)?;
    Ok(map_summary(&map))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeactivateParams {
    pub fsr: PathBuf,
    /// Overrides the register's own allowed rate.
    pub fr_max: Option<f64>,
    pub out: PathBuf,
}

impl Default for DeactivateParams {
    fn default() -> Self {
        DeactivateParams {
            fsr: "out/array/fsr.json".into(),
            fr_max: None,
            out: "out/deactivate".into(),
        }
    }
}

pub fn array_deactivate(p: &DeactivateParams) -> Result<Value> {
    let fsr: FsrFile = read_json(&p.fsr)?;
    let map = fsr.to_map()?;
    let fr_max = p.fr_max.unwrap_or(fsr.fr_max_non_crit);
    let out = deactivate_to_threshold(&map, fr_max)?;
    let quota = per_column_quota(fr_max.min(100.0), out.rows);
    let within = (0..out.cols).all(|c| out.column_count(c, PeStatus::NonCriticalFaulty) <= quota);
    let fsr_out = FsrFile::from_map(&out, &fsr.chip_id, fr_max);
    write_json(&p.out.join("fsr.json"), &fsr_out)?;
    let mut s = map_summary(&out);
    s["fr_max"] = json!(fr_max);
    s["column_quota"] = json!(quota);
    s["within_quota"] = json!(within);
    s["unchanged"] = json!(out == map);
    Ok(s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThroughputParams {
    pub fsr: PathBuf,
    /// Array iterations of the workload; derived from the matrix shape
    /// when absent.
    pub steps: Option<usize>,
    pub n_reduction: usize,
    pub n_outputs: usize,
    pub out: PathBuf,
}

impl Default for ThroughputParams {
    fn default() -> Self {
        ThroughputParams {
            fsr: "out/array/fsr.json".into(),
            steps: None,
            n_reduction: 784,
            n_outputs: 256,
            out: "out/throughput".into(),
        }
    }
}

pub fn array_throughput(p: &ThroughputParams) -> Result<Value> {
    let fsr: FsrFile = read_json(&p.fsr)?;
    let map = fsr.to_map()?;
    let steps = p
        .steps
        .unwrap_or_else(|| workload_steps(p.n_reduction, p.n_outputs, map.rows, map.cols));
    let report = throughput(&map, steps);
    let consistent = report.simd_factor == report.n_remaining_pe as f64 / report.n_total_pe as f64
        && report.systolic_extra_macs == report.n_dim_sys_arr * report.n_sys_arr_faulty_cols * report.n_steps;
    let mut v = serde_json::to_value(&report).expect("report serializes");
    v["formulas_hold"] = json!(consistent);
    write_json(&p.out.join("throughput.json"), &v)?;
    Ok(v)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BypassCheckParams {
    pub cases: usize,
    pub seed: u64,
    pub max_dim: usize,
    pub min_dead: usize,
    pub max_dead: usize,
    pub out: PathBuf,
}

impl Default for BypassCheckParams {
    fn default() -> Self {
        BypassCheckParams {
            cases: 20,
            seed: 1,
            max_dim: 32,
            min_dead: 1,
            max_dead: 8,
            out: "out/bypass".into(),
        }
    }
}

/// Outcome of one random bypass case.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BypassCase {
    pub rows: usize,
    pub cols: usize,
    pub dead: usize,
    pub n_reduction: usize,
    pub n_outputs: usize,
    pub batch: usize,
    pub steps: usize,
    pub base_steps: usize,
    pub exact: bool,
}

/// One seeded case: a random array with deactivated PEs and a random int8
/// matmul, executed with bypass and compared to the dense product.
pub fn bypass_case(seed: u64, max_dim: usize, min_dead: usize, max_dead: usize) -> Result<BypassCase> {
    let mut r = rng::stream(seed, &[0xB7A5]);
    let rows = r.gen_range(1..=max_dim);
    let cols = r.gen_range(1..=max_dim);
    let cap = (rows * cols - 1).min(max_dead);
    let dead = r.gen_range(min_dead.min(cap)..=cap);
    let mut map = FaultMap::healthy(rows, cols, seed)?;
    for i in rand::seq::index::sample(&mut r, rows * cols, dead) {
        map.set(i / cols, i % cols, PeStatus::Deactivated);
    }
    let n_red = r.gen_range(1..=3 * max_dim);
    let n_out = r.gen_range(1..=2 * max_dim);
    let batch = r.gen_range(1..=4);
    let w = Mat::from_vec(n_red, n_out, (0..n_red * n_out).map(|_| r.gen::<i8>()).collect())?;
    let x = Mat::from_vec(batch, n_red, (0..batch * n_red).map(|_| r.gen::<i8>()).collect())?;
    let plan = plan_bypass(&map, n_red, n_out)?;
    let got = systolic_exec(&w, &x, &map, &plan, &Injector::none())?;
    Ok(BypassCase {
        rows,
        cols,
        dead,
        n_reduction: n_red,
        n_outputs: n_out,
        batch,
        steps: plan.steps,
        base_steps: plan.base_steps,
        exact: got == exact_matmul(&w, &x)?,
    })
}

pub fn array_bypass_check(p: &BypassCheckParams) -> Result<Value> {
    if p.max_dim == 0 || p.min_dead > p.max_dead {
        return Err(CliError::Validation("need max_dim >= 1 and min_dead <= max_dead".into()));
    }
    let cases = (0..p.cases)
        .map(|i| bypass_case(rng::derive(p.seed, &[i as u64]), p.max_dim, p.min_dead, p.max_dead))
        .collect::<Result<Vec<_>>>()?;
    let exact = cases.iter().filter(|c| c.exact).count();
    let report = json!({ "cases": cases.len(), "exact": exact, "all_exact": exact == cases.len(), "details": cases });
    write_json(&p.out.join("bypass_check.json"), &report)?;
    Ok(json!({ "cases": cases.len(), "exact": exact, "all_exact": exact == cases.len() }))
}
