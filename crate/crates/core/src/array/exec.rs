use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{workload_steps, ArrayError, FaultMap, PeStatus};
use crate::macsim::{behavioral_error_bf16, round_bf16, ErrorMode, ErrorModel, FaultErrorTable, MacFormat};
use crate::{par, rng};

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Copy + Default> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![T::default(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, ArrayError> {
        if data.len() != rows * cols {
            return Err(ArrayError::Shape(format!("{} values for a {rows}x{cols} matrix", data.len())));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }
}

/// `acts (B x K) * weights (K x N)` in exact integer arithmetic.
pub fn exact_matmul(weights: &Mat<i8>, acts: &Mat<i8>) -> Result<Mat<i64>, ArrayError> {
    check_shapes(weights.rows, weights.cols, acts)?;
    let mut out = Mat::zeros(acts.rows, weights.cols);
    for b in 0..acts.rows {
        for i in 0..weights.rows {
            let x = acts.get(b, i) as i64;
            if x == 0 {
                continue;
            }
            for j in 0..weights.cols {
                out.data[b * weights.cols + j] += x * weights.get(i, j) as i64;
            }
        }
    }
    Ok(out)
}

fn check_shapes<T>(k: usize, _n: usize, acts: &Mat<T>) -> Result<(), ArrayError> {
    if acts.cols != k {
        return Err(ArrayError::Shape(format!(
            "activations have {} columns, weights have {k} rows",
            acts.cols
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dataflow {
    /// Weight-stationary 2D array: partial sums flow down a column through
    /// every active PE, dead PEs are bypassed by a zero slot.
    #[default]
    Systolic,
    /// Independent PEs: each reduction index is assigned to one active PE of
    /// the column; dead PEs are skipped.
    Simd,
}

/// Weight-stationary placement of a `n_reduction x n_outputs` matrix on a
/// map. Output `j` belongs to logical column `j % cols`. A logical column
/// with no active PE is hosted by the next physical column that has one.
/// Within a host, reduction index `i` goes to tile `i / m` and active row
/// `active[host][i % m]`, where `m` is the host's active row count.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BypassPlan {
    pub rows: usize,
    pub cols: usize,
    pub n_reduction: usize,
    pub n_outputs: usize,
    pub active: Vec<Vec<usize>>,
    pub host: Vec<usize>,
    pub base_steps: usize,
    pub steps: usize,
}

pub fn plan_bypass(map: &FaultMap, n_reduction: usize, n_outputs: usize) -> Result<BypassPlan, ArrayError> {
    BypassPlan::new(map, n_reduction, n_outputs)
}

impl BypassPlan {
    pub fn new(map: &FaultMap, n_reduction: usize, n_outputs: usize) -> Result<BypassPlan, ArrayError> {
        let active: Vec<Vec<usize>> = (0..map.cols).map(|c| map.active_rows(c)).collect();
        if active.iter().all(Vec::is_empty) {
            return Err(ArrayError::NoActivePe);
        }
        let host: Vec<usize> = (0..map.cols)
            .map(|c| {
                (0..map.cols)
                    .map(|d| (c + d) % map.cols)
                    .find(|&p| !active[p].is_empty())
                    .expect("some column is alive")
            })
            .collect();
        let mut plan = BypassPlan {
            rows: map.rows,
            cols: map.cols,
            n_reduction,
            n_outputs,
            active,
            host,
            base_steps: workload_steps(n_reduction, n_outputs, map.rows, map.cols),
            steps: 0,
        };
        let groups = n_outputs.div_ceil(map.cols);
        let mut steps = 0;
        for g in 0..groups {
            let mut load = vec![0usize; map.cols];
            for j in g * map.cols..((g + 1) * map.cols).min(n_outputs) {
                let c = j % map.cols;
                load[plan.host[c]] += plan.tiles(c);
            }
            steps += load.into_iter().max().unwrap_or(0);
        }
        plan.steps = steps;
        Ok(plan)
    }

    /// Active rows available to logical column `c`.
    pub fn active_rows(&self, c: usize) -> &[usize] {
        &self.active[self.host[c]]
    }

    /// Weight tiles logical column `c` needs.
    pub fn tiles(&self, c: usize) -> usize {
        self.n_reduction.div_ceil(self.active_rows(c).len())
    }

    pub fn extra_steps(&self) -> usize {
        self.steps.saturating_sub(self.base_steps)
    }

    /// Physical (row, column) executing reduction index `i` of output `j`.
    pub fn pe_for(&self, j: usize, i: usize) -> (usize, usize) {
        let c = j % self.cols;
        let a = self.active_rows(c);
        (a[i % a.len()], self.host[c])
    }

    /// Reduction index held by each physical row of the host column during
    /// tile `t` of logical column `c`; `None` is a zero weight.
    pub fn tile_slots(&self, c: usize, t: usize) -> Vec<Option<usize>> {
        let a = self.active_rows(c);
        let mut slots = vec![None; self.rows];
        for (s, &r) in a.iter().enumerate() {
            let i = t * a.len() + s;
            if i < self.n_reduction {
                slots[r] = Some(i);
            }
        }
        slots
    }

    fn check(&self, map: &FaultMap, k: usize, n: usize) -> Result<(), ArrayError> {
        if (self.rows, self.cols) != (map.rows, map.cols) {
            return Err(ArrayError::Shape(format!(
                "plan is for a {}x{} array, map is {}x{}",
                self.rows, self.cols, map.rows, map.cols
            )));
        }
        if (self.n_reduction, self.n_outputs) != (k, n) {
            return Err(ArrayError::Shape(format!(
                "plan is for {}x{} weights, got {k}x{n}",
                self.n_reduction, self.n_outputs
            )));
        }
        Ok(())
    }
}

/// Per-MAC perturbation at non-critical faulty PEs that remain active.
/// Operands are `a` = activation, `b` = weight.
#[derive(Clone, Copy, Debug)]
pub struct Injector<'a> {
    pub model: Option<ErrorModel>,
    pub seed: u64,
    pub table: Option<&'a FaultErrorTable>,
}

impl<'a> Injector<'a> {
    pub fn none() -> Self {
        Injector {
            model: None,
            seed: 0,
            table: None,
        }
    }

    pub fn new(model: ErrorModel, seed: u64) -> Self {
        Injector {
            model: Some(model),
            seed,
            table: None,
        }
    }

    /// Operand-dependent errors; each faulty PE draws one fault of `table`.
    pub fn with_table(model: ErrorModel, seed: u64, table: &'a FaultErrorTable) -> Self {
        Injector {
            model: Some(model),
            seed,
            table: Some(table),
        }
    }

    pub fn operand_independent(&self) -> bool {
        match self.model {
            None => true,
            Some(m) => m.operand_independent(),
        }
    }

    /// Fault drawn by PE (`row`, `col`) from the table.
    pub fn pe_fault(&self, row: usize, col: usize) -> Option<usize> {
        let t = self.table.filter(|t| !t.is_empty())?;
        Some((rng::derive(self.seed, &[0x7AB1, row as u64, col as u64]) % t.len() as u64) as usize)
    }

    /// Error added by PE (`row`, `col`) to one MAC.
    pub fn delta(&self, map: &FaultMap, row: usize, col: usize, a: i8, b: i8, acc: i64) -> i64 {
        let Some(model) = self.model else {
            return 0;
        };
        if map.get(row, col) != PeStatus::NonCriticalFaulty {
            return 0;
        }
        match (model.mode, self.table) {
            (ErrorMode::PerFaultNetlist, Some(t)) => match self.pe_fault(row, col) {
                Some(w) => t.error(w, a, b, acc),
                None => 0,
            },
            _ => model.pe_sign(self.seed, row, col) * model.int8_magnitude(),
        }
    }
}

fn check_int(map: &FaultMap, plan: &BypassPlan, weights: &Mat<i8>, acts: &Mat<i8>) -> Result<(), ArrayError> {
    check_shapes(weights.rows, weights.cols, acts)?;
    plan.check(map, weights.rows, weights.cols)
}

fn assemble(batch: usize, n: usize, columns: Vec<Vec<i64>>) -> Mat<i64> {
    let mut out = Mat::zeros(batch, n);
    for (j, col) in columns.into_iter().enumerate() {
        for (b, v) in col.into_iter().enumerate() {
            out.set(b, j, v);
        }
    }
    out
}

/// Weight-stationary execution. Each tile pass sends a partial sum down the
/// host column; every active PE applies `mac(w, x, acc)`, using a zero
/// weight where the plan holds no index, and dead PEs pass the sum through.
pub fn systolic_exec(
    weights: &Mat<i8>,
    acts: &Mat<i8>,
    map: &FaultMap,
    plan: &BypassPlan,
    inj: &Injector,
) -> Result<Mat<i64>, ArrayError> {
    check_int(map, plan, weights, acts)?;
    let cols = par::map_range(weights.cols, |j| {
        let c = j % plan.cols;
        let p = plan.host[c];
        let tiles: Vec<Vec<Option<usize>>> = (0..plan.tiles(c)).map(|t| plan.tile_slots(c, t)).collect();
        (0..acts.rows)
            .map(|b| {
                let mut acc = 0i64;
                for slots in &tiles {
                    for (r, slot) in slots.iter().enumerate() {
                        if !map.get(r, p).is_active() {
                            continue;
                        }
                        let (x, w) = match *slot {
                            Some(i) => (acts.get(b, i), weights.get(i, j)),
                            None => (0, 0),
                        };
                        let d = inj.delta(map, r, p, x, w, acc);
                        acc += x as i64 * w as i64 + d;
                    }
                }
                acc
            })
            .collect()
    });
    Ok(assemble(acts.rows, weights.cols, cols))
}

/// Independent-PE execution: reduction index `i` of output `j` runs on the
/// PE given by `plan.pe_for(j, i)`; inactive PEs receive no work.
pub fn simd_exec(
    weights: &Mat<i8>,
    acts: &Mat<i8>,
    map: &FaultMap,
    plan: &BypassPlan,
    inj: &Injector,
) -> Result<Mat<i64>, ArrayError> {
    check_int(map, plan, weights, acts)?;
    let cols = par::map_range(weights.cols, |j| {
        let pes: Vec<(usize, usize)> = (0..weights.rows).map(|i| plan.pe_for(j, i)).collect();
        (0..acts.rows)
            .map(|b| {
                let mut acc = 0i64;
                for (i, &(r, p)) in pes.iter().enumerate() {
                    let (x, w) = (acts.get(b, i), weights.get(i, j));
                    acc += x as i64 * w as i64 + inj.delta(map, r, p, x, w, acc);
                }
                acc
            })
            .collect()
    });
    Ok(assemble(acts.rows, weights.cols, cols))
}

/// Bfloat16 MAC array with the behavioural worst-case product error at
/// faulty-active PEs. Products are rounded to bfloat16; sums stay `f32`.
pub fn simd_exec_bf16(
    weights: &Mat<f32>,
    acts: &Mat<f32>,
    map: &FaultMap,
    plan: &BypassPlan,
    model: Option<&ErrorModel>,
    seed: u64,
) -> Result<Mat<f32>, ArrayError> {
    check_shapes(weights.rows, weights.cols, acts)?;
    plan.check(map, weights.rows, weights.cols)?;
    if let Some(m) = model {
        if m.format != MacFormat::Bfloat16MacBehavioral {
            return Err(ArrayError::Shape("bfloat16 execution needs a bfloat16 error model".into()));
        }
    }
    let mut out = Mat::zeros(acts.rows, weights.cols);
    for j in 0..weights.cols {
        for b in 0..acts.rows {
            let mut acc = 0f32;
            for i in 0..weights.rows {
                let (r, p) = plan.pe_for(j, i);
                let (x, w) = (acts.get(b, i), weights.get(i, j));
                acc += match model {
                    Some(m) if map.get(r, p) == PeStatus::NonCriticalFaulty => {
                        behavioral_error_bf16(m, m.pe_sign(seed, r, p), x, w)
                    }
                    _ => round_bf16(round_bf16(x) * round_bf16(w)),
                };
            }
            out.set(b, j, acc);
        }
    }
    Ok(out)
}

/// Constant error each logical column adds to every output it computes,
/// valid when the injector is operand-independent.
pub fn column_offsets(
    map: &FaultMap,
    plan: &BypassPlan,
    inj: &Injector,
    flow: Dataflow,
) -> Result<Vec<i64>, ArrayError> {
    if !inj.operand_independent() {
        return Err(ArrayError::Shape("operand-dependent errors have no constant offset".into()));
    }
    if (plan.rows, plan.cols) != (map.rows, map.cols) {
        return Err(ArrayError::Shape("plan and map dimensions differ".into()));
    }
    Ok((0..plan.cols)
        .map(|c| {
            let p = plan.host[c];
            let a = plan.active_rows(c);
            let d = |r: usize| inj.delta(map, r, p, 0, 0, 0);
            match flow {
                Dataflow::Systolic => plan.tiles(c) as i64 * a.iter().map(|&r| d(r)).sum::<i64>(),
                Dataflow::Simd => (0..plan.n_reduction).map(|i| d(a[i % a.len()])).sum(),
            }
        })
        .collect())
}

/// `column_offsets` expanded to the plan's outputs.
pub fn output_offsets(
    map: &FaultMap,
    plan: &BypassPlan,
    inj: &Injector,
    flow: Dataflow,
) -> Result<Vec<i64>, ArrayError> {
    let c = column_offsets(map, plan, inj, flow)?;
    Ok((0..plan.n_outputs).map(|j| c[j % plan.cols]).collect())
}
