//! The PE array: per-PE fault status, the deactivation protocol, the
//! persisted status register, throughput accounting, and matrix execution
//! with bypass of deactivated PEs.

mod exec;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::rng;

pub use exec::{
    column_offsets, exact_matmul, output_offsets, plan_bypass, simd_exec, simd_exec_bf16, systolic_exec, BypassPlan, Dataflow,
    Injector, Mat,
};

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum ArrayError {
    #[error("fault rate {0} is outside [0, 100]")]
    RateOutOfRange(f64),
    #[error("array dimensions must be positive, got {rows}x{cols}")]
    EmptyArray { rows: usize, cols: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("every PE is deactivated")]
    NoActivePe,
    #[error("corrupt status register: {0}")]
    CorruptFsr(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PeStatus {
    Healthy,
    NonCriticalFaulty,
    CriticalFaulty,
    Deactivated,
}

impl PeStatus {
    pub fn code(self) -> char {
        match self {
            PeStatus::Healthy => 'H',
            PeStatus::NonCriticalFaulty => 'N',
            PeStatus::CriticalFaulty => 'C',
            PeStatus::Deactivated => 'D',
        }
    }

    pub fn from_code(c: char) -> Option<PeStatus> {
        match c {
            'H' => Some(PeStatus::Healthy),
            'N' => Some(PeStatus::NonCriticalFaulty),
            'C' => Some(PeStatus::CriticalFaulty),
            'D' => Some(PeStatus::Deactivated),
            _ => None,
        }
    }

    /// Scheduled for execution. Critical PEs never are.
    pub fn is_active(self) -> bool {
        matches!(self, PeStatus::Healthy | PeStatus::NonCriticalFaulty)
    }
}

/// Row-major PE status grid.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultMap {
    pub rows: usize,
    pub cols: usize,
    pub seed: u64,
    status: Vec<PeStatus>,
}

impl FaultMap {
    pub fn healthy(rows: usize, cols: usize, seed: u64) -> Result<FaultMap, ArrayError> {
        if rows == 0 || cols == 0 {
            return Err(ArrayError::EmptyArray { rows, cols });
        }
        Ok(FaultMap {
            rows,
            cols,
            seed,
            status: alloc::vec![PeStatus::Healthy; rows * cols],
        })
    }

    pub fn get(&self, row: usize, col: usize) -> PeStatus {
        self.status[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, s: PeStatus) {
        self.status[row * self.cols + col] = s;
    }

    pub fn statuses(&self) -> &[PeStatus] {
        &self.status
    }

    pub fn count(&self, s: PeStatus) -> usize {
        self.status.iter().filter(|&&x| x == s).count()
    }

    pub fn column_count(&self, col: usize, s: PeStatus) -> usize {
        (0..self.rows).filter(|&r| self.get(r, col) == s).count()
    }

    /// Non-critical faulty PEs in `col` over `rows`, as a fraction.
    pub fn fault_rate(&self, col: usize) -> f64 {
        self.column_count(col, PeStatus::NonCriticalFaulty) as f64 / self.rows as f64
    }

    /// Active rows of `col`, ascending.
    pub fn active_rows(&self, col: usize) -> Vec<usize> {
        (0..self.rows).filter(|&r| self.get(r, col).is_active()).collect()
    }

    /// Linear PE ids (`row * cols + col`) with the given status.
    pub fn fail_ids(&self, s: PeStatus) -> Vec<usize> {
        self.status
            .iter()
            .enumerate()
            .filter(|(_, &x)| x == s)
            .map(|(i, _)| i)
            .collect()
    }
}

fn check_rate(fr: f64) -> Result<(), ArrayError> {
    if (0.0..=100.0).contains(&fr) {
        Ok(())
    } else {
        Err(ArrayError::RateOutOfRange(fr))
    }
}

/// Faulty PEs per column at rate `fr` percent, rounded half up.
pub fn per_column_count(fr: f64, rows: usize) -> usize {
    libm::floor(fr * rows as f64 / 100.0 + 0.5) as usize
}

/// Largest faulty count per column that keeps the rate at or below `fr`.
pub fn per_column_quota(fr: f64, rows: usize) -> usize {
    (libm::floor(fr * rows as f64 / 100.0 + 1e-9) as usize).min(rows)
}

fn mark_random(map: &mut FaultMap, col: usize, count: usize, stream: &[u64], s: PeStatus) {
    let free: Vec<usize> = (0..map.rows).filter(|&r| map.get(r, col) == PeStatus::Healthy).collect();
    let count = count.min(free.len());
    let mut r = rng::stream(map.seed, stream);
    for i in sample(&mut r, free.len(), count).into_iter() {
        map.set(free[i], col, s);
    }
}

/// Each column gets exactly `per_column_count(fr, rows)` non-critical
/// faulty PEs at seeded uniform row positions.
pub fn build_fault_map(rows: usize, cols: usize, fr: f64, seed: u64) -> Result<FaultMap, ArrayError> {
    check_rate(fr)?;
    let mut map = FaultMap::healthy(rows, cols, seed)?;
    let n = per_column_count(fr, rows);
    for c in 0..cols {
        mark_random(&mut map, c, n, &[1, c as u64], PeStatus::NonCriticalFaulty);
    }
    Ok(map)
}

/// Additionally mark `per_column_count(fr_crit, rows)` healthy PEs of each
/// column as critically faulty.
pub fn add_critical_faults(map: &FaultMap, fr_crit: f64) -> Result<FaultMap, ArrayError> {
    check_rate(fr_crit)?;
    let mut out = map.clone();
    let n = per_column_count(fr_crit, map.rows);
    for c in 0..map.cols {
        mark_random(&mut out, c, n, &[2, c as u64], PeStatus::CriticalFaulty);
    }
    Ok(out)
}

/// Deactivate every critical PE and, per column, a seeded uniform choice of
/// non-critical faulty PEs beyond `per_column_quota(fr_max, rows)`.
pub fn deactivate_to_threshold(map: &FaultMap, fr_max: f64) -> Result<FaultMap, ArrayError> {
    if fr_max.is_nan() || fr_max < 0.0 {
        return Err(ArrayError::RateOutOfRange(fr_max));
    }
    let mut out = map.clone();
    let quota = per_column_quota(fr_max.min(100.0), map.rows);
    for c in 0..map.cols {
        let mut faulty = Vec::new();
        for r in 0..map.rows {
            match map.get(r, c) {
                PeStatus::CriticalFaulty => out.set(r, c, PeStatus::Deactivated),
                PeStatus::NonCriticalFaulty => faulty.push(r),
                _ => {}
            }
        }
        if faulty.len() > quota {
            let mut rg = rng::stream(map.seed, &[3, c as u64]);
            for i in sample(&mut rg, faulty.len(), faulty.len() - quota).into_iter() {
                out.set(faulty[i], c, PeStatus::Deactivated);
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub n_total_pe: usize,
    pub n_remaining_pe: usize,
    pub simd_factor: f64,
    pub n_dim_sys_arr: usize,
    pub n_sys_arr_faulty_cols: usize,
    pub n_steps: usize,
    pub systolic_extra_macs: usize,
}

/// SIMD throughput scale and systolic extra MACs for a workload of
/// `n_steps` array iterations.
pub fn throughput(map: &FaultMap, n_steps: usize) -> ThroughputReport {
    let n_total_pe = map.rows * map.cols;
    let n_remaining_pe = map.statuses().iter().filter(|s| s.is_active()).count();
    let faulty_cols = (0..map.cols)
        .filter(|&c| (0..map.rows).any(|r| !map.get(r, c).is_active()))
        .count();
    ThroughputReport {
        n_total_pe,
        n_remaining_pe,
        simd_factor: n_remaining_pe as f64 / n_total_pe as f64,
        n_dim_sys_arr: map.rows,
        n_sys_arr_faulty_cols: faulty_cols,
        n_steps,
        systolic_extra_macs: map.rows * faulty_cols * n_steps,
    }
}

/// Array iterations for a `n_reduction x n_outputs` weight matrix.
pub fn workload_steps(n_reduction: usize, n_outputs: usize, rows: usize, cols: usize) -> usize {
    n_reduction.div_ceil(rows) * n_outputs.div_ceil(cols)
}

/// Persisted status register: the map, chip identity and the allowed
/// non-critical fault rate. Status is run-length encoded row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FsrFile {
    pub chip_id: String,
    pub rows: usize,
    pub cols: usize,
    pub seed: u64,
    pub fr_max_non_crit: f64,
    pub status: Vec<(char, usize)>,
}

impl FsrFile {
    pub fn from_map(map: &FaultMap, chip_id: &str, fr_max_non_crit: f64) -> FsrFile {
        let mut status: Vec<(char, usize)> = Vec::new();
        for s in map.statuses() {
            match status.last_mut() {
                Some((c, n)) if *c == s.code() => *n += 1,
                _ => status.push((s.code(), 1)),
            }
        }
        FsrFile {
            chip_id: chip_id.into(),
            rows: map.rows,
            cols: map.cols,
            seed: map.seed,
            fr_max_non_crit,
            status,
        }
    }

    pub fn to_map(&self) -> Result<FaultMap, ArrayError> {
        let mut map =
            FaultMap::healthy(self.rows, self.cols, self.seed).map_err(|e| ArrayError::CorruptFsr(format!("{e}")))?;
        let mut grid = Vec::with_capacity(self.rows * self.cols);
        for &(c, n) in &self.status {
            let s = PeStatus::from_code(c).ok_or_else(|| ArrayError::CorruptFsr(format!("unknown status `{c}`")))?;
            if grid.len() + n > self.rows * self.cols {
                return Err(ArrayError::CorruptFsr("more entries than PEs".into()));
            }
            grid.extend(core::iter::repeat_n(s, n));
        }
        if grid.len() != self.rows * self.cols {
            return Err(ArrayError::CorruptFsr(format!(
                "{} entries for {} PEs",
                grid.len(),
                self.rows * self.cols
            )));
        }
        if !(self.fr_max_non_crit >= 0.0 && self.fr_max_non_crit <= 100.0) {
            return Err(ArrayError::CorruptFsr(format!("fr_max_non_crit {}", self.fr_max_non_crit)));
        }
        map.status = grid;
        Ok(map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn build_extremes_and_rounding() {
        let m = build_fault_map(128, 128, 0.0, 1).unwrap();
        assert_eq!(m.count(PeStatus::Healthy), 128 * 128);
        let m = build_fault_map(16, 8, 100.0, 1).unwrap();
        assert_eq!(m.count(PeStatus::NonCriticalFaulty), 16 * 8);
        let m = build_fault_map(128, 128, 5.0, 7).unwrap();
        for c in 0..128 {
            assert_eq!(m.column_count(c, PeStatus::NonCriticalFaulty), 6);
        }
        assert_eq!(per_column_count(2.5, 128), 3);
        assert_eq!(per_column_count(10.0, 128), 13);
        assert!(build_fault_map(4, 4, 100.5, 0).is_err());
        assert!(build_fault_map(4, 4, -1.0, 0).is_err());
    }

    #[test]
    fn deactivation_examples() {
        let m = build_fault_map(128, 128, 10.0, 3).unwrap();
        let d = deactivate_to_threshold(&m, 5.0).unwrap();
        for c in 0..128 {
            assert!(d.fault_rate(c) <= 0.05);
        }
        let m5 = build_fault_map(128, 128, 5.0, 3).unwrap();
        assert_eq!(deactivate_to_threshold(&m5, 5.0).unwrap(), m5);
        assert_eq!(deactivate_to_threshold(&m5, 20.0).unwrap(), m5);
        let z = deactivate_to_threshold(&m, 0.0).unwrap();
        assert_eq!(z.count(PeStatus::NonCriticalFaulty), 0);
        let t = throughput(&z, 1);
        assert_eq!(t.n_remaining_pe, m.count(PeStatus::Healthy));
    }

    #[test]
    fn criticals_are_always_deactivated() {
        let m = add_critical_faults(&build_fault_map(32, 8, 10.0, 9).unwrap(), 5.0).unwrap();
        assert_eq!(m.count(PeStatus::CriticalFaulty), 8 * 2);
        let d = deactivate_to_threshold(&m, 100.0).unwrap();
        assert_eq!(d.count(PeStatus::CriticalFaulty), 0);
        assert_eq!(d.count(PeStatus::Deactivated), 16);
        assert_eq!(d.fail_ids(PeStatus::Deactivated).len(), 16);
    }

    #[test]
    fn throughput_examples() {
        let m = FaultMap::healthy(128, 128, 0).unwrap();
        let t = throughput(&m, 3);
        assert_eq!((t.simd_factor, t.systolic_extra_macs), (1.0, 0));
        let mut m = m;
        let mut k = 0;
        'outer: for c in 0..128 {
            for r in 0..128 {
                if k == 819 {
                    break 'outer;
                }
                m.set(r, c, PeStatus::Deactivated);
                k += 1;
            }
        }
        let t = throughput(&m, 3);
        assert!((t.simd_factor - 0.95).abs() < 1e-4);
        let mut m = FaultMap::healthy(128, 128, 0).unwrap();
        for c in [1, 5, 9, 100] {
            m.set(7, c, PeStatus::Deactivated);
        }
        assert_eq!(throughput(&m, 3).systolic_extra_macs, 1536);
    }

    #[test]
    fn fsr_rejects_corruption() {
        let m = build_fault_map(8, 8, 25.0, 2).unwrap();
        let mut f = FsrFile::from_map(&m, "chip", 5.0);
        assert_eq!(f.to_map().unwrap(), m);
        f.status.push(('H', 1));
        assert!(f.to_map().is_err());
        let mut g = FsrFile::from_map(&m, "chip", 5.0);
        g.status[0].0 = 'Q';
        assert!(g.to_map().is_err());
    }

    proptest! {
        #[test]
        fn deactivation_quota_and_idempotence(
            rows in 1usize..64, cols in 1usize..12, fr in 0.0f64..100.0,
            fr_max in 0.0f64..100.0, crit in 0.0f64..10.0, seed in any::<u64>()
        ) {
            let m = add_critical_faults(&build_fault_map(rows, cols, fr, seed).unwrap(), crit).unwrap();
            let d = deactivate_to_threshold(&m, fr_max).unwrap();
            for c in 0..cols {
                prop_assert!(d.fault_rate(c) <= fr_max / 100.0 + 1e-9);
            }
            prop_assert_eq!(d.count(PeStatus::CriticalFaulty), 0);
            prop_assert_eq!(&deactivate_to_threshold(&d, fr_max).unwrap(), &d);
        }

        #[test]
        fn fsr_round_trip(rows in 1usize..40, cols in 1usize..40, fr in 0.0f64..100.0, seed in any::<u64>()) {
            let m = build_fault_map(rows, cols, fr, seed).unwrap();
            let m = deactivate_to_threshold(&m, fr / 2.0).unwrap();
            let f = FsrFile::from_map(&m, "x", fr / 2.0);
            prop_assert_eq!(f.to_map().unwrap(), m);
        }
    }
}
