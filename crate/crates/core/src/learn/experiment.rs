use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{quantize, Dataset, FaultContext, FloatModel, LearnError, QuantizedModel, TrainOptions};
use crate::array::{
    build_fault_map, deactivate_to_threshold, output_offsets, plan_bypass, throughput, Dataflow, FaultMap, FsrFile,
    Injector, ThroughputReport,
};
use crate::macsim::{ErrorMode, ErrorModel, FaultErrorTable};
use crate::{par, rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub fault_rates: Vec<f64>,
    pub trials: usize,
    pub k: u32,
    pub seed: u64,
    pub rows: usize,
    pub cols: usize,
    pub flow: Dataflow,
    /// Deactivate down to this rate before inference.
    pub fr_max: Option<f64>,
    pub acc_inf_threshold: f64,
    pub delta_step: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            fault_rates: vec![0.0, 2.5, 5.0, 7.5, 10.0],
            trials: 10,
            k: 1,
            seed: 1,
            rows: 128,
            cols: 128,
            flow: Dataflow::Systolic,
            fr_max: None,
            acc_inf_threshold: 0.97,
            delta_step: 2.5,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        if self.trials == 0 {
            return Err(LearnError::Config("trials must be at least 1".into()));
        }
        if let Some(r) = self.fault_rates.iter().find(|r| !(0.0..=100.0).contains(*r)) {
            return Err(LearnError::Config(format!("fault rate {r} outside [0, 100]")));
        }
        if self.delta_step.is_nan() || self.delta_step <= 0.0 {
            return Err(LearnError::Config("delta_step must be positive".into()));
        }
        if self.rows == 0 || self.cols == 0 {
            return Err(LearnError::Config("array dimensions must be positive".into()));
        }
        Ok(())
    }

    pub fn error_model(&self) -> ErrorModel {
        ErrorModel::int8_worst_case(self.k)
    }
}

/// Fault map of one trial; maps are fixed for the whole trial.
pub fn fault_map_for_trial(cfg: &ExperimentConfig, rate: f64, trial: usize) -> Result<FaultMap, LearnError> {
    let seed = rng::derive(cfg.seed, &[0xF17E, rate.to_bits(), trial as u64]);
    let map = build_fault_map(cfg.rows, cfg.cols, rate, seed)?;
    Ok(match cfg.fr_max {
        Some(f) => deactivate_to_threshold(&map, f)?,
        None => map,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rate: f64,
    pub trial: usize,
    pub accuracy: f64,
    pub normalized_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub rate: f64,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_normalized: f64,
    pub std_normalized: f64,
    /// `1 - mean_normalized`.
    pub normalized_drop: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub baseline_accuracy: f64,
    pub rows: Vec<SweepRow>,
    pub summary: Vec<RateSummary>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, libm::sqrt(var))
}

fn injector<'a>(model: ErrorModel, seed: u64, table: Option<&'a FaultErrorTable>) -> Injector<'a> {
    match (model.mode, table) {
        (ErrorMode::PerFaultNetlist, Some(t)) => Injector::with_table(model, seed, t),
        _ => Injector::new(model, seed),
    }
}

/// Test accuracy under `trials` fault maps per rate, normalized to the
/// fault-free accuracy of the same model. With `table`, faulty PEs carry
/// operand-dependent netlist faults instead of the worst-case error.
pub fn accuracy_sweep(
    model: &QuantizedModel,
    test: &Dataset,
    cfg: &ExperimentConfig,
    table: Option<&FaultErrorTable>,
) -> Result<SweepResult, LearnError> {
    cfg.validate()?;
    let baseline = model.accuracy(test, None)?;
    let mut err = cfg.error_model();
    if table.is_some() {
        err.mode = ErrorMode::PerFaultNetlist;
    }
    let jobs: Vec<(f64, usize)> = cfg
        .fault_rates
        .iter()
        .flat_map(|&r| (0..cfg.trials).map(move |t| (r, t)))
        .collect();
    let accs = par::map(&jobs, |&(rate, trial)| -> Result<f64, LearnError> {
        let map = fault_map_for_trial(cfg, rate, trial)?;
        let ctx = FaultContext {
            map: &map,
            inj: injector(err, map.seed, table),
            flow: cfg.flow,
        };
        model.accuracy(test, Some(&ctx))
    });
    let norm = |a: f64| if baseline > 0.0 { a / baseline } else { 0.0 };
    let mut rows = Vec::with_capacity(jobs.len());
    for (&(rate, trial), a) in jobs.iter().zip(accs) {
        let accuracy = a?;
        rows.push(SweepRow {
            rate,
            trial,
            accuracy,
            normalized_accuracy: norm(accuracy),
        });
    }
    let summary = cfg
        .fault_rates
        .iter()
        .map(|&rate| {
            let a: Vec<f64> = rows.iter().filter(|r| r.rate == rate).map(|r| r.accuracy).collect();
            let n: Vec<f64> = rows
                .iter()
                .filter(|r| r.rate == rate)
                .map(|r| r.normalized_accuracy)
                .collect();
            let (mean_accuracy, std_accuracy) = mean_std(&a);
            let (mean_normalized, std_normalized) = mean_std(&n);
            RateSummary {
                rate,
                mean_accuracy,
                std_accuracy,
                mean_normalized,
                std_normalized,
                normalized_drop: 1.0 - mean_normalized,
            }
        })
        .collect();
    Ok(SweepResult {
        baseline_accuracy: baseline,
        rows,
        summary,
    })
}

/// Drops never decrease between consecutive rates by more than the pooled
/// standard deviation of the two rates.
pub fn monotone_within_noise(summary: &[RateSummary]) -> bool {
    summary.windows(2).all(|w| {
        let (a, b) = (w[0].std_normalized, w[1].std_normalized);
        let pooled = libm::sqrt((a * a + b * b) / 2.0);
        w[1].normalized_drop >= w[0].normalized_drop - pooled - 1e-12
    })
}

/// Global magnitude pruning: the `round(fraction * n)` smallest-magnitude
/// weights over all layers are zeroed and masked. Ties break by position.
pub fn prune(model: &FloatModel, fraction: f64) -> Result<FloatModel, LearnError> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(LearnError::Config(format!("prune fraction {fraction} outside [0, 1)")));
    }
    let mut out = model.clone();
    let mut all: Vec<(f64, usize, usize)> = Vec::new();
    for (pi, p) in model.params.iter().enumerate() {
        for (i, &w) in p.w.iter().enumerate() {
            if p.mask.as_ref().is_some_and(|m| m[i]) {
                continue;
            }
            all.push((w.abs(), pi, i));
        }
    }
    let total: usize = model.params.iter().map(|p| p.w.len()).sum();
    let already = total - all.len();
    let want = libm::round(fraction * total as f64) as usize;
    if want <= already {
        return Ok(out);
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    for &(_, pi, i) in &all[..want - already] {
        let p = &mut out.params[pi];
        p.w[i] = 0.0;
        p.mask.get_or_insert_with(|| vec![false; p.w.len()])[i] = true;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultAwareOptions {
    pub train: TrainOptions,
    pub fr_init: f64,
    pub acc_inf_threshold: f64,
    pub delta_step: f64,
    pub k: u32,
    pub flow: Dataflow,
    /// Training samples used for quantization scales.
    pub calib_samples: usize,
    /// Training samples the training accuracy is measured on.
    pub eval_samples: usize,
}

impl Default for FaultAwareOptions {
    fn default() -> Self {
        FaultAwareOptions {
            train: TrainOptions {
                epochs: 2,
                lr: 0.01,
                ..TrainOptions::default()
            },
            fr_init: 10.0,
            acc_inf_threshold: 0.97,
            delta_step: 2.5,
            k: 1,
            flow: Dataflow::Systolic,
            calib_samples: 2000,
            eval_samples: 10000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub acc_train: f64,
    pub fr_max_non_crit: f64,
    /// False when the rate reached zero without meeting the threshold.
    pub met: bool,
    /// `(fr_max, acc_train)` of every iteration.
    pub history: Vec<(f64, f64)>,
    pub model: FloatModel,
    pub quantized: QuantizedModel,
}

/// Float pre-activation offsets the array adds to each matmul layer under
/// `map`, at the activation scales of `scales` and the current weights.
fn offset_hook(
    base: &QuantizedModel,
    map: &FaultMap,
    inj: &Injector,
    flow: Dataflow,
) -> Result<Vec<(f64, Vec<i64>)>, LearnError> {
    base.matmuls()
        .map(|m| {
            let plan = plan_bypass(map, m.n_red, m.n_out)?;
            Ok((m.s_in, output_offsets(map, &plan, inj, flow)?))
        })
        .collect()
}

/// Fault-aware training loop. Each iteration fine-tunes `base` with the
/// errors of `chip` (deactivated down to the current rate) added in the
/// forward pass, measures quantized training accuracy on that array, and
/// lowers the rate by `delta_step` until the threshold is met. Reaching
/// rate zero without meeting it ends the loop with `met = false`.
pub fn fault_aware_train(
    base: &FloatModel,
    train: &Dataset,
    chip: &FaultMap,
    opts: &FaultAwareOptions,
) -> Result<TrainOutcome, LearnError> {
    if !(0.0..=100.0).contains(&opts.fr_init) {
        return Err(LearnError::Config(format!("initial fault rate {} outside [0, 100]", opts.fr_init)));
    }
    if opts.delta_step.is_nan() || opts.delta_step <= 0.0 {
        return Err(LearnError::Config("delta_step must be positive".into()));
    }
    let calib = train.head(opts.calib_samples.max(1));
    let eval = train.head(opts.eval_samples.max(1));
    let scales = quantize(base, &calib)?;
    let err = ErrorModel::int8_worst_case(opts.k);
    let mut fr = opts.fr_init;
    let mut history = Vec::new();
    loop {
        let map = deactivate_to_threshold(chip, fr)?;
        let inj = Injector::new(err, map.seed);
        let hook = offset_hook(&scales, &map, &inj, opts.flow)?;
        let offsets = |m: &FloatModel| -> Vec<Vec<f64>> {
            m.params
                .iter()
                .zip(&hook)
                .map(|(p, (s_in, off))| {
                    let s_w = p.w.iter().fold(0.0f64, |a, v| a.max(v.abs())) / 127.0;
                    off.iter().map(|&o| o as f64 * s_in * s_w).collect()
                })
                .collect()
        };
        let mut model = base.clone();
        model.train_with(train, &opts.train, Some(&offsets))?;
        let quantized = quantize(&model, &calib)?;
        let ctx = FaultContext {
            map: &map,
            inj,
            flow: opts.flow,
        };
        let acc = quantized.accuracy(&eval, Some(&ctx))?;
        history.push((fr, acc));
        let met = acc >= opts.acc_inf_threshold;
        if met || fr <= 0.0 {
            return Ok(TrainOutcome {
                acc_train: acc,
                fr_max_non_crit: fr,
                met,
                history,
                model,
                quantized,
            });
        }
        fr = (fr - opts.delta_step).max(0.0);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub predictions: Vec<usize>,
    pub accuracy: f64,
    pub throughput: ThroughputReport,
}

/// Load a status register, deactivate down to its allowed rate and run
/// inference on the resulting array.
pub fn infer_with_fsr(
    model: &QuantizedModel,
    fsr: &FsrFile,
    data: &Dataset,
    err: ErrorModel,
    flow: Dataflow,
    table: Option<&FaultErrorTable>,
) -> Result<InferenceReport, LearnError> {
    let raw = fsr.to_map()?;
    let map = deactivate_to_threshold(&raw, fsr.fr_max_non_crit)?;
    let ctx = FaultContext {
        map: &map,
        inj: injector(err, map.seed, table),
        flow,
    };
    let predictions = model.predict(data, Some(&ctx))?;
    let accuracy = super::float::accuracy_of(&predictions, &data.labels);
    Ok(InferenceReport {
        predictions,
        accuracy,
        throughput: throughput(&map, model.workload_steps(map.rows, map.cols)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::{ArchSpec, Shape};

    fn setup() -> (FloatModel, Dataset, Dataset) {
        let train = Dataset::synthetic(Shape::flat(64), 4, 400, 1);
        let test = Dataset::synthetic(Shape::flat(64), 4, 200, 2);
        let mut m = FloatModel::init(ArchSpec::mlp(64, &[24], 4), 3).unwrap();
        m.train(
            &train,
            &TrainOptions {
                epochs: 3,
                batch: 16,
                ..TrainOptions::default()
            },
        )
        .unwrap();
        (m, train, test)
    }

    fn small_cfg() -> ExperimentConfig {
        ExperimentConfig {
            fault_rates: vec![0.0, 10.0, 50.0],
            trials: 3,
            rows: 16,
            cols: 8,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn sweep_zero_rate_is_exact_and_deterministic() {
        let (m, train, test) = setup();
        let q = quantize(&m, &train).unwrap();
        let cfg = small_cfg();
        let a = accuracy_sweep(&q, &test, &cfg, None).unwrap();
        assert_eq!(a.summary[0].normalized_drop, 0.0);
        assert_eq!(a.rows.len(), 9);
        assert_eq!(a, accuracy_sweep(&q, &test, &cfg, None).unwrap());
        let bad = ExperimentConfig {
            trials: 0,
            ..small_cfg()
        };
        assert!(accuracy_sweep(&q, &test, &bad, None).is_err());
    }

    #[test]
    fn all_faulty_large_k_collapses() {
        let (m, train, test) = setup();
        let q = quantize(&m, &train).unwrap();
        let cfg = ExperimentConfig {
            fault_rates: vec![100.0],
            trials: 2,
            k: 14,
            ..small_cfg()
        };
        let r = accuracy_sweep(&q, &test, &cfg, None).unwrap();
        assert!(r.summary[0].mean_accuracy < 0.5, "{:?}", r.summary);
    }

    #[test]
    fn pruning_counts() {
        let (m, _, _) = setup();
        assert_eq!(prune(&m, 0.0).unwrap(), m);
        let p = prune(&m, 0.3).unwrap();
        let total: usize = m.params.iter().map(|p| p.w.len()).sum();
        let zeros: usize = p.params.iter().map(|p| p.w.iter().filter(|&&w| w == 0.0).count()).sum();
        assert!((zeros as f64 - 0.3 * total as f64).abs() <= 1.0);
        assert!(prune(&m, 1.0).is_err());
    }

    #[test]
    fn pruned_weights_stay_zero_after_retraining() {
        let (m, train, _) = setup();
        let mut p = prune(&m, 0.5).unwrap();
        p.train(
            &train,
            &TrainOptions {
                epochs: 1,
                batch: 16,
                ..TrainOptions::default()
            },
        )
        .unwrap();
        for q in &p.params {
            for (w, &masked) in q.w.iter().zip(q.mask.as_ref().unwrap()) {
                if masked {
                    assert_eq!(*w, 0.0);
                }
            }
        }
    }

    fn fa_opts(fr_init: f64, thr: f64, delta: f64) -> FaultAwareOptions {
        FaultAwareOptions {
            train: TrainOptions {
                epochs: 1,
                batch: 16,
                lr: 0.01,
                ..TrainOptions::default()
            },
            fr_init,
            acc_inf_threshold: thr,
            delta_step: delta,
            calib_samples: 100,
            eval_samples: 200,
            ..FaultAwareOptions::default()
        }
    }

    #[test]
    fn fault_aware_loop_contract() {
        let (m, train, _) = setup();
        let chip = build_fault_map(16, 8, 12.5, 4).unwrap();
        let o = fault_aware_train(&m, &train, &chip, &fa_opts(12.5, 0.0, 2.5)).unwrap();
        assert_eq!((o.fr_max_non_crit, o.met, o.history.len()), (12.5, true, 1));
        let o = fault_aware_train(&m, &train, &chip, &fa_opts(12.5, 1.1, 12.5)).unwrap();
        assert_eq!((o.fr_max_non_crit, o.met, o.history.len()), (0.0, false, 2));
        let o = fault_aware_train(&m, &train, &chip, &fa_opts(10.0, 1.1, 4.0)).unwrap();
        assert_eq!(o.history.iter().map(|h| h.0).collect::<Vec<_>>(), vec![10.0, 6.0, 2.0, 0.0]);
        assert!(fault_aware_train(&m, &train, &chip, &fa_opts(10.0, 0.5, 0.0)).is_err());
    }

    #[test]
    fn fsr_inference_extremes() {
        let (m, train, test) = setup();
        let q = quantize(&m, &train).unwrap();
        let map = build_fault_map(16, 8, 25.0, 6).unwrap();
        let err = ErrorModel::int8_worst_case(6);
        let clean = q.predict(&test, None).unwrap();
        let r = infer_with_fsr(&q, &FsrFile::from_map(&map, "c", 0.0), &test, err, Dataflow::Systolic, None).unwrap();
        assert_eq!(r.predictions, clean);
        assert_eq!(r.throughput.n_remaining_pe, 16 * 8 - map.count(crate::array::PeStatus::NonCriticalFaulty));
        let r = infer_with_fsr(&q, &FsrFile::from_map(&map, "c", 30.0), &test, err, Dataflow::Systolic, None).unwrap();
        let ctx = FaultContext {
            map: &map,
            inj: Injector::new(err, map.seed),
            flow: Dataflow::Systolic,
        };
        assert_eq!(r.predictions, q.predict(&test, Some(&ctx)).unwrap());
    }
}
