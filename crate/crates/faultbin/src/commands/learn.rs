use std::path::PathBuf;

use faultbin_core::array::{build_fault_map, deactivate_to_threshold, throughput, Dataflow, FaultMap, FsrFile, Injector};
use faultbin_core::cones::partition as cone_partition;
use faultbin_core::learn::{
    accuracy_sweep, count_macs, fault_aware_train, infer_with_fsr, monotone_within_noise, prune, quantize, ArchSpec,
    Dataset, ExperimentConfig, FaultAwareOptions, FaultContext, FloatModel, QuantizedModel, TrainOptions,
};
use faultbin_core::macsim::{ErrorMode, ErrorModel, FaultErrorTable};
use faultbin_core::netlist::gen_mac_int8;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{CliError, Result};
use crate::formats::{read_json, sweep_csv, write_bytes, write_json};
use crate::idx::{data_root, load_mnist};

/// A trained model with its int8 deployment form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub float: FloatModel,
    pub quantized: QuantizedModel,
    pub float_test_accuracy: f64,
    pub quantized_test_accuracy: f64,
    pub train: TrainOptions,
}

fn load_split(data: &Option<PathBuf>, split: &str, limit: Option<usize>, arch: &ArchSpec) -> Result<Dataset> {
    let mut ds = load_mnist(&data_root(data.as_deref()), split)?;
    if let Some(n) = limit {
        ds = ds.head(n);
    }
    if ds.shape != arch.input {
        if ds.shape.len() != arch.input.len() {
            return Err(CliError::Validation(format!(
                "dataset samples have {} values, model expects {}",
                ds.shape.len(),
                arch.input.len()
            )));
        }
        ds.shape = arch.input;
    }
    Ok(ds)
}

fn parse_flow(s: &str) -> Result<Dataflow> {
    match s {
        "systolic" => Ok(Dataflow::Systolic),
        "simd" => Ok(Dataflow::Simd),
        f => Err(CliError::Validation(format!("unknown dataflow `{f}` (systolic, simd)"))),
    }
}

/// Operand-dependent per-fault tables of the int8 MAC's non-critical faults.
fn netlist_table(k: u32) -> Result<FaultErrorTable> {
    let nl = gen_mac_int8()?;
    let part = cone_partition(&nl, k as usize)?;
    Ok(FaultErrorTable::build(&nl, &part.f_noncrit)?)
}

fn error_setup(mode: &str, k: u32) -> Result<(ErrorModel, Option<FaultErrorTable>)> {
    let mut err = ErrorModel::int8_worst_case(k);
    match mode {
        "worst_case" => Ok((err, None)),
        "netlist" => {
            err.mode = ErrorMode::PerFaultNetlist;
            Ok((err, Some(netlist_table(k)?)))
        }
        m => Err(CliError::Validation(format!("unknown error mode `{m}` (worst_case, netlist)"))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainParams {
    /// `mlp` or `lenet5`.
    pub arch: String,
    /// Hidden layer widths of the MLP.
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub momentum: f64,
    pub lr_decay: f64,
    pub seed: u64,
    pub data: Option<PathBuf>,
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    pub calib_samples: usize,
    /// Fraction of weights to prune after training, followed by
    /// `retrain_epochs` of masked fine-tuning.
    pub prune: Option<f64>,
    pub retrain_epochs: usize,
    pub out: PathBuf,
}

impl Default for TrainParams {
    fn default() -> Self {
        let t = TrainOptions::default();
        TrainParams {
            arch: "mlp".into(),
            hidden: vec![256, 256],
            epochs: t.epochs,
            batch: t.batch,
            lr: t.lr,
            momentum: t.momentum,
            lr_decay: t.lr_decay,
            seed: t.seed,
            data: None,
            train_limit: None,
            test_limit: None,
            calib_samples: 2000,
            prune: None,
            retrain_epochs: 1,
            out: "out/train".into(),
        }
    }
}

pub fn train(p: &TrainParams) -> Result<Value> {
    let arch = match p.arch.as_str() {
        "mlp" => ArchSpec::mlp(784, &p.hidden, 10),
        "lenet5" => ArchSpec::lenet5(),
        a => return Err(CliError::Validation(format!("unknown architecture `{a}` (mlp, lenet5)"))),
    };
    let train_set = load_split(&p.data, "train", p.train_limit, &arch)?;
    let test_set = load_split(&p.data, "t10k", p.test_limit, &arch)?;
    let opts = TrainOptions {
        epochs: p.epochs,
        batch: p.batch,
        lr: p.lr,
        momentum: p.momentum,
        lr_decay: p.lr_decay,
        seed: p.seed,
    };
    let mut model = FloatModel::init(arch.clone(), p.seed)?;
    model.train(&train_set, &opts)?;
    if let Some(f) = p.prune {
        model = prune(&model, f)?;
        let retrain = TrainOptions {
            epochs: p.retrain_epochs,
            lr: p.lr * 0.1,
            ..opts
        };
        model.train(&train_set, &retrain)?;
    }
    let quantized = quantize(&model, &train_set.head(p.calib_samples.max(1)))?;
    let ckpt = Checkpoint {
        float_test_accuracy: model.accuracy(&test_set)?,
        quantized_test_accuracy: quantized.accuracy(&test_set, None)?,
        float: model,
        quantized,
        train: opts,
    };
    write_json(&p.out.join("model.json"), &ckpt)?;
    let (mults, adds) = count_macs(&arch)?;
    let metrics = json!({
        "arch": p.arch,
        "train_samples": train_set.len(),
        "test_samples": test_set.len(),
        "float_test_accuracy": ckpt.float_test_accuracy,
        "quantized_test_accuracy": ckpt.quantized_test_accuracy,
        "multiplications": mults,
        "additions": adds,
        "pruned_fraction": p.prune,
    });
    write_json(&p.out.join("metrics.json"), &metrics)?;
    Ok(metrics)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentParams {
    pub model: PathBuf,
    pub data: Option<PathBuf>,
    pub test_limit: Option<usize>,
    pub fault_rates: Vec<f64>,
    pub trials: usize,
    pub k: u32,
    pub seed: u64,
    pub rows: usize,
    pub cols: usize,
    pub flow: String,
    pub fr_max: Option<f64>,
    /// `worst_case` or `netlist`.
    pub error_mode: String,
    pub out: PathBuf,
}

impl Default for ExperimentParams {
    fn default() -> Self {
        let c = ExperimentConfig::default();
        ExperimentParams {
            model: "out/train/model.json".into(),
            data: None,
            test_limit: None,
            fault_rates: c.fault_rates,
            trials: c.trials,
            k: c.k,
            seed: c.seed,
            rows: c.rows,
            cols: c.cols,
            flow: "systolic".into(),
            fr_max: None,
            error_mode: "worst_case".into(),
            out: "out/experiment".into(),
        }
    }
}

pub fn experiment(p: &ExperimentParams) -> Result<Value> {
    let ckpt: Checkpoint = read_json(&p.model)?;
    let test = load_split(&p.data, "t10k", p.test_limit, &ckpt.quantized.arch)?;
    let cfg = ExperimentConfig {
        fault_rates: p.fault_rates.clone(),
        trials: p.trials,
        k: p.k,
        seed: p.seed,
        rows: p.rows,
        cols: p.cols,
        flow: parse_flow(&p.flow)?,
        fr_max: p.fr_max,
        ..ExperimentConfig::default()
    };
    let (_, table) = error_setup(&p.error_mode, p.k)?;
    let res = accuracy_sweep(&ckpt.quantized, &test, &cfg, table.as_ref())?;
    write_bytes(&p.out.join("sweep.csv"), sweep_csv(&res.rows).as_bytes())?;
    write_json(&p.out.join("sweep.json"), &res)?;
    Ok(json!({
        "baseline_accuracy": res.baseline_accuracy,
        "summary": res.summary,
        "monotone_within_noise": monotone_within_noise(&res.summary),
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaultAwareParams {
    pub model: PathBuf,
    pub data: Option<PathBuf>,
    /// Chip status register; a chip is drawn from `rows`, `cols`, `fr` and
    /// `seed` otherwise.
    pub fsr: Option<PathBuf>,
    pub rows: usize,
    pub cols: usize,
    pub fr: f64,
    pub seed: u64,
    pub fr_init: f64,
    pub acc_inf_threshold: f64,
    pub delta_step: f64,
    pub k: u32,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub flow: String,
    pub calib_samples: usize,
    pub eval_samples: usize,
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    pub out: PathBuf,
}

impl Default for FaultAwareParams {
    fn default() -> Self {
        let o = FaultAwareOptions::default();
        FaultAwareParams {
            model: "out/train/model.json".into(),
            data: None,
            fsr: None,
            rows: 128,
            cols: 128,
            fr: 10.0,
            seed: 1,
            fr_init: o.fr_init,
            acc_inf_threshold: o.acc_inf_threshold,
            delta_step: o.delta_step,
            k: o.k,
            epochs: o.train.epochs,
            batch: o.train.batch,
            lr: o.train.lr,
            flow: "systolic".into(),
            calib_samples: o.calib_samples,
            eval_samples: o.eval_samples,
            train_limit: None,
            test_limit: None,
            out: "out/fault_aware".into(),
        }
    }
}

pub fn fault_aware(p: &FaultAwareParams) -> Result<Value> {
    let base: Checkpoint = read_json(&p.model)?;
    let arch = &base.float.arch;
    let train_set = load_split(&p.data, "train", p.train_limit, arch)?;
    let test_set = load_split(&p.data, "t10k", p.test_limit, arch)?;
    let (chip, chip_id): (FaultMap, String) = match &p.fsr {
        Some(path) => {
            let f: FsrFile = read_json(path)?;
            (f.to_map()?, f.chip_id)
        }
        None => (build_fault_map(p.rows, p.cols, p.fr, p.seed)?, format!("chip{}", p.seed)),
    };
    let flow = parse_flow(&p.flow)?;
    let opts = FaultAwareOptions {
        train: TrainOptions {
            epochs: p.epochs,
            batch: p.batch,
            lr: p.lr,
            seed: p.seed,
            ..base.train
        },
        fr_init: p.fr_init,
        acc_inf_threshold: p.acc_inf_threshold,
        delta_step: p.delta_step,
        k: p.k,
        flow,
        calib_samples: p.calib_samples,
        eval_samples: p.eval_samples,
    };
    let outcome = fault_aware_train(&base.float, &train_set, &chip, &opts)?;
    let map = deactivate_to_threshold(&chip, outcome.fr_max_non_crit)?;
    let ctx = FaultContext {
        map: &map,
        inj: Injector::new(ErrorModel::int8_worst_case(p.k), map.seed),
        flow,
    };
    let test_on_chip = outcome.quantized.accuracy(&test_set, Some(&ctx))?;
    let ckpt = Checkpoint {
        float_test_accuracy: outcome.model.accuracy(&test_set)?,
        quantized_test_accuracy: outcome.quantized.accuracy(&test_set, None)?,
        float: outcome.model,
        quantized: outcome.quantized,
        train: opts.train,
    };
    write_json(&p.out.join("model.json"), &ckpt)?;
    write_json(&p.out.join("fsr.json"), &FsrFile::from_map(&chip, &chip_id, outcome.fr_max_non_crit))?;
    let report = json!({
        "acc_train": outcome.acc_train,
        "fr_max_non_crit": outcome.fr_max_non_crit,
        "met": outcome.met,
        "history": outcome.history,
        "test_accuracy_on_chip": test_on_chip,
        "quantized_test_accuracy": ckpt.quantized_test_accuracy,
        "throughput": throughput(&map, ckpt.quantized.workload_steps(map.rows, map.cols)),
    });
    write_json(&p.out.join("outcome.json"), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferParams {
    pub model: PathBuf,
    pub fsr: PathBuf,
    pub data: Option<PathBuf>,
    pub test_limit: Option<usize>,
    pub k: u32,
    pub flow: String,
    pub error_mode: String,
    pub out: PathBuf,
}

impl Default for InferParams {
    fn default() -> Self {
        InferParams {
            model: "out/train/model.json".into(),
            fsr: "out/array/fsr.json".into(),
            data: None,
            test_limit: None,
            k: 1,
            flow: "systolic".into(),
            error_mode: "worst_case".into(),
            out: "out/infer".into(),
        }
    }
}

pub fn infer(p: &InferParams) -> Result<Value> {
    let ckpt: Checkpoint = read_json(&p.model)?;
    let fsr: FsrFile = read_json(&p.fsr)?;
    let test = load_split(&p.data, "t10k", p.test_limit, &ckpt.quantized.arch)?;
    let (err, table) = error_setup(&p.error_mode, p.k)?;
    let rep = infer_with_fsr(&ckpt.quantized, &fsr, &test, err, parse_flow(&p.flow)?, table.as_ref())?;
    write_json(&p.out.join("inference.json"), &rep)?;
    Ok(json!({
        "chip_id": fsr.chip_id,
        "samples": rep.predictions.len(),
        "accuracy": rep.accuracy,
        "fault_free_accuracy": ckpt.quantized_test_accuracy,
        "throughput": rep.throughput,
    }))
}
