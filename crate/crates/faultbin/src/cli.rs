//! Argument parsing and run bookkeeping.
//!
//! Parameters resolve in three layers: command defaults, then the `params`
//! of a `--config` document, then explicit flags. The resolved tree is
//! written to `<out>/manifest.json`; `faultbin replay` re-executes it.
//! Wall-clock time only goes to the `<out>/run.log` sidecar.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::commands::*;
use crate::error::{CliError, Result};
use crate::formats::{read_json, write_json};
use crate::idx::data_root;

/// A resolved run: re-executing it reproduces the same output files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub command: String,
    #[serde(default)]
    pub params: Value,
}

#[derive(Parser, Debug)]
#[command(name = "faultbin", version, about = "Accuracy-aware test and fault binning for MAC arrays")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON run document `{"command": ..., "params": {...}}`; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a structural netlist.
    Gen(GenArgs),
    /// Split gates and faults into critical and non-critical cones.
    Partition(PartitionArgs),
    /// Generate test patterns for all, critical and non-critical faults.
    Atpg(AtpgArgs),
    /// Fault-simulate a pattern file.
    Fsim(FsimArgs),
    /// Worst-case output error of every fault in a class.
    MaxError(MaxErrorArgs),
    /// PE array status register flows.
    #[command(subcommand)]
    Array(ArrayCmd),
    /// Train and quantize an MNIST model.
    Train(TrainArgs),
    /// Accuracy versus fault rate sweep.
    Experiment(ExperimentArgs),
    /// Fault-aware fine-tuning and binning of one chip.
    FaultAwareTrain(FaultAwareArgs),
    /// Inference on a chip described by a status register.
    Infer(InferArgs),
    /// Re-execute a run manifest.
    Replay {
        manifest: PathBuf,
        /// Write into this directory instead of the recorded one.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
enum ArrayCmd {
    /// Draw a seeded fault map and write its status register.
    Build(ArrayBuildArgs),
    /// Deactivate faulty PEs down to an allowed rate.
    Deactivate(DeactivateArgs),
    /// Throughput of a workload on the array.
    Throughput(ThroughputArgs),
    /// Check bypass execution against the dense product on random cases.
    BypassCheck(BypassCheckArgs),
}

#[derive(Args, Debug, Serialize)]
struct GenArgs {
    /// mac-int8, bw, cla or ripple.
    kind: Option<String>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    cut_after: Option<usize>,
    /// Also write netlist.json.
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    json: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct PartitionArgs {
    netlist: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    /// Carry-in net of bit K+1 for netlists without annotations.
    #[arg(long)]
    carry_net: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct AtpgArgs {
    netlist: Option<PathBuf>,
    #[arg(long)]
    partition: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    carry_net: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    backtrack_limit: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct FsimArgs {
    netlist: Option<PathBuf>,
    #[arg(long)]
    patterns: Option<PathBuf>,
    #[arg(long)]
    faults: Option<PathBuf>,
    #[arg(long)]
    class: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct MaxErrorArgs {
    #[arg(long)]
    netlist: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    carry_net: Option<String>,
    /// noncrit, crit or all.
    #[arg(long)]
    class: Option<String>,
    #[arg(long)]
    exhaustive_limit_bits: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct ArrayBuildArgs {
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    cols: Option<usize>,
    #[arg(long)]
    fr: Option<f64>,
    #[arg(long)]
    fr_crit: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    chip_id: Option<String>,
    #[arg(long)]
    fr_max_non_crit: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct DeactivateArgs {
    fsr: Option<PathBuf>,
    #[arg(long)]
    fr_max: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct ThroughputArgs {
    fsr: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    n_reduction: Option<usize>,
    #[arg(long)]
    n_outputs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct BypassCheckArgs {
    #[arg(long)]
    cases: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_dim: Option<usize>,
    #[arg(long)]
    min_dead: Option<usize>,
    #[arg(long)]
    max_dead: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    /// mlp or lenet5.
    #[arg(long)]
    arch: Option<String>,
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    lr_decay: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset root (default: $FAULTBIN_DATA, then data/mnist).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    train_limit: Option<usize>,
    #[arg(long)]
    test_limit: Option<usize>,
    #[arg(long)]
    calib_samples: Option<usize>,
    #[arg(long)]
    prune: Option<f64>,
    #[arg(long)]
    retrain_epochs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct ExperimentArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    test_limit: Option<usize>,
    /// Comma-separated percentages.
    #[arg(long, value_delimiter = ',')]
    fault_rates: Option<Vec<f64>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    k: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    cols: Option<usize>,
    /// systolic or simd.
    #[arg(long)]
    flow: Option<String>,
    #[arg(long)]
    fr_max: Option<f64>,
    /// worst_case or netlist.
    #[arg(long)]
    error_mode: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct FaultAwareArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    fsr: Option<PathBuf>,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    cols: Option<usize>,
    #[arg(long)]
    fr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    fr_init: Option<f64>,
    #[arg(long)]
    acc_inf_threshold: Option<f64>,
    #[arg(long)]
    delta_step: Option<f64>,
    #[arg(long)]
    k: Option<u32>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    flow: Option<String>,
    #[arg(long)]
    calib_samples: Option<usize>,
    #[arg(long)]
    eval_samples: Option<usize>,
    #[arg(long)]
    train_limit: Option<usize>,
    #[arg(long)]
    test_limit: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct InferArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    fsr: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    test_limit: Option<usize>,
    #[arg(long)]
    k: Option<u32>,
    #[arg(long)]
    flow: Option<String>,
    #[arg(long)]
    error_mode: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Overlay the non-null fields of `top` onto `base`.
fn merge(base: &mut Value, top: Value) -> Result<()> {
    let Value::Object(top) = top else {
        return match top {
            Value::Null => Ok(()),
            _ => Err(CliError::Validation("params must be a JSON object".into())),
        };
    };
    let base = base.as_object_mut().expect("parameter defaults are objects");
    for (k, v) in top {
        if !v.is_null() {
            base.insert(k, v);
        }
    }
    Ok(())
}

struct Resolved {
    params: Value,
    out: PathBuf,
    summary: Value,
}

fn resolve_and_run<P>(layers: Vec<Value>, run: fn(&P) -> Result<Value>) -> Result<Resolved>
where
    P: Serialize + DeserializeOwned + Default,
{
    let mut v = serde_json::to_value(P::default()).expect("defaults serialize");
    for layer in layers {
        merge(&mut v, layer)?;
    }
    // The dataset root is resolved once so the manifest is self-contained.
    if let Some(d) = v.get_mut("data") {
        if d.is_null() {
            *d = Value::String(data_root(None).to_string_lossy().into_owned());
        }
    }
    let p: P = serde_json::from_value(v).map_err(|e| CliError::Validation(format!("parameters: {e}")))?;
    let params = serde_json::to_value(&p).expect("parameters serialize");
    let out = params
        .get("out")
        .and_then(Value::as_str)
        .map(PathBuf::from)
        .expect("every command has an output directory");
    let summary = run(&p)?;
    Ok(Resolved { params, out, summary })
}

fn execute(command: &str, layers: Vec<Value>) -> Result<Resolved> {
    match command {
        "gen" => resolve_and_run(layers, gen),
        "partition" => resolve_and_run(layers, partition),
        "atpg" => resolve_and_run(layers, atpg),
        "fsim" => resolve_and_run(layers, fsim),
        "max-error" => resolve_and_run(layers, max_error),
        "array build" => resolve_and_run(layers, array_build),
        "array deactivate" => resolve_and_run(layers, array_deactivate),
        "array throughput" => resolve_and_run(layers, array_throughput),
        "array bypass-check" => resolve_and_run(layers, array_bypass_check),
        "train" => resolve_and_run(layers, train),
        "experiment" => resolve_and_run(layers, experiment),
        "fault-aware-train" => resolve_and_run(layers, fault_aware),
        "infer" => resolve_and_run(layers, infer),
        c => Err(CliError::Validation(format!("unknown command `{c}`"))),
    }
}

fn flags<T: Serialize>(args: &T) -> Value {
    serde_json::to_value(args).expect("arguments serialize")
}

fn command_and_flags(cmd: Cmd) -> (String, Value) {
    let (name, v) = match cmd {
        Cmd::Gen(a) => ("gen", flags(&a)),
        Cmd::Partition(a) => ("partition", flags(&a)),
        Cmd::Atpg(a) => ("atpg", flags(&a)),
        Cmd::Fsim(a) => ("fsim", flags(&a)),
        Cmd::MaxError(a) => ("max-error", flags(&a)),
        Cmd::Array(ArrayCmd::Build(a)) => ("array build", flags(&a)),
        Cmd::Array(ArrayCmd::Deactivate(a)) => ("array deactivate", flags(&a)),
        Cmd::Array(ArrayCmd::Throughput(a)) => ("array throughput", flags(&a)),
        Cmd::Array(ArrayCmd::BypassCheck(a)) => ("array bypass-check", flags(&a)),
        Cmd::Train(a) => ("train", flags(&a)),
        Cmd::Experiment(a) => ("experiment", flags(&a)),
        Cmd::FaultAwareTrain(a) => ("fault-aware-train", flags(&a)),
        Cmd::Infer(a) => ("infer", flags(&a)),
        Cmd::Replay { .. } => unreachable!("replay is handled separately"),
    };
    (name.to_string(), v)
}

fn append_log(out: &Path, command: &str) -> Result<()> {
    let path = out.join("run.log");
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| CliError::io(&path, e))?;
    writeln!(f, "{secs} {command}").map_err(|e| CliError::io(&path, e))
}

fn dispatch(cli: Cli) -> Result<Value> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Validation("--threads must be at least 1".into()));
        }
        // Fails only if a pool already exists, as in repeated in-process runs.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let (command, mut layers) = match cli.cmd {
        Cmd::Replay { manifest, out } => {
            let m: Manifest = read_json(&manifest)?;
            let mut layers = vec![m.params];
            if let Some(o) = out {
                layers.push(serde_json::json!({ "out": o }));
            }
            (m.command, layers)
        }
        cmd => {
            let (command, v) = command_and_flags(cmd);
            (command, vec![v])
        }
    };
    if let Some(path) = &cli.config {
        let m: Manifest = read_json(path)?;
        if m.command != command {
            return Err(CliError::Validation(format!(
                "{}: config is for `{}`, not `{command}`",
                path.display(),
                m.command
            )));
        }
        layers.insert(0, m.params);
    }
    let r = execute(&command, layers)?;
    write_json(
        &r.out.join("manifest.json"),
        &Manifest {
            command: command.clone(),
            params: r.params,
        },
    )?;
    append_log(&r.out, &command)?;
    Ok(r.summary)
}

/// Run the CLI on `args` (program name first) and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli) {
        Ok(summary) => {
            // A closed stdout (e.g. piped into `head`) is not a failure.
            let _ = writeln!(
                std::io::stdout(),
                "{}",
                serde_json::to_string_pretty(&summary).expect("summary serializes")
            );
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_flags_do_not_override() {
        let mut base = serde_json::json!({"k": 1, "seed": 3});
        merge(&mut base, serde_json::json!({"k": null, "seed": 5})).unwrap();
        assert_eq!(base, serde_json::json!({"k": 1, "seed": 5}));
        assert!(merge(&mut base, serde_json::json!([1])).is_err());
    }

    #[test]
    fn unknown_parameter_is_rejected() {
        let r = execute("array build", vec![serde_json::json!({"rowz": 4})]);
        assert!(matches!(r, Err(CliError::Validation(_))));
    }

    #[test]
    fn clap_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn every_command_name_dispatches() {
        for c in [
            "gen", "partition", "atpg", "fsim", "max-error", "array build", "array deactivate",
            "array throughput", "array bypass-check", "train", "experiment", "fault-aware-train", "infer",
        ] {
            // A bogus field fails validation before any work is done.
            let r = execute(c, vec![serde_json::json!({"bogus": 1})]);
            assert!(matches!(r, Err(CliError::Validation(_))), "{c}");
        }
    }
}
