//! Subcommand implementations. Each takes fully resolved parameters,
//! writes its files under `out` and returns a JSON summary for stdout.

mod array;
mod learn;
mod netlist;

pub use array::{
    array_build, array_bypass_check, array_deactivate, array_throughput, ArrayBuildParams, BypassCheckParams,
    DeactivateParams, ThroughputParams,
};
pub use learn::{
    experiment, fault_aware, infer, train, Checkpoint, ExperimentParams, FaultAwareParams, InferParams, TrainParams,
};
pub use netlist::{atpg, fsim, gen, max_error, partition, AtpgParams, FsimParams, GenParams, MaxErrorParams, PartitionParams};
