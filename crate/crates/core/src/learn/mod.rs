//! Int8 MLP/CNN training and inference on a faulty PE array.
//!
//! Float models train with minibatch SGD and are quantized after training
//! (symmetric, per tensor). Quantized inference lowers every linear and
//! convolution layer to a matmul executed on the array model: output `j`
//! maps to PE column `j % cols`, the reduction is tiled over rows.

mod arch;
mod data;
mod experiment;
mod float;
mod gemm;
mod quant;

use alloc::string::String;

pub use arch::{count_macs, ArchSpec, LayerSpec, Shape};
pub use data::Dataset;
pub use experiment::{
    accuracy_sweep, fault_aware_train, fault_map_for_trial, infer_with_fsr, monotone_within_noise, prune,
    ExperimentConfig, FaultAwareOptions, InferenceReport, RateSummary, SweepResult, SweepRow, TrainOutcome,
};
pub use float::{FloatModel, Grads, OffsetHook, TrainOptions};
pub use quant::{quantize, FaultContext, QOp, QMatmul, QuantizedModel};

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum LearnError {
    #[error("shape: {0}")]
    Shape(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("config: {0}")]
    Config(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Array(#[from] crate::array::ArrayError),
}
