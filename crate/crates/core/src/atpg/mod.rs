//! Stuck-at fault lists, fault simulation and test pattern generation.

mod faults;
pub mod fsim;
mod patterns;
pub mod podem;

pub use faults::{all_faults, enumerate_faults, faulty_response, FaultError, FaultList, FaultSite, Polarity};
pub use patterns::{fault_simulate, generate_patterns, split_pattern_generation, AtpgOptions, TestSet};
