//! Accuracy-aware test and fault tolerance for MAC-array accelerators.
//!
//! The crate is split along the flow a chip takes from netlist to binning:
//!
//! * [`netlist`]: gate-level MAC netlists, their text format and evaluation.
//! * [`cones`]: fan-in cone partitioning of gates into critical and
//!   non-critical groups for a tolerated LSB position `K`.
//! * [`atpg`]: stuck-at fault lists, bit-parallel fault simulation and
//!   PODEM-based pattern generation.
//! * [`macsim`]: faulty MAC evaluation, worst-case error bounds and the
//!   behavioral error models used by the array simulator.
//! * [`array`]: the PE array, its fault map, deactivation, bypass and
//!   throughput accounting.
//! * [`learn`]: int8 MLP/CNN training and faulty inference on the array.
//!
//! Everything here is `no_std` + `alloc`. The `std` feature (on by default)
//! enables thread-parallel sweeps and SIMD detection in the float GEMM.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod array;
pub mod atpg;
pub mod bits;
pub mod cones;
pub mod learn;
pub mod macsim;
pub mod netlist;
pub mod par;
pub mod rng;

pub use bits::BitVec;
pub use netlist::{Gate, GateId, GateKind, NetId, Netlist};
