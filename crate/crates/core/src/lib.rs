//! Feature fusion network pipeline for person re-identification.
//!
//! The crate is split by stage:
//!
//! * [`imaging`] decodes images, resizes them and converts between colour spaces.
//! * [`elf16`] extracts the striped colour/texture histogram descriptor.
//! * [`nn`] is a small double-precision network engine with hand-written
//!   forward and backward passes, SGD with weight decay and a finite-difference
//!   gradient checker.
//! * [`ffn`] assembles the two-branch fusion network, trains it and exports
//!   fused features.
//! * [`metric`] holds L1/L2 distances and LFDA metric learning.
//! * [`eval`] implements dataset loading, the single-shot protocol, CMC curves
//!   and the extraction timing benchmark.

pub mod elf16;
pub mod error;
pub mod eval;
pub mod ffn;
pub mod imaging;
pub mod metric;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
