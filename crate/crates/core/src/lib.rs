//! Trace-induced quantum kernels on a desk-scale statevector simulator.
//!
//! The crate covers exact IQP embeddings, Pauli-string combinatorics and
//! kernel weight presets, Gram assembly, classical-shadow and shot-noise
//! estimators, empirical Mercer analysis, a soft-margin SVM with margin
//! bounds, and the data pipeline used by the `qkern` command-line tool.

pub mod data;
pub mod error;
pub mod experiment;
pub mod idx;
pub mod pauli;
pub mod kernels;
pub mod learner;
pub mod mercer;
pub mod qstate;
pub mod rng;
pub mod shadows;

pub use error::{Error, Result};
