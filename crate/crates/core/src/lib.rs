//! Deterministic, desk-scale federated-learning simulation.
//!
//! The crate trains small neural networks across simulated clients and
//! combines them on a simulated server with one of several round operators:
//!
//! - layer-wise model recombination (`fedmr`): every layer index is shuffled
//!   independently across the K uploaded models,
//! - parameter averaging (`fedavg`, `fedprox`),
//! - whole-model random dispatch (`fedmr_no_mr`), the recombination ablation.
//!
//! A two-stage schedule runs aggregation rounds first and switches to
//! recombination afterwards. Everything is driven by explicit seeds and is
//! bit-reproducible.
//!
//! Module map:
//!
//! - [`tensor`], [`nn`]: float64 tensors, layers with manual backprop, SGD.
//! - [`structure`], [`checkpoint`]: layer-block decomposition and the binary
//!   model container.
//! - [`data`]: synthetic datasets, IDX loading, IID / Dirichlet partitioning.
//! - [`fed`]: client update, recombination, aggregation.
//! - [`orchestrator`]: the round loop.
//! - [`config`], [`runner`], [`report`]: experiment files and outputs used by
//!   the `fedmr` binary and the C ABI crate.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod fed;
pub mod nn;
pub mod orchestrator;
pub mod report;
pub mod runner;
pub mod seed;
pub mod structure;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
