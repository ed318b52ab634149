//! ADMM-based DNN weight compression: non-structured and structured pruning,
//! equal-distance weight quantization, bit-exact sparse-storage accounting,
//! and a hardware-agnostic comparison of the two pruning regimes.
//!
//! The crate is organized around the compression workflow:
//!
//! * [`tensor`] / [`model`] — weight tensors, structured group views, GEMM
//!   flattening, filter-prune propagation, checkpoints.
//! * [`data`] / [`train`] — MNIST IDX ingestion and the double-precision
//!   trainer (forward, exact backprop, momentum SGD) that also solves the
//!   first ADMM subproblem.
//! * [`projection`] — closed-form Euclidean projections onto every
//!   constraint set (subproblem two).
//! * [`admm`] — the alternating optimization engine: multi-rho schedule,
//!   progressive two-round pruning, masked mapping and retraining.
//! * [`storage`] — CSR with absolute/relative indices, dummy zeros, index
//!   bit-width optimization, storage reports.
//! * [`compare`] / [`tables`] — matched-accuracy comparison of the two
//!   regimes, pruning-to-performance-ratio verdicts, published-result
//!   arithmetic.
//! * [`verify`] — independent feasibility checks for compressed checkpoints.

pub mod admm;
pub mod compare;
pub mod config;
pub mod data;
pub mod error;
pub mod model;
pub mod projection;
pub mod storage;
pub mod tables;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
