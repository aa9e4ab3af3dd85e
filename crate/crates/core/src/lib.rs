//! Deterministic federated learning simulator for heterogeneous, long-tailed
//! client data with per-client multi-expert personalization.
//!
//! The crate is organised bottom-up:
//!
//! - [`nncore`]: a small feed-forward network engine (affine + ReLU blocks and a
//!   linear classifier) with SGD, cross-entropy and balanced-softmax losses,
//!   parameter freezing and a compact binary checkpoint format.
//! - [`data`]: synthetic data, long-tail shaping, Dirichlet partitioning,
//!   expert class grouping and per-client test sets.
//! - [`fed`]: FedAvg training of the shared global model.
//! - [`ecl`]: per-client classifier retraining, expert training and the
//!   norm-scaled logit aggregation used at inference.
//! - [`eval`]: accuracy bookkeeping, baselines and report files.
//! - [`config`] and [`pipeline`]: experiment configuration and the
//!   partition / train / eval / report commands driven by the CLI.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod ecl;
pub mod error;
pub mod eval;
pub mod fed;
pub mod nncore;
pub mod pipeline;
pub mod seed;

pub use error::{Error, Result};
