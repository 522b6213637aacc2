//! Offline exploration of query-hint workload matrices.
//!
//! A workload matrix holds the latency of every repeated query (row) under
//! every optimizer hint (column). Only some cells are ever measured, and runs
//! that exceed the current best latency are killed, leaving a censored lower
//! bound. This crate completes the matrix with a censored, non-negative
//! alternating least squares model, picks which cells to measure next, and
//! replays the whole loop against a known matrix to score exploration policies.

pub mod completion;
pub mod error;
pub mod io;
pub mod matrix;
pub mod policy;
pub mod simulator;
pub mod synth;

pub use completion::{als_complete, effective_rank, singular_spectrum, AlsConfig, Factorization};
pub use error::{Error, Result};
pub use matrix::{Entry, GroundTruth, WorkloadState};
pub use policy::{Candidate, PolicyConfig, PolicyKind};
pub use simulator::{ExplorationTrace, GuardConfig, ShiftEvent, ShiftKind, SimConfig};
pub use synth::SynthConfig;
