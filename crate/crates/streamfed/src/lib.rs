//! Simulator for federated learning over non-stationary data streams.
//!
//! Clients receive labeled batches from Markov-modulated label streams, keep
//! a finite cache governed by a pluggable update rule (FIFO, SRSR, DRSR,
//! LAZY, FULL), train local models by full-batch gradient descent, and a
//! server aggregates their deltas. A metrics layer estimates stream
//! correlation parameters, evaluates the policy-specific discrepancy bounds,
//! and verifies them by Monte-Carlo simulation.

pub mod cache;
pub mod dist;
pub mod error;
pub mod experiment;
pub mod federation;
pub mod learner;
pub mod metrics;
pub mod rng;

pub use error::{Error, Result};
