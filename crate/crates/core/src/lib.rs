//! Temporal graph neural network for classifying faults in microservice
//! systems from per-service metric sequences and time-varying call graphs.
//!
//! The crate covers the full path from observations to a trained classifier:
//!
//! - [`graphseq`]: labeled windows of per-step features and invocation edges
//! - [`diff`]: dense matrices with tape-based reverse-mode gradients
//! - [`model`]: GRU encoding, attention message passing, dual readout, loss
//! - [`train`]: optimizer, training loop, checkpoints, evaluation
//! - [`metrics`]: confusion-matrix based classification metrics
//! - [`sim`]: synthetic fault scenarios with ground-truth propagation
//! - [`ingest`]: conversion of span, metric and injection tables into windows
//! - [`dot`]: Graphviz export of call graphs and fault propagation

pub mod diff;
pub mod dot;
pub mod error;
pub mod graphseq;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod sim;
pub mod train;

pub use error::{Error, Result};
