//! Out-of-distribution detection for small classifiers.
//!
//! The crate bundles a deterministic ReLU network trainer ([`network`]),
//! gradient-based and logit-based OOD scores ([`ood`]), detection metrics
//! with OOD as the positive class ([`metrics`]), synthetic blob benchmarks
//! and CSV ingestion ([`data`]), and the command-line harness ([`cli`],
//! [`report`]).

pub mod cli;
pub mod data;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod network;
pub mod ood;
pub mod persist;
pub mod report;

pub use error::{Error, Result};
