//! Label-free coreset selection over frozen embeddings.
//!
//! The pipeline: build a cosine k-NN table ([`knn`]), train a teacher/student
//! clustering ensemble on neighbor pairs to obtain pseudo-labels ([`temi`]),
//! train a probe on the pseudo-labels while recording per-example training
//! dynamics ([`probe`]), and select a coreset by double-end pruning with a
//! hard-prune rate chosen on a pseudo-labeled validation split ([`selection`]).
//! [`metrics`] scores pseudo-labels against ground truth and [`harness`] runs
//! synthetic end-to-end experiments.

pub mod data;
pub mod error;
pub mod harness;
pub mod knn;
pub mod metrics;
pub mod optim;
pub mod probe;
pub mod selection;
pub mod temi;

pub use error::{Error, Result};
