//! Active learning with a recurrent classifier for irregularly sampled
//! clinical time series.
//!
//! The pipeline runs from pipe-separated patient files
//! ([`data_ingest`]) through imputation and scaling ([`preprocess`]) to an
//! Elman network trained with backpropagation through time ([`model`]).
//! [`active_loop`] grows the labeled pool round by round using the
//! uncertainty scorers in [`sampling`], and [`metrics`] evaluates every
//! round's model on held-out folds.

pub mod active_loop;
pub mod data_ingest;
pub mod error;
pub mod explain;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod par;
pub mod preprocess;
pub mod sampling;
pub mod seed;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
pub use matrix::Matrix;
pub use par::Parallelism;
