//! Initialization-time probes for decoder-only transformers.
//!
//! `transformer` is a small inference engine with seeded GPT-2 style
//! initialization. `probes` measures what randomly initialized models already
//! prefer. `theory` holds the closed-form predictions those measurements are
//! checked against, `stats` the hypothesis tests, `fingerprint` the lineage
//! test built on top, and `sink` the first-token attention metrics.

// `!(x > 0.0)` is how NaN is rejected alongside non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fingerprint;
pub mod numerics;
pub mod probes;
pub mod sink;
pub mod stats;
pub mod theory;
pub mod transformer;

pub use error::{Error, Result};
