//! Internal diffusion-limited aggregation on `Z^d`.

// `!(x > 0.0)` is used throughout to reject NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cluster;
pub mod error;
pub mod fluctuation;
pub mod geometry;
pub mod harmonic;
pub mod oracle;
pub mod par;
pub mod stats;
pub mod walk;

pub use error::{IdlaError, Result};
