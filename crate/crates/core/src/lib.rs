// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod graph;
pub mod linalg;
pub mod pipeline;
pub mod precision;
pub mod scoring;
pub mod search;
pub mod sem;

pub use error::{Error, Result};
