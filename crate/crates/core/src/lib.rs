//! Metropolis-Hastings with delayed acceptance and speculative prefetching.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::result_large_err)]

pub mod chain;
pub mod delayed;
pub mod error;
pub mod executor;
pub mod kernel;
pub mod models;
pub mod prefetch;
pub mod sampler;
pub mod schedule;
pub mod target;
pub mod diagnostics;
pub mod experiment;
