//! Mean-field particle systems with simultaneous jumps.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod limit;
pub mod measure;
pub mod metrics;
pub mod model;
pub mod par;
pub mod particle;
pub mod rng;
pub mod validate;
pub mod zoo;

pub use error::{Error, Result};
pub use measure::{make_empirical, EmpiricalMeasure};
pub use model::{ClassTag, ModelSpec, RateArg};
pub use par::Parallelism;
