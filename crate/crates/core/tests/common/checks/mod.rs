//! Criterion checks shared by the crate's tests and the acceptance runner.
//! Each check panics with a description of the first failure.

pub mod annotation;
pub mod gradients;
pub mod metrics;
pub mod oracles;
pub mod taxonomy;
pub mod textprep;
