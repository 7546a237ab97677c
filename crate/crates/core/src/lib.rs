//! Empirical Bayes matrix factorization with covariate-moderated priors.

pub mod ebnm;
pub mod engine;
pub mod error;
pub mod par;
pub mod priors;
pub mod simulate;
pub mod special;
pub mod types;

pub use error::{Error, Result};
pub use par::Execution;
