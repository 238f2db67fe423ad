//! Seeded sampling, special functions, and hypothesis tests shared by every
//! other module.

pub mod dist;
pub mod rng;
pub mod special;
pub mod stats;

pub use rng::SeededRng;
pub use special::{digamma, gamma_cdf, gamma_quantile, ln_gamma, trigamma};
pub use stats::{chi_square_gof, ks_test, ks_two_sample, log_sum_exp, TestReport};

/// Error raised when a numeric routine is called outside its domain.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericError {
    #[error("domain error: {0}")]
    Domain(String),
}
