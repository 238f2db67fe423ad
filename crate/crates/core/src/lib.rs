//! # sbgp
//!
//! Stick-breaking construction of the gamma process and inference for the
//! infinite Gamma-Poisson factor model.
//!
//! The crate provides:
//!
//! - [`crm`] — truncated draws from the gamma process via three equivalent
//!   stick-breaking representations, with their analytic moments;
//! - [`truncation`] — the marginal truncation-error bound and its inversion
//!   for choosing a round count;
//! - [`model`] — the Gamma-Poisson factor model: synthetic corpora,
//!   token-level train/test splits, and the held-out per-word log-likelihood;
//! - [`vi`] — truncated mean-field variational inference;
//! - [`mcmc`] — a Gibbs sampler that integrates out the stick weights by
//!   Monte Carlo;
//! - [`cli`] — corpus/trace file formats, the command-line surface, and the
//!   statistical validation harness;
//! - [`numeric`] — seeded RNG sub-streams, special functions, and hypothesis
//!   tests underpinning all of the above.
//!
//! ```
//! use sbgp::crm::{self, GammaProcessParams, StickVariant};
//! use sbgp::numeric::SeededRng;
//!
//! let params = GammaProcessParams::new(1.0, 1.0, 5.0).unwrap();
//! let mut rng = SeededRng::new(7);
//! let draw = crm::draw_stick(&params, 12, StickVariant::Theorem, &mut rng).unwrap();
//! let mass = crm::total_mass(&draw);
//! assert!(mass > 0.0);
//! // Expected total mass of the untruncated process is gamma * alpha / c.
//! assert_eq!(crm::expected_total_mass(&params), 5.0);
//! ```

pub mod cli;
pub mod crm;
pub mod mcmc;
pub mod model;
pub mod numeric;
pub mod truncation;
pub mod vi;

#[cfg(doctest)]
mod book_doctests;
