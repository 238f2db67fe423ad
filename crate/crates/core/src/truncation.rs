//! The marginal truncation-error bound for round-truncated draws, its
//! inversion for choosing a round count, and the truncated residual mass.
//!
//! For N observations drawn through a Poisson likelihood on a gamma process
//! truncated after R rounds, the total-variation distance between truncated
//! and untruncated data marginals is at most
//! `1 - exp(-N * mass * (alpha/c) * (alpha/(1+alpha))^R)`.

use crate::crm::{self, GammaProcessParams, StickVariant};
use crate::numeric::{NumericError, SeededRng};

/// Inputs of the bound: sample count, process parameters, truncation depth.
#[derive(Debug, Clone, Copy)]
pub struct TruncationQuery {
    pub n_samples: u64,
    pub params: GammaProcessParams,
    pub rounds: u32,
}

/// The truncation bound, evaluated in log space so large `N` cannot
/// overflow and values near 0 keep full precision.
pub fn marginal_truncation_bound(q: &TruncationQuery) -> f64 {
    let p = &q.params;
    let log_x = (q.n_samples as f64).ln() + p.mass.ln() + p.alpha.ln() - p.c.ln()
        + q.rounds as f64 * p.decay_ratio().ln();
    -(-log_x.exp()).exp_m1()
}

/// Smallest nonnegative `R` whose bound does not exceed `epsilon`; exact by
/// integer search around the closed-form estimate.
pub fn min_rounds_for_error(
    n_samples: u64,
    params: &GammaProcessParams,
    epsilon: f64,
) -> Result<u32, NumericError> {
    if !epsilon.is_finite() || epsilon <= 0.0 || epsilon >= 1.0 {
        return Err(NumericError::Domain(format!(
            "epsilon must be in (0,1), got {epsilon}"
        )));
    }
    let bound_at = |r: u32| {
        marginal_truncation_bound(&TruncationQuery {
            n_samples,
            params: *params,
            rounds: r,
        })
    };
    if bound_at(0) <= epsilon {
        return Ok(0);
    }
    // bound <= eps  <=>  x <= -ln(1-eps), with ln x linear in R.
    let log_target = (-(-epsilon).ln_1p()).ln();
    let log_x0 = (n_samples as f64).ln() + params.mass.ln() + params.alpha.ln() - params.c.ln();
    let log_ratio = params.decay_ratio().ln();
    let mut r = ((log_target - log_x0) / log_ratio).ceil().max(0.0) as u32;
    while bound_at(r) > epsilon {
        r += 1;
    }
    while r > 0 && bound_at(r - 1) <= epsilon {
        r -= 1;
    }
    Ok(r)
}

/// Expected mass beyond round `rounds`: `(mass*alpha/c) * ratio^rounds`.
pub fn expected_residual_mass(params: &GammaProcessParams, rounds: u32) -> f64 {
    let ratio = params.decay_ratio();
    let mut m = crm::expected_total_mass(params);
    for _ in 0..rounds {
        m *= ratio;
    }
    m
}

/// Monte Carlo estimate of the probability that any Poisson count beyond
/// round `rounds` is positive among `n_samples` observations.
///
/// The tail is simulated out to `rounds + extra_depth`; the analytic
/// residual mass beyond that depth enters as a union-bound correction.
/// Returns the (corrected) estimate and its Monte Carlo standard error.
pub fn empirical_tail_positive_prob(
    params: &GammaProcessParams,
    n_samples: u64,
    rounds: u32,
    extra_depth: u32,
    replicates: usize,
    rng: &SeededRng,
) -> (f64, f64) {
    let n = n_samples as f64;
    let mut probs = Vec::with_capacity(replicates);
    for rep in 0..replicates {
        let mut rep_rng = rng.substream(rep as u64);
        let mut tail_mass = 0.0;
        for round in (rounds + 1)..=(rounds + extra_depth) {
            let count =
                crate::numeric::dist::poisson(&mut rep_rng, params.mass).expect("validated params");
            for _ in 0..count {
                tail_mass += crm::sample_weight(params, round, StickVariant::Theorem, &mut rep_rng);
            }
        }
        // P(any positive count | tail draw) is available in closed form,
        // which Rao-Blackwellizes the estimate.
        probs.push(-(-n * tail_mass).exp_m1());
    }
    let m = replicates as f64;
    let mean = probs.iter().sum::<f64>() / m;
    let var = probs.iter().map(|&p| (p - mean) * (p - mean)).sum::<f64>() / (m - 1.0);
    let correction = n * expected_residual_mass(params, rounds + extra_depth);
    (mean + correction, (var / m).sqrt())
}
