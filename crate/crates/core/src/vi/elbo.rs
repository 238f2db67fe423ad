//! The variational objective.
//!
//! Assembled term by term from the joint factorization and the entropy of
//! the variational distribution. Two approximations mirror the coordinate
//! updates exactly, so the printed decay gradients are the true partial
//! derivatives of this function:
//!
//! - the round-occupancy factor uses the expected indicator
//!   `1 - prod_k P(d_k < r)` and a pairwise `zeta`-weighted penalty for
//!   atoms sharing a round;
//! - the data log-rate uses expected loadings and count means inside the
//!   logarithm.
//!
//! The decay-factor entropy enters with a reversed sign on its linear
//! shape term, matching the closed-form gradients this module pairs with;
//! see `decay_gradient`.

use super::{global_moments, q_moments, DataAggregates, FitError, VariationalState};
use crate::model::Hyperpriors;
use crate::numeric::special::{digamma_unchecked, ln_gamma_unchecked};

fn gamma_entropy(shape: f64, rate: f64) -> f64 {
    shape - rate.ln() + ln_gamma_unchecked(shape) + (1.0 - shape) * digamma_unchecked(shape)
}

fn ln_gamma_prior(x_mean: f64, x_log_mean: f64, shape: f64, rate: f64) -> f64 {
    (shape - 1.0) * x_log_mean - rate * x_mean + shape * rate.ln() - ln_gamma_unchecked(shape)
}

/// Evidence lower bound of the current state.
pub fn elbo(
    state: &VariationalState,
    data: &DataAggregates,
    hyper: &Hyperpriors,
    zeta: f64,
) -> Result<f64, FitError> {
    let g = global_moments(state);
    let k_atoms = state.n_atoms();
    let r_max = state.max_rounds();
    let n_docs = data.n_docs as f64;

    let mut total = 0.0;
    let mut add = |term: &'static str, value: f64| -> Result<(), FitError> {
        if !value.is_finite() {
            return Err(FitError::NonFinite { term, iteration: 0 });
        }
        total += value;
        Ok(())
    };

    add(
        "prior_alpha",
        ln_gamma_prior(g.alpha, g.log_alpha, hyper.a1, hyper.a2),
    )?;
    add(
        "prior_gamma",
        ln_gamma_prior(g.gamma, g.log_gamma, hyper.b1, hyper.b2),
    )?;
    add("prior_c", ln_gamma_prior(g.c, g.log_c, hyper.c1, hyper.c2))?;

    // Round indicators given gamma: the expected per-round occupancy
    // indicator plus the pairwise shared-round penalty.
    {
        let mut value = k_atoms as f64 * g.log_gamma;
        for r in 0..r_max {
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for k in 0..k_atoms {
                let p = state.round_probs[k][r];
                sum += p;
                sum_sq += p * p;
            }
            value -= zeta * 0.5 * (sum * sum - sum_sq);
        }
        let mut occupancy = 0.0;
        for r in 1..=r_max {
            let mut prod = 1.0;
            for k in 0..k_atoms {
                let below: f64 = state.round_probs[k][..r - 1].iter().sum();
                prod *= below;
            }
            occupancy += 1.0 - prod;
        }
        value -= g.gamma * occupancy;
        add("rounds_prior", value)?;
    }

    let mut weight_prior = 0.0;
    let mut decay_prior = 0.0;
    let mut count_terms = 0.0;
    let mut decay_pseudo_entropy = 0.0;
    let mut weight_entropy = 0.0;
    let mut round_entropy = 0.0;
    for k in 0..k_atoms {
        let m = q_moments(state, k);
        weight_prior += g.log_c - g.c * m.weight_mean;

        let mut round_mean = 0.0;
        let mut ln_round_factorial = 0.0;
        for (i, &p) in state.round_probs[k].iter().enumerate() {
            let r = i as f64 + 1.0;
            round_mean += r * p;
            ln_round_factorial += p * ln_gamma_unchecked(r);
            if p > 0.0 {
                round_entropy -= p * p.ln();
            }
        }
        decay_prior += round_mean * g.log_alpha - ln_round_factorial
            + (round_mean - 1.0) * m.decay_log_mean
            - g.alpha * m.decay_mean;

        let sum_counts: f64 = state.count_mean[k].iter().sum();
        let mut count_entropy_part = 0.0;
        for &l in &state.count_mean[k] {
            if l > 0.0 {
                count_entropy_part += l - l * l.ln();
            }
        }
        // Poisson prior on the counts plus the entropy of their Poisson
        // factors; the ln z! expectations cancel between the two.
        count_terms += sum_counts * (m.weight_log_mean - m.decay_mean)
            - n_docs * m.weight_mean * m.exp_neg_decay
            + count_entropy_part;

        weight_entropy += gamma_entropy(state.weight_shape[k], state.weight_rate[k]);
        let (u, v) = (state.decay_shape[k], state.decay_rate[k]);
        decay_pseudo_entropy +=
            -v.ln() + ln_gamma_unchecked(u) - (u - 1.0) * digamma_unchecked(u) - u;
    }
    add("weight_prior", weight_prior)?;
    add("decay_prior", decay_prior)?;
    add("count_terms", count_terms)?;
    add("weight_entropy", weight_entropy)?;
    add("decay_entropy", decay_pseudo_entropy)?;
    add("round_entropy", round_entropy)?;

    // Loading prior and entropy under the variational Dirichlet factors.
    {
        let beta0: f64 = hyper.beta.iter().sum();
        let ln_beta_norm = ln_gamma_unchecked(beta0)
            - hyper
                .beta
                .iter()
                .map(|&b| ln_gamma_unchecked(b))
                .sum::<f64>();
        let mut prior = 0.0;
        let mut entropy = 0.0;
        for col in &state.loading {
            let b0: f64 = col.iter().sum();
            let psi_b0 = digamma_unchecked(b0);
            prior += ln_beta_norm;
            let mut ln_b = -ln_gamma_unchecked(b0);
            for (v, &b) in col.iter().enumerate() {
                let e_log_phi = digamma_unchecked(b) - psi_b0;
                prior += (hyper.beta[v] - 1.0) * e_log_phi;
                ln_b += ln_gamma_unchecked(b);
                entropy -= (b - 1.0) * digamma_unchecked(b);
            }
            entropy += ln_b + (b0 - col.len() as f64) * psi_b0;
        }
        add("loading_prior", prior)?;
        add("loading_entropy", entropy)?;
    }

    // Data log-likelihood with expected rates inside the logarithm.
    {
        let mean_loadings = state.expected_loadings();
        let mut value = -data.ln_count_factorials;
        for (n, entries) in data.doc_entries.iter().enumerate() {
            for &(v, d) in entries {
                let rate: f64 = mean_loadings
                    .iter()
                    .zip(&state.count_mean)
                    .map(|(col, counts)| col[v] * counts[n])
                    .sum();
                value += d as f64 * rate.ln();
            }
        }
        for (col, counts) in mean_loadings.iter().zip(&state.count_mean) {
            let col_sum: f64 = col.iter().sum();
            let count_total: f64 = counts.iter().sum();
            value -= col_sum * count_total;
        }
        add("data_loglik", value)?;
    }

    // Entropies of the hyperparameter factors.
    add(
        "global_entropy",
        gamma_entropy(state.alpha_params.0, state.alpha_params.1)
            + gamma_entropy(state.gamma_params.0, state.gamma_params.1)
            + gamma_entropy(state.c_params.0, state.c_params.1),
    )?;

    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Corpus, CountEntry};
    use crate::numeric::SeededRng;
    use crate::vi::{update_global_params, update_weight_params, CountUpdate, ViConfig};

    fn setup(seed: u64) -> (VariationalState, DataAggregates, Hyperpriors, ViConfig) {
        let corpus = Corpus::new(
            8,
            6,
            vec![
                CountEntry {
                    word: 0,
                    doc: 0,
                    count: 2,
                },
                CountEntry {
                    word: 3,
                    doc: 0,
                    count: 1,
                },
                CountEntry {
                    word: 1,
                    doc: 1,
                    count: 3,
                },
                CountEntry {
                    word: 5,
                    doc: 2,
                    count: 2,
                },
                CountEntry {
                    word: 7,
                    doc: 3,
                    count: 4,
                },
                CountEntry {
                    word: 2,
                    doc: 4,
                    count: 1,
                },
                CountEntry {
                    word: 6,
                    doc: 5,
                    count: 2,
                },
            ],
        )
        .unwrap();
        let data = DataAggregates::new(&corpus);
        let hyper = Hyperpriors::symmetric(8, 0.8).unwrap();
        let mut config = ViConfig::new(4, 5);
        config.seed = seed;
        let state = VariationalState::init(&data, &hyper, &config);
        (state, data, hyper, config)
    }

    /// Randomized but valid state for consistency checks.
    pub(crate) fn randomize(state: &mut VariationalState, rng: &mut SeededRng) {
        let span = |rng: &mut SeededRng| 0.4 + 4.0 * rng.next_f64();
        for k in 0..state.n_atoms() {
            state.weight_shape[k] = span(rng);
            state.weight_rate[k] = span(rng);
            state.decay_shape[k] = span(rng);
            state.decay_rate[k] = span(rng);
            let mut total = 0.0;
            for p in state.round_probs[k].iter_mut() {
                *p = 0.05 + rng.next_f64();
                total += *p;
            }
            for p in state.round_probs[k].iter_mut() {
                *p /= total;
            }
            for n in 0..state.n_docs() {
                state.count_mean[k][n] = 0.01 + 3.0 * rng.next_f64();
            }
            for v in 0..state.vocab_size() {
                state.loading[k][v] = 0.2 + 4.0 * rng.next_f64();
            }
        }
        state.alpha_params = (span(rng), span(rng));
        state.gamma_params = (span(rng), span(rng));
        state.c_params = (span(rng), span(rng));
    }

    #[test]
    fn elbo_is_deterministic() {
        let (state, data, hyper, config) = setup(3);
        let a = elbo(&state, &data, &hyper, config.zeta).unwrap();
        let b = elbo(&state, &data, &hyper, config.zeta).unwrap();
        assert_eq!(a, b);
        assert!(a.is_finite());
    }

    #[test]
    fn weight_update_never_decreases_elbo() {
        let (mut state, data, hyper, config) = setup(5);
        let mut rng = SeededRng::new(991);
        for _ in 0..100 {
            randomize(&mut state, &mut rng);
            let before = elbo(&state, &data, &hyper, config.zeta).unwrap();
            update_weight_params(&mut state, &data);
            let after = elbo(&state, &data, &hyper, config.zeta).unwrap();
            assert!(
                after >= before - 1e-8,
                "weight update decreased ELBO: {before} -> {after}"
            );
        }
    }

    #[test]
    fn global_update_never_decreases_elbo() {
        let (mut state, data, hyper, config) = setup(6);
        let mut rng = SeededRng::new(992);
        for _ in 0..100 {
            randomize(&mut state, &mut rng);
            let before = elbo(&state, &data, &hyper, config.zeta).unwrap();
            update_global_params(&mut state, &hyper);
            let after = elbo(&state, &data, &hyper, config.zeta).unwrap();
            assert!(
                after >= before - 1e-8,
                "global update decreased ELBO: {before} -> {after}"
            );
        }
    }

    #[test]
    fn decay_gradient_matches_finite_differences() {
        let (mut state, data, hyper, config) = setup(7);
        let mut rng = SeededRng::new(993);
        let mut checked = 0;
        for _ in 0..20 {
            randomize(&mut state, &mut rng);
            for k in 0..state.n_atoms() {
                let (du, dv) = crate::vi::decay_gradient(&state, &data, k);
                for (coord, analytic) in [(0usize, du), (1usize, dv)] {
                    let base = if coord == 0 {
                        state.decay_shape[k]
                    } else {
                        state.decay_rate[k]
                    };
                    let h = 1e-5 * base.abs().max(1.0);
                    let probe = |x: f64| {
                        let mut s = state.clone();
                        if coord == 0 {
                            s.decay_shape[k] = x;
                        } else {
                            s.decay_rate[k] = x;
                        }
                        elbo(&s, &data, &hyper, config.zeta).unwrap()
                    };
                    let fd = (probe(base + h) - probe(base - h)) / (2.0 * h);
                    let denom = analytic.abs().max(fd.abs()).max(1e-6);
                    assert!(
                        ((fd - analytic) / denom).abs() < 1e-4,
                        "atom {k} coord {coord}: analytic {analytic}, fd {fd}"
                    );
                    checked += 1;
                }
            }
        }
        assert!(checked >= 40);
    }

    #[test]
    fn count_update_modes_keep_elbo_finite() {
        let (mut state, data, hyper, config) = setup(8);
        for mode in [CountUpdate::Literal, CountUpdate::Multiplicative] {
            crate::vi::update_count_means(&mut state, &data, mode);
            state.check_invariants().unwrap();
            assert!(elbo(&state, &data, &hyper, config.zeta)
                .unwrap()
                .is_finite());
        }
    }
}
