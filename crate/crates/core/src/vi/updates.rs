//! Coordinate updates and the decay-parameter gradient.
//!
//! Updates within one phase read a snapshot of any cross-atom quantities,
//! so running atoms concurrently would give the same state as this
//! sequential code.

use super::{global_moments, q_moments, CountUpdate, DataAggregates, VariationalState, ViConfig};
use crate::model::Hyperpriors;
use crate::numeric::special::{digamma_unchecked, ln_gamma_unchecked, trigamma_unchecked};

const COUNT_FLOOR: f64 = 1e-8;
const LOADING_FLOOR: f64 = 1e-6;
const DECAY_FLOOR: f64 = 1e-6;

/// Update every count mean `lambda_{nk}`.
///
/// The literal rule is `-1 - sum_v d_vn + E[ln E_k] + E[T_k]`, floored at
/// 1e-8. The multiplicative rule allocates each document's tokens to atoms
/// by responsibilities proportional to `exp(E[ln phi_vk]) * lambda_old`
/// and blends the allocation with the geometric-mean prior rate
/// `exp(E[ln E_k] - E[T_k])`.
pub fn update_count_means(state: &mut VariationalState, data: &DataAggregates, mode: CountUpdate) {
    let k_atoms = state.n_atoms();
    match mode {
        CountUpdate::Literal => {
            for k in 0..k_atoms {
                let m = q_moments(state, k);
                let base = -1.0 + m.weight_log_mean + m.decay_mean;
                for n in 0..data.n_docs {
                    state.count_mean[k][n] = (base - data.doc_totals[n]).max(COUNT_FLOOR);
                }
            }
        }
        CountUpdate::Multiplicative => {
            // exp(E[ln phi_vk]) per atom, plus the mean column sums.
            let mut log_weights = Vec::with_capacity(k_atoms);
            let mut mean_col_sums = Vec::with_capacity(k_atoms);
            let mut prior_rate = Vec::with_capacity(k_atoms);
            for k in 0..k_atoms {
                let b0: f64 = state.loading[k].iter().sum();
                let psi_b0 = digamma_unchecked(b0);
                log_weights.push(
                    state.loading[k]
                        .iter()
                        .map(|&b| (digamma_unchecked(b) - psi_b0).exp())
                        .collect::<Vec<f64>>(),
                );
                // Columns of the mean loadings sum to one by construction.
                mean_col_sums.push(1.0);
                let m = q_moments(state, k);
                prior_rate.push((m.weight_log_mean - m.decay_mean).exp());
            }
            let old = state.count_mean.clone();
            for (n, entries) in data.doc_entries.iter().enumerate() {
                let mut alloc = vec![0.0; k_atoms];
                for &(v, d) in entries {
                    let mut cell_rate = 0.0;
                    for k in 0..k_atoms {
                        cell_rate += log_weights[k][v] * old[k][n];
                    }
                    if cell_rate > 0.0 {
                        let scale = d as f64 / cell_rate;
                        for k in 0..k_atoms {
                            alloc[k] += scale * log_weights[k][v] * old[k][n];
                        }
                    }
                }
                for k in 0..k_atoms {
                    state.count_mean[k][n] =
                        ((prior_rate[k] + alloc[k]) / (1.0 + mean_col_sums[k])).max(COUNT_FLOOR);
                }
            }
        }
    }
}

/// Update every loading parameter: `b_vk = -sum_n lambda_nk + sum_n d_vn +
/// beta_v`, floored at 1e-6.
pub fn update_loading_params(
    state: &mut VariationalState,
    data: &DataAggregates,
    hyper: &Hyperpriors,
) {
    for k in 0..state.n_atoms() {
        let count_total: f64 = state.count_mean[k].iter().sum();
        for v in 0..data.vocab_size {
            state.loading[k][v] =
                (data.word_totals[v] - count_total + hyper.beta[v]).max(LOADING_FLOOR);
        }
    }
}

/// Exact coordinate update of the weight-scale factors: shape is one plus
/// the summed count means, rate is `E[c] + N * E[e^{-T_k}]`.
pub fn update_weight_params(state: &mut VariationalState, data: &DataAggregates) {
    let g = global_moments(state);
    let n = data.n_docs as f64;
    for k in 0..state.n_atoms() {
        let m = q_moments(state, k);
        let count_total: f64 = state.count_mean[k].iter().sum();
        state.weight_shape[k] = count_total + 1.0;
        state.weight_rate[k] = g.c + n * m.exp_neg_decay;
    }
}

/// Partial derivatives of the objective in the decay parameters (shape,
/// rate) of atom `k`.
pub fn decay_gradient(state: &VariationalState, data: &DataAggregates, k: usize) -> (f64, f64) {
    let g = global_moments(state);
    let m = q_moments(state, k);
    let u = state.decay_shape[k];
    let v = state.decay_rate[k];
    let n = data.n_docs as f64;
    let sum_counts: f64 = state.count_mean[k].iter().sum();
    let round_excess: f64 = state.round_probs[k]
        .iter()
        .enumerate()
        .map(|(i, &p)| i as f64 * p) // (r - 1) with r = i + 1
        .sum();
    let psi1 = trigamma_unchecked(u);
    let log_ratio = (v / (v + 1.0)).ln();

    let du = round_excess * psi1
        - g.alpha / v
        - n * m.weight_mean * m.exp_neg_decay * log_ratio
        - sum_counts / v
        - (u - 1.0) * psi1
        - 1.0;
    // v^{u-1}/(v+1)^{u+1} in log space.
    let ratio_term = ((u - 1.0) * v.ln() - (u + 1.0) * (v + 1.0).ln()).exp();
    let dv = -round_excess / v + g.alpha * u / (v * v) - n * m.weight_mean * u * ratio_term
        + sum_counts * u / (v * v)
        - 1.0 / v;
    (du, dv)
}

/// Gradient-ascent steps on every atom's decay parameters, clamping both
/// coordinates at 1e-6 after each step.
pub fn ascend_decay_params(state: &mut VariationalState, data: &DataAggregates, config: &ViConfig) {
    for k in 0..state.n_atoms() {
        for _ in 0..config.grad_steps {
            let (du, dv) = decay_gradient(state, data, k);
            state.decay_shape[k] =
                (state.decay_shape[k] + config.learning_rate * du).max(DECAY_FLOOR);
            state.decay_rate[k] =
                (state.decay_rate[k] + config.learning_rate * dv).max(DECAY_FLOOR);
        }
    }
}

/// Cumulative round probabilities: `cums[k][r]` is the probability that
/// atom k's round is at most `r` (1-based); `cums[k][0] = 0`.
fn cumulative_round_probs(state: &VariationalState) -> Vec<Vec<f64>> {
    state
        .round_probs
        .iter()
        .map(|probs| {
            let mut cums = Vec::with_capacity(probs.len() + 1);
            let mut acc = 0.0;
            cums.push(0.0);
            for &p in probs {
                acc += p;
                cums.push(acc);
            }
            cums
        })
        .collect()
}

/// Update every round-indicator distribution from a snapshot of the
/// current state, normalizing with max subtraction.
pub fn update_round_probs(state: &mut VariationalState, zeta: f64) {
    let g = global_moments(state);
    let k_atoms = state.n_atoms();
    let r_max = state.max_rounds();
    let old = state.round_probs.clone();
    let cums = cumulative_round_probs(state);
    for k in 0..k_atoms {
        let m = q_moments(state, k);
        let mut log_w = Vec::with_capacity(r_max);
        // Occupancy penalty: at support point r the sum over j = 2..=r of
        // the product over other atoms of their probability of living
        // strictly below round j.
        let mut occupancy = 0.0;
        for r in 1..=r_max {
            if r >= 2 {
                let mut prod = 1.0;
                for (i, cum) in cums.iter().enumerate() {
                    if i != k {
                        prod *= cum[r - 1];
                    }
                }
                occupancy += prod;
            }
            let overlap: f64 = (0..k_atoms)
                .filter(|&i| i != k)
                .map(|i| old[i][r - 1])
                .sum();
            let lw = r as f64 * g.log_alpha - ln_gamma_unchecked(r as f64)
                + (r as f64 - 1.0) * m.decay_log_mean
                - zeta * overlap
                - g.gamma * occupancy;
            log_w.push(lw);
        }
        let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for lw in log_w.iter_mut() {
            *lw = (*lw - max).exp();
            total += *lw;
        }
        for (r, lw) in log_w.iter().enumerate() {
            state.round_probs[k][r] = lw / total;
        }
    }
}

/// Exact coordinate updates of the hyperparameter factors q(alpha),
/// q(c), q(gamma).
pub fn update_global_params(state: &mut VariationalState, hyper: &Hyperpriors) {
    let k_atoms = state.n_atoms();
    let r_max = state.max_rounds();
    let mut round_mean_sum = 0.0;
    let mut decay_mean_sum = 0.0;
    let mut weight_mean_sum = 0.0;
    for k in 0..k_atoms {
        let m = q_moments(state, k);
        decay_mean_sum += m.decay_mean;
        weight_mean_sum += m.weight_mean;
        round_mean_sum += state.round_probs[k]
            .iter()
            .enumerate()
            .map(|(i, &p)| (i as f64 + 1.0) * p)
            .sum::<f64>();
    }
    state.alpha_params = (round_mean_sum + hyper.a1, decay_mean_sum + hyper.a2);
    state.c_params = (hyper.c1 + k_atoms as f64, weight_mean_sum + hyper.c2);

    let cums = cumulative_round_probs(state);
    let mut occupancy_total = 0.0;
    for r in 1..=r_max {
        let mut prod = 1.0;
        for cum in &cums {
            prod *= cum[r - 1];
        }
        occupancy_total += 1.0 - prod;
    }
    state.gamma_params = (hyper.b1 + k_atoms as f64, occupancy_total + hyper.b2);
}
