//! The variational fitting loop.

use std::time::Instant;

use super::{
    ascend_decay_params, elbo, update_count_means, update_global_params, update_loading_params,
    update_round_probs, update_weight_params, DataAggregates, FitError, FitTrace, TraceRow,
    VariationalState, ViConfig,
};
use crate::crm::GammaProcessParams;
use crate::model::{Corpus, FactorCounts, FactorLoadings, Hyperpriors};

/// Held-out metric of the current state: expected loadings and count means
/// stand in for samples. `NaN` when the test corpus is empty.
pub(crate) fn heldout_of_state(state: &VariationalState, test: &Corpus) -> Result<f64, FitError> {
    if test.total_tokens() == 0 {
        return Ok(f64::NAN);
    }
    let loadings = FactorLoadings::new(state.vocab_size(), state.expected_loadings())?;
    let counts = FactorCounts::new(state.n_docs(), state.count_mean.clone())?;
    Ok(crate::model::heldout_per_word_loglik(
        test, &loadings, &counts,
    )?)
}

/// Fit the variational distribution to a training corpus.
///
/// One iteration runs, in order: count means, loading parameters, weight
/// scales, decay gradient ascent, round indicators, global
/// hyperparameters. The trace records the objective and held-out metric of
/// the initial state and of every iteration; fitting stops at `max_iters`
/// or once the held-out metric has moved less than `convergence_tol` for
/// three consecutive iterations.
///
/// `reference` is the generative parameter point the run is anchored to;
/// it is echoed into run headers by callers and does not enter the update
/// equations, whose starting point comes from `hyper`.
pub fn fit(
    corpus_train: &Corpus,
    corpus_test: &Corpus,
    reference: &GammaProcessParams,
    hyper: &Hyperpriors,
    config: &ViConfig,
) -> Result<(VariationalState, FitTrace), FitError> {
    config.validate()?;
    if corpus_train.total_tokens() == 0 {
        return Err(FitError::Config("training corpus has no tokens".into()));
    }
    if hyper.beta.len() != corpus_train.vocab_size() {
        return Err(FitError::Config(format!(
            "Dirichlet parameter vector has length {}, corpus vocabulary is {}",
            hyper.beta.len(),
            corpus_train.vocab_size()
        )));
    }
    debug_assert!(reference.alpha > 0.0 && reference.c > 0.0 && reference.mass > 0.0);

    let start = Instant::now();
    let data = DataAggregates::new(corpus_train);
    let mut state = VariationalState::init(&data, hyper, config);
    let mut trace = FitTrace::default();

    let initial_elbo = elbo(&state, &data, hyper, config.zeta).map_err(|e| at_iteration(e, 0))?;
    trace.rows.push(TraceRow {
        elbo: Some(initial_elbo),
        heldout: heldout_of_state(&state, corpus_test)?,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    });

    let mut calm_streak = 0u32;
    for iteration in 1..=config.max_iters {
        update_count_means(&mut state, &data, config.count_update);
        update_loading_params(&mut state, &data, hyper);
        update_weight_params(&mut state, &data);
        ascend_decay_params(&mut state, &data, config);
        update_round_probs(&mut state, config.zeta);
        update_global_params(&mut state, hyper);

        let elbo_val =
            elbo(&state, &data, hyper, config.zeta).map_err(|e| at_iteration(e, iteration))?;
        let heldout = heldout_of_state(&state, corpus_test)?;
        let prev = trace.rows.last().expect("initial row").heldout;
        trace.rows.push(TraceRow {
            elbo: Some(elbo_val),
            heldout,
            elapsed_seconds: start.elapsed().as_secs_f64(),
        });

        if (heldout - prev).abs() < config.convergence_tol {
            calm_streak += 1;
            if calm_streak >= 3 {
                break;
            }
        } else {
            calm_streak = 0;
        }
    }
    Ok((state, trace))
}

fn at_iteration(err: FitError, iteration: u32) -> FitError {
    match err {
        FitError::NonFinite { term, .. } => FitError::NonFinite { term, iteration },
        other => other,
    }
}
