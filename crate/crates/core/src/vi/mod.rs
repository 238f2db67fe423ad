//! Truncated mean-field variational inference for the Gamma-Poisson factor
//! model.
//!
//! The variational family is fully factorized: Gamma factors for the atom
//! weight scales `E_k`, the decay variables `T_k`, and the hyperparameters
//! alpha, gamma, c; a multinomial over rounds for each atom's round
//! indicator; a Poisson factor for every latent count `z_nk`; and a
//! Dirichlet factor for every loading column.
//!
//! Weight-scale and hyperparameter factors have exact coordinate updates;
//! the decay factors move by gradient ascent on the objective; the count
//! and loading updates follow printed closed forms with positivity clamps
//! (see [`CountUpdate`] for the alternative count rule).

mod elbo;
mod fit;
mod updates;

pub use elbo::elbo;
pub use fit::fit;
pub use updates::{
    ascend_decay_params, decay_gradient, update_count_means, update_global_params,
    update_loading_params, update_round_probs, update_weight_params,
};

use crate::model::{Corpus, Hyperpriors, ModelError};
use crate::numeric::special::{digamma_unchecked, ln_gamma_unchecked};
use crate::numeric::SeededRng;

#[derive(Debug, thiserror::Error)]
pub enum FitError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite ELBO term '{term}' at iteration {iteration}")]
    NonFinite { term: &'static str, iteration: u32 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Which count-mean update rule to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CountUpdate {
    /// The closed-form lower-bound rule, clamped below at 1e-8.
    #[default]
    Literal,
    /// Multiplicative rule: tokens are allocated to factors by
    /// responsibilities built from expected log-loadings, then blended with
    /// the geometric-mean prior rate.
    Multiplicative,
}

/// Configuration of the variational fit.
#[derive(Debug, Clone)]
pub struct ViConfig {
    /// Number of atoms K the process is truncated to.
    pub truncation_atoms: usize,
    /// Support size of each round-indicator distribution.
    pub max_rounds: usize,
    pub learning_rate: f64,
    pub grad_steps: u32,
    /// Coupling strength on the round-occupancy interaction.
    pub zeta: f64,
    pub max_iters: u32,
    /// Held-out metric change below which an iteration counts as converged;
    /// three consecutive converged iterations stop the fit.
    pub convergence_tol: f64,
    pub count_update: CountUpdate,
    pub seed: u64,
}

impl ViConfig {
    pub fn new(truncation_atoms: usize, max_rounds: usize) -> Self {
        ViConfig {
            truncation_atoms,
            max_rounds,
            learning_rate: 1e-4,
            grad_steps: 5,
            zeta: 1.0,
            max_iters: 100,
            convergence_tol: 1e-4,
            count_update: CountUpdate::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), FitError> {
        if self.truncation_atoms < 1 {
            return Err(FitError::Config("truncation_atoms must be >= 1".into()));
        }
        if self.max_rounds < 1 {
            return Err(FitError::Config("max_rounds must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 || self.learning_rate.is_nan() {
            return Err(FitError::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// One record of a fit or chain trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    /// Objective value; absent for sampler traces.
    pub elbo: Option<f64>,
    pub heldout: f64,
    pub elapsed_seconds: f64,
}

/// Per-iteration history of a fit.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitTrace {
    pub rows: Vec<TraceRow>,
}

/// All parameters of the factorized variational distribution.
///
/// Atom-indexed vectors have length K; `round_probs[k]` has the
/// round-support length and sums to one; `count_mean[k][n]` holds the
/// Poisson means for the latent counts; `loading[k][v]` the Dirichlet
/// parameters of the loading columns.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState {
    /// Gamma(shape, rate) for each weight scale E_k.
    pub weight_shape: Vec<f64>,
    pub weight_rate: Vec<f64>,
    /// Gamma(shape, rate) for each decay variable T_k.
    pub decay_shape: Vec<f64>,
    pub decay_rate: Vec<f64>,
    /// Multinomial round-indicator probabilities per atom.
    pub round_probs: Vec<Vec<f64>>,
    /// Gamma parameters of q(alpha), q(gamma), q(c).
    pub alpha_params: (f64, f64),
    pub gamma_params: (f64, f64),
    pub c_params: (f64, f64),
    /// Poisson means of the latent factor counts, `[k][n]`.
    pub count_mean: Vec<Vec<f64>>,
    /// Variational Dirichlet parameters of the loading columns, `[k][v]`.
    pub loading: Vec<Vec<f64>>,
}

/// Expectations of one atom's variational factors.
#[derive(Debug, Clone, Copy)]
pub struct AtomMoments {
    /// E[E_k]
    pub weight_mean: f64,
    /// E[ln E_k]
    pub weight_log_mean: f64,
    /// E[T_k]
    pub decay_mean: f64,
    /// E[ln T_k]
    pub decay_log_mean: f64,
    /// E[e^{-T_k}] = (rate/(rate+1))^shape
    pub exp_neg_decay: f64,
}

/// Expectations of the global hyperparameter factors.
#[derive(Debug, Clone, Copy)]
pub struct GlobalMoments {
    pub alpha: f64,
    pub log_alpha: f64,
    pub gamma: f64,
    pub log_gamma: f64,
    pub c: f64,
    pub log_c: f64,
}

fn gamma_mean_log(shape: f64, rate: f64) -> (f64, f64) {
    (shape / rate, digamma_unchecked(shape) - rate.ln())
}

/// Moment bundle for atom `k`.
pub fn q_moments(state: &VariationalState, k: usize) -> AtomMoments {
    let (weight_mean, weight_log_mean) =
        gamma_mean_log(state.weight_shape[k], state.weight_rate[k]);
    let (u, v) = (state.decay_shape[k], state.decay_rate[k]);
    let (decay_mean, decay_log_mean) = gamma_mean_log(u, v);
    AtomMoments {
        weight_mean,
        weight_log_mean,
        decay_mean,
        decay_log_mean,
        exp_neg_decay: (u * (v / (v + 1.0)).ln()).exp(),
    }
}

/// Moment bundle for the hyperparameter factors.
pub fn global_moments(state: &VariationalState) -> GlobalMoments {
    let (alpha, log_alpha) = gamma_mean_log(state.alpha_params.0, state.alpha_params.1);
    let (gamma, log_gamma) = gamma_mean_log(state.gamma_params.0, state.gamma_params.1);
    let (c, log_c) = gamma_mean_log(state.c_params.0, state.c_params.1);
    GlobalMoments {
        alpha,
        log_alpha,
        gamma,
        log_gamma,
        c,
        log_c,
    }
}

impl VariationalState {
    pub fn n_atoms(&self) -> usize {
        self.weight_shape.len()
    }

    pub fn max_rounds(&self) -> usize {
        self.round_probs.first().map_or(0, |p| p.len())
    }

    pub fn n_docs(&self) -> usize {
        self.count_mean.first().map_or(0, |row| row.len())
    }

    pub fn vocab_size(&self) -> usize {
        self.loading.first().map_or(0, |col| col.len())
    }

    /// Symmetric initial state with seeded jitter on the loading
    /// parameters to break factor symmetry.
    pub fn init(data: &DataAggregates, hyper: &Hyperpriors, config: &ViConfig) -> VariationalState {
        let k = config.truncation_atoms;
        let r = config.max_rounds;
        let n = data.n_docs;
        let v = data.vocab_size;
        let mut rng = SeededRng::new(config.seed).substream(0x1217);
        let mut loading = Vec::with_capacity(k);
        for _ in 0..k {
            loading.push(
                (0..v)
                    .map(|w| hyper.beta[w] + 0.1 * rng.next_f64())
                    .collect(),
            );
        }
        let count_mean = (0..k)
            .map(|_| (0..n).map(|doc| data.doc_totals[doc] / k as f64).collect())
            .collect();
        VariationalState {
            weight_shape: vec![1.0; k],
            weight_rate: vec![1.0; k],
            decay_shape: vec![1.0; k],
            decay_rate: vec![1.0; k],
            round_probs: vec![vec![1.0 / r as f64; r]; k],
            alpha_params: (hyper.a1, hyper.a2),
            gamma_params: (hyper.b1, hyper.b2),
            c_params: (hyper.c1, hyper.c2),
            count_mean,
            loading,
        }
    }

    /// Check the structural invariants: strictly positive Gamma and
    /// Dirichlet parameters, normalized round probabilities, nonnegative
    /// count means.
    pub fn check_invariants(&self) -> Result<(), FitError> {
        let pos = |name: &'static str, xs: &[f64]| -> Result<(), FitError> {
            if xs.iter().any(|&x| x <= 0.0 || !x.is_finite()) {
                return Err(FitError::Config(format!(
                    "{name} must stay strictly positive"
                )));
            }
            Ok(())
        };
        pos("weight_shape", &self.weight_shape)?;
        pos("weight_rate", &self.weight_rate)?;
        pos("decay_shape", &self.decay_shape)?;
        pos("decay_rate", &self.decay_rate)?;
        for (name, pair) in [
            ("alpha_params", self.alpha_params),
            ("gamma_params", self.gamma_params),
            ("c_params", self.c_params),
        ] {
            pos(name, &[pair.0, pair.1])?;
        }
        for probs in &self.round_probs {
            if (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 || probs.iter().any(|&p| p < 0.0) {
                return Err(FitError::Config(
                    "round probabilities must be a distribution".into(),
                ));
            }
        }
        for row in &self.count_mean {
            if row.iter().any(|&l| l < 0.0 || !l.is_finite()) {
                return Err(FitError::Config("count means must be nonnegative".into()));
            }
        }
        for col in &self.loading {
            pos("loading", col)?;
        }
        Ok(())
    }

    /// Expected loading columns under the variational Dirichlet factors.
    pub fn expected_loadings(&self) -> Vec<Vec<f64>> {
        self.loading
            .iter()
            .map(|col| {
                let total: f64 = col.iter().sum();
                col.iter().map(|&b| b / total).collect()
            })
            .collect()
    }
}

/// Per-corpus sums the updates consume.
#[derive(Debug, Clone)]
pub struct DataAggregates {
    pub vocab_size: usize,
    pub n_docs: usize,
    /// Tokens per document.
    pub doc_totals: Vec<f64>,
    /// Tokens per word across documents.
    pub word_totals: Vec<f64>,
    pub total_tokens: f64,
    /// Nonzero (word, count) pairs per document.
    pub doc_entries: Vec<Vec<(usize, u32)>>,
    /// Sum of ln(d!) over nonzero cells; constant data term of the objective.
    pub ln_count_factorials: f64,
}

impl DataAggregates {
    pub fn new(corpus: &Corpus) -> DataAggregates {
        let ln_count_factorials = corpus
            .entries()
            .iter()
            .map(|e| ln_gamma_unchecked(e.count as f64 + 1.0))
            .sum();
        DataAggregates {
            vocab_size: corpus.vocab_size(),
            n_docs: corpus.n_docs(),
            doc_totals: corpus.doc_totals().iter().map(|&t| t as f64).collect(),
            word_totals: corpus.word_totals().iter().map(|&t| t as f64).collect(),
            total_tokens: corpus.total_tokens() as f64,
            doc_entries: corpus.doc_entries(),
            ln_count_factorials,
        }
    }
}
