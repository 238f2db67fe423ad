//! Acceptance suite: one test per gate criterion, at full replication.
//!
//! Each test prints its pass/fail line; run with `--nocapture` to see the
//! lines for passing tests. `paper_scale_ordering` runs only when the
//! `PSYREV_BOW` environment variable points at a bag-of-words file.

use sbgp::cli::validate::{self, CheckResult, ValidateOptions};

fn full() -> ValidateOptions {
    ValidateOptions {
        quick: false,
        psyrev: None,
        seed: 0,
    }
}

fn gate(result: CheckResult) {
    println!("{}", result.line());
    assert!(result.passed, "{}", result.line());
}

/// Mean total mass and per-round mean weights of seeded draws.
#[test]
fn criterion_1_construction_moments() {
    gate(validate::construction_moments(&full()));
}

/// Truncated total masses follow the Gamma(alpha*mass, c) law.
#[test]
fn criterion_2_total_mass_law() {
    gate(validate::total_mass_law(&full()));
}

/// The three weight representations agree in distribution, rounds 1-3.
#[test]
fn criterion_3_representation_equivalence() {
    gate(validate::representation_equivalence(&full()));
}

/// Simulated tail-event probabilities never exceed the closed-form bound
/// beyond Monte Carlo error.
#[test]
fn criterion_4_truncation_bound_validity() {
    gate(validate::truncation_bound_validity(&full()));
}

/// Printed decay gradients are the derivatives of the assembled objective.
#[test]
fn criterion_5_gradient_consistency() {
    gate(validate::gradient_consistency(&full()));
}

/// Closed-form coordinate updates never decrease the objective.
#[test]
fn criterion_6_coordinate_monotonicity() {
    gate(validate::coordinate_monotonicity(&full()));
}

/// The fit's held-out metric plateaus by iteration 15 in most restarts.
#[test]
fn criterion_7_vi_convergence() {
    gate(validate::vi_convergence(&full()));
}

/// The variational fit and the sampler agree on held-out likelihood.
#[test]
fn criterion_8_vi_mcmc_agreement() {
    gate(validate::vi_mcmc_agreement(&full()));
}

/// Sampler building blocks: exact conservation, conjugate means, Monte
/// Carlo marginal versus quadrature.
#[test]
fn criterion_9_sampler_units() {
    gate(validate::sampler_units(&full()));
}

/// Optional real-corpus ordering: VI within 0.05 nats of (or above) the
/// sampler. Runs only when PSYREV_BOW is set; prints a skip line
/// otherwise.
#[test]
fn criterion_10_paper_scale_ordering() {
    match std::env::var_os("PSYREV_BOW") {
        Some(path) => {
            let result = validate::paper_scale_ordering(&full(), std::path::Path::new(&path));
            gate(result);
        }
        None => println!(
            "SKIP paper_scale_ordering         set PSYREV_BOW to run the real-corpus comparison"
        ),
    }
}

/// Per-round atom counts are Poisson; companion construction invariant.
#[test]
fn invariant_per_round_counts_poisson() {
    gate(validate::per_round_counts_poisson(&full()));
}
