//! Seeded samplers for the distributions the construction and the two
//! inference engines draw from.
//!
//! Everything uses the rate parameterization: Gamma(shape, rate) has mean
//! shape/rate, Exponential(rate) has mean 1/rate.

use super::rng::SeededRng;
use super::special::ln_gamma_unchecked;
use super::NumericError;

fn check(cond: bool, msg: impl Fn() -> String) -> Result<(), NumericError> {
    if cond {
        Ok(())
    } else {
        Err(NumericError::Domain(msg()))
    }
}

/// Standard normal draw via Box-Muller.
pub fn std_normal(rng: &mut SeededRng) -> f64 {
    let u1 = rng.next_f64_open();
    let u2 = rng.next_f64();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Exponential(rate) draw by inversion.
pub fn exponential(rng: &mut SeededRng, rate: f64) -> Result<f64, NumericError> {
    check(rate.is_finite() && rate > 0.0, || {
        format!("exponential rate must be positive, got {rate}")
    })?;
    Ok(-rng.next_f64_open().ln() / rate)
}

/// Gamma(shape, rate) draw; Marsaglia-Tsang squeeze with the boost for
/// shape < 1.
pub fn gamma(rng: &mut SeededRng, shape: f64, rate: f64) -> Result<f64, NumericError> {
    check(shape.is_finite() && shape > 0.0, || {
        format!("gamma shape must be positive, got {shape}")
    })?;
    check(rate.is_finite() && rate > 0.0, || {
        format!("gamma rate must be positive, got {rate}")
    })?;
    Ok(gamma_unchecked(rng, shape, rate))
}

pub(crate) fn gamma_unchecked(rng: &mut SeededRng, shape: f64, rate: f64) -> f64 {
    if shape < 1.0 {
        let boost = rng.next_f64_open().powf(1.0 / shape);
        return gamma_unchecked(rng, shape + 1.0, rate) * boost;
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = std_normal(rng);
        let t = 1.0 + c * x;
        if t <= 0.0 {
            continue;
        }
        let v = t * t * t;
        let u = rng.next_f64_open();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 {
            return d * v / rate;
        }
        if u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v / rate;
        }
    }
}

/// Beta(a, b) draw via two gammas.
pub fn beta(rng: &mut SeededRng, a: f64, b: f64) -> Result<f64, NumericError> {
    check(a.is_finite() && a > 0.0, || {
        format!("beta a must be positive, got {a}")
    })?;
    check(b.is_finite() && b > 0.0, || {
        format!("beta b must be positive, got {b}")
    })?;
    loop {
        let x = gamma_unchecked(rng, a, 1.0);
        let y = gamma_unchecked(rng, b, 1.0);
        if x + y > 0.0 {
            return Ok(x / (x + y));
        }
    }
}

/// Poisson(mean) draw. Sequential inversion below mean 30, Hörmann's
/// transformed rejection (PTRS) above.
pub fn poisson(rng: &mut SeededRng, mean: f64) -> Result<u64, NumericError> {
    check(mean.is_finite() && mean >= 0.0, || {
        format!("poisson mean must be nonnegative, got {mean}")
    })?;
    if mean == 0.0 {
        return Ok(0);
    }
    if mean < 30.0 {
        let mut p = (-mean).exp();
        let mut cdf = p;
        let mut k = 0u64;
        let u = rng.next_f64();
        while u > cdf {
            k += 1;
            p *= mean / k as f64;
            cdf += p;
            if k > 10_000 {
                break;
            }
        }
        Ok(k)
    } else {
        Ok(poisson_ptrs(rng, mean))
    }
}

fn poisson_ptrs(rng: &mut SeededRng, mean: f64) -> u64 {
    let b = 0.931 + 2.53 * mean.sqrt();
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let v_r = 0.9277 - 3.6224 / (b - 2.0);
    let ln_mean = mean.ln();
    loop {
        let u = rng.next_f64() - 0.5;
        let v = rng.next_f64();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + mean + 0.43).floor();
        if us >= 0.07 && v <= v_r {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        let lhs = (v * inv_alpha / (a / (us * us) + b)).ln();
        if lhs <= k * ln_mean - mean - ln_gamma_unchecked(k + 1.0) {
            return k as u64;
        }
    }
}

/// Dirichlet(weights) draw: normalized independent gammas.
pub fn dirichlet(rng: &mut SeededRng, weights: &[f64]) -> Result<Vec<f64>, NumericError> {
    check(!weights.is_empty(), || {
        "dirichlet needs at least one weight".to_string()
    })?;
    for &w in weights {
        check(w.is_finite() && w > 0.0, || {
            format!("dirichlet weights must be positive, got {w}")
        })?;
    }
    loop {
        let draws: Vec<f64> = weights
            .iter()
            .map(|&w| gamma_unchecked(rng, w, 1.0))
            .collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 {
            return Ok(draws.iter().map(|&g| g / total).collect());
        }
    }
}

/// Multinomial(n, probs) draw by per-token categorical sampling.
pub fn multinomial(rng: &mut SeededRng, n: u64, probs: &[f64]) -> Result<Vec<u64>, NumericError> {
    check(!probs.is_empty(), || {
        "multinomial needs at least one category".to_string()
    })?;
    let mut total = 0.0;
    for &p in probs {
        check(p.is_finite() && p >= 0.0, || {
            format!("multinomial probs must be nonnegative, got {p}")
        })?;
        total += p;
    }
    check(total > 0.0, || {
        "multinomial probs must have positive sum".to_string()
    })?;
    let mut counts = vec![0u64; probs.len()];
    for _ in 0..n {
        let mut u = rng.next_f64() * total;
        let mut idx = probs.len() - 1;
        for (i, &p) in probs.iter().enumerate() {
            if u < p {
                idx = i;
                break;
            }
            u -= p;
        }
        counts[idx] += 1;
    }
    Ok(counts)
}

/// Categorical draw over unnormalized log-weights, max-subtracted.
pub fn categorical_from_log_weights(
    rng: &mut SeededRng,
    log_weights: &[f64],
) -> Result<usize, NumericError> {
    check(!log_weights.is_empty(), || {
        "categorical needs at least one weight".to_string()
    })?;
    let max = log_weights
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    check(max.is_finite(), || {
        "categorical log-weights are all non-finite".to_string()
    })?;
    let weights: Vec<f64> = log_weights.iter().map(|&lw| (lw - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.next_f64() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return Ok(i);
        }
        u -= w;
    }
    Ok(weights.len() - 1)
}
