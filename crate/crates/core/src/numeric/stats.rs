//! Hypothesis tests used by the validation harness: Kolmogorov-Smirnov
//! (one- and two-sample) and a chi-square goodness-of-fit test.

use super::special::reg_lower_gamma;
use super::NumericError;

/// Outcome of a hypothesis test.
#[derive(Debug, Clone)]
pub struct TestReport {
    pub statistic: f64,
    pub p_value: f64,
    pub sample_sizes: Vec<usize>,
}

/// Asymptotic Kolmogorov p-value Q_KS(lambda), per the Marsaglia-style
/// two-regime series.
fn kolmogorov_p(lambda: f64) -> f64 {
    if lambda < 1e-8 {
        return 1.0;
    }
    let p = if lambda < 1.18 {
        // Small-lambda regime: complementary theta-series.
        let t = (-std::f64::consts::PI * std::f64::consts::PI / (8.0 * lambda * lambda)).exp();
        1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda
            * (t + t.powi(9) + t.powi(25) + t.powi(49))
    } else {
        let mut sum = 0.0;
        let mut sign = 1.0;
        for j in 1..=100 {
            let term = sign * (-2.0 * (j as f64) * (j as f64) * lambda * lambda).exp();
            sum += term;
            if term.abs() < 1e-14 {
                break;
            }
            sign = -sign;
        }
        2.0 * sum
    };
    p.clamp(0.0, 1.0)
}

fn ks_p_value(n_eff: f64, d: f64) -> f64 {
    let sqrt_n = n_eff.sqrt();
    kolmogorov_p((sqrt_n + 0.12 + 0.11 / sqrt_n) * d)
}

fn sorted_copy(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_unstable_by(|a, b| a.partial_cmp(b).expect("samples must not contain NaN"));
    v
}

/// One-sample Kolmogorov-Smirnov test of `samples` against the given CDF.
pub fn ks_test(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<TestReport, NumericError> {
    if samples.is_empty() {
        return Err(NumericError::Domain(
            "ks_test needs a nonempty sample".into(),
        ));
    }
    let xs = sorted_copy(samples);
    let n = xs.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        let hi = (i as f64 + 1.0) / n - f;
        let lo = f - i as f64 / n;
        d = d.max(hi).max(lo);
    }
    Ok(TestReport {
        statistic: d,
        p_value: ks_p_value(n, d),
        sample_sizes: vec![xs.len()],
    })
}

/// Two-sample Kolmogorov-Smirnov test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<TestReport, NumericError> {
    if a.is_empty() || b.is_empty() {
        return Err(NumericError::Domain(
            "ks_two_sample needs nonempty samples".into(),
        ));
    }
    let xs = sorted_copy(a);
    let ys = sorted_copy(b);
    let (n1, n2) = (xs.len() as f64, ys.len() as f64);
    let mut i = 0;
    let mut j = 0;
    let mut d = 0.0f64;
    while i < xs.len() && j < ys.len() {
        let v = xs[i].min(ys[j]);
        while i < xs.len() && xs[i] <= v {
            i += 1;
        }
        while j < ys.len() && ys[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n1 - j as f64 / n2).abs());
    }
    let n_eff = n1 * n2 / (n1 + n2);
    Ok(TestReport {
        statistic: d,
        p_value: ks_p_value(n_eff, d),
        sample_sizes: vec![xs.len(), ys.len()],
    })
}

/// Chi-square goodness-of-fit test for binned counts against expected bin
/// probabilities. Bins with expected count below 5 should be pooled by the
/// caller; degrees of freedom are `bins - 1`.
pub fn chi_square_gof(observed: &[u64], expected: &[f64]) -> Result<TestReport, NumericError> {
    if observed.len() != expected.len() || observed.len() < 2 {
        return Err(NumericError::Domain(
            "chi_square_gof needs >= 2 matching bins".into(),
        ));
    }
    let mut stat = 0.0;
    for (&o, &e) in observed.iter().zip(expected) {
        if e <= 0.0 || e.is_nan() {
            return Err(NumericError::Domain(format!(
                "expected bin count must be positive, got {e}"
            )));
        }
        let diff = o as f64 - e;
        stat += diff * diff / e;
    }
    let df = (observed.len() - 1) as f64;
    let p = (1.0 - reg_lower_gamma(df / 2.0, stat / 2.0)).clamp(0.0, 1.0);
    Ok(TestReport {
        statistic: stat,
        p_value: p,
        sample_sizes: vec![observed.iter().map(|&o| o as usize).sum()],
    })
}

/// log(sum(exp(xs))) with max subtraction.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}
