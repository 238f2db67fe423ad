//! Truncated draws from the gamma process via three equivalent
//! stick-breaking representations, plus their analytic moments.
//!
//! A draw proceeds in rounds. Round `i` contributes a Poisson(mass) number
//! of atoms whose weights decay geometrically in expectation: the expected
//! weight of a single round-`i` atom is `(1/c) * (alpha/(1+alpha))^i`, and
//! the total mass of the untruncated process follows
//! Gamma(alpha * mass, c).

use std::io::{BufRead, Write};

use crate::numeric::dist;
use crate::numeric::{NumericError, SeededRng};

/// Prior triple of the gamma process: stick-breaking concentration `alpha`,
/// rate concentration `c`, and `mass`, the Poisson rate of atoms per round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaProcessParams {
    pub alpha: f64,
    pub c: f64,
    pub mass: f64,
}

impl GammaProcessParams {
    pub fn new(alpha: f64, c: f64, mass: f64) -> Result<Self, NumericError> {
        for (name, v) in [("alpha", alpha), ("c", c), ("mass", mass)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(NumericError::Domain(format!(
                    "gamma process {name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(GammaProcessParams { alpha, c, mass })
    }

    /// Per-round geometric decay ratio alpha/(1+alpha).
    pub fn decay_ratio(&self) -> f64 {
        self.alpha / (1.0 + self.alpha)
    }
}

/// One weighted atom of a truncated draw.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedAtom {
    /// Round the atom arrived in (1-based).
    pub round: u32,
    /// Position within its round (1-based).
    pub index_in_round: u32,
    pub weight: f64,
    /// Opaque sequential label standing in for the atom location.
    pub atom_id: u64,
}

/// A truncated stick-breaking draw.
#[derive(Debug, Clone)]
pub struct GammaProcessDraw {
    pub params: GammaProcessParams,
    pub rounds: u32,
    pub atoms: Vec<WeightedAtom>,
}

/// The three equivalent weight representations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StickVariant {
    /// Gamma(alpha+1, c) · Beta(1, alpha) · prod_{l=1..i} (1 - Beta(1, alpha)).
    RoundProduct,
    /// Exp(c) · exp(-Gamma(i, alpha)).
    Theorem,
    /// Exp(c) · prod_{l=1..i} Beta(alpha, 1).
    IbpProduct,
}

impl StickVariant {
    pub fn name(&self) -> &'static str {
        match self {
            StickVariant::RoundProduct => "round-product",
            StickVariant::Theorem => "theorem",
            StickVariant::IbpProduct => "ibp-product",
        }
    }
}

impl std::str::FromStr for StickVariant {
    type Err = NumericError;
    fn from_str(s: &str) -> Result<Self, NumericError> {
        match s {
            "round-product" => Ok(StickVariant::RoundProduct),
            "theorem" => Ok(StickVariant::Theorem),
            "ibp-product" => Ok(StickVariant::IbpProduct),
            other => Err(NumericError::Domain(format!(
                "unknown stick variant '{other}'"
            ))),
        }
    }
}

/// Sample one atom weight for the given round.
///
/// The stick products are accumulated in log space; Beta(1, alpha) and
/// Beta(alpha, 1) factors are drawn by inversion so their logarithms are
/// exact even deep into the rounds.
pub fn sample_weight(
    params: &GammaProcessParams,
    round: u32,
    variant: StickVariant,
    rng: &mut SeededRng,
) -> f64 {
    let alpha = params.alpha;
    let w = match variant {
        StickVariant::Theorem => {
            let e = dist::exponential(rng, params.c).expect("validated params");
            let t = dist::gamma_unchecked(rng, round as f64, alpha);
            (e.ln() - t).exp()
        }
        StickVariant::IbpProduct => {
            let e = dist::exponential(rng, params.c).expect("validated params");
            // Beta(alpha, 1) by inversion: U = W^{1/alpha}, so ln U = ln W / alpha.
            let mut log_prod = 0.0;
            for _ in 0..round {
                log_prod += rng.next_f64_open().ln() / alpha;
            }
            (e.ln() + log_prod).exp()
        }
        StickVariant::RoundProduct => {
            let g = dist::gamma_unchecked(rng, alpha + 1.0, params.c);
            // Beta(1, alpha) by inversion: V = 1 - W^{1/alpha}.
            let stick = 1.0 - rng.next_f64_open().powf(1.0 / alpha);
            let mut log_keep = 0.0;
            for _ in 0..round {
                // ln(1 - V_l) for a fresh Beta(1, alpha) copy.
                log_keep += rng.next_f64_open().ln() / alpha;
            }
            (g.ln() + stick.ln() + log_keep).exp()
        }
    };
    // Weights are almost surely positive; guard the astronomically deep
    // rounds where the product underflows.
    if w > 0.0 {
        w
    } else {
        f64::MIN_POSITIVE
    }
}

/// Draw a gamma process truncated after `rounds` rounds.
///
/// Each round uses its own labeled sub-stream, so the merged output
/// (ordered by round, then index) does not depend on generation order.
pub fn draw_stick(
    params: &GammaProcessParams,
    rounds: u32,
    variant: StickVariant,
    rng: &mut SeededRng,
) -> Result<GammaProcessDraw, NumericError> {
    if rounds < 1 {
        return Err(NumericError::Domain("draw_stick needs rounds >= 1".into()));
    }
    let mut atoms = Vec::new();
    let mut next_id = 0u64;
    for round in 1..=rounds {
        let mut round_rng = rng.substream(round as u64);
        let count = dist::poisson(&mut round_rng, params.mass)?;
        for j in 1..=count {
            let weight = sample_weight(params, round, variant, &mut round_rng);
            atoms.push(WeightedAtom {
                round,
                index_in_round: j as u32,
                weight,
                atom_id: next_id,
            });
            next_id += 1;
        }
    }
    Ok(GammaProcessDraw {
        params: *params,
        rounds,
        atoms,
    })
}

/// Sum of all atom weights.
pub fn total_mass(draw: &GammaProcessDraw) -> f64 {
    draw.atoms.iter().map(|a| a.weight).sum()
}

/// Expected weight of a single round-`round` atom: `(1/c) * ratio^round`.
///
/// Computed by iterated multiplication so consecutive rounds are related by
/// exactly one multiplication with the decay ratio.
pub fn expected_round_weight(params: &GammaProcessParams, round: u32) -> Result<f64, NumericError> {
    if round < 1 {
        return Err(NumericError::Domain(
            "expected_round_weight needs round >= 1".into(),
        ));
    }
    let ratio = params.decay_ratio();
    let mut w = 1.0 / params.c;
    for _ in 0..round {
        w *= ratio;
    }
    Ok(w)
}

/// Expected total mass of the untruncated process: `mass * alpha / c`.
pub fn expected_total_mass(params: &GammaProcessParams) -> f64 {
    params.mass * params.alpha / params.c
}

/// Serialize a draw as `round index weight atom_id` lines after a comment
/// header carrying the parameters. Weights use the shortest decimal
/// representation that round-trips exactly.
pub fn write_draw<W: Write>(draw: &GammaProcessDraw, mut out: W) -> std::io::Result<()> {
    writeln!(
        out,
        "# gamma-process draw alpha={} c={} mass={} rounds={}",
        draw.params.alpha, draw.params.c, draw.params.mass, draw.rounds
    )?;
    for a in &draw.atoms {
        writeln!(
            out,
            "{} {} {} {}",
            a.round, a.index_in_round, a.weight, a.atom_id
        )?;
    }
    Ok(())
}

/// Parse the output of [`write_draw`].
pub fn read_draw<R: BufRead>(input: R) -> Result<GammaProcessDraw, NumericError> {
    let mut params: Option<GammaProcessParams> = None;
    let mut rounds = 0u32;
    let mut atoms = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line.map_err(|e| NumericError::Domain(format!("read error: {e}")))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let mut fields = std::collections::HashMap::new();
            for tok in rest.split_whitespace() {
                if let Some((k, v)) = tok.split_once('=') {
                    fields.insert(k.to_string(), v.to_string());
                }
            }
            // Other comment lines (run configuration headers) are skipped.
            if ["alpha", "c", "mass", "rounds"]
                .iter()
                .all(|k| fields.contains_key(*k))
            {
                let get = |k: &str| -> Result<f64, NumericError> {
                    fields[k]
                        .parse::<f64>()
                        .map_err(|e| NumericError::Domain(format!("draw header {k}: {e}")))
                };
                params = Some(GammaProcessParams::new(
                    get("alpha")?,
                    get("c")?,
                    get("mass")?,
                )?);
                rounds = get("rounds")? as u32;
            }
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 4 {
            return Err(NumericError::Domain(format!(
                "draw line {}: expected 4 fields, found {}",
                lineno + 1,
                parts.len()
            )));
        }
        let parse_err = |e: std::num::ParseIntError| {
            NumericError::Domain(format!("draw line {}: {e}", lineno + 1))
        };
        atoms.push(WeightedAtom {
            round: parts[0].parse().map_err(parse_err)?,
            index_in_round: parts[1].parse().map_err(parse_err)?,
            weight: parts[2]
                .parse()
                .map_err(|e| NumericError::Domain(format!("draw line {}: {e}", lineno + 1)))?,
            atom_id: parts[3].parse().map_err(parse_err)?,
        });
    }
    let params = params.ok_or_else(|| NumericError::Domain("draw file has no header".into()))?;
    Ok(GammaProcessDraw {
        params,
        rounds,
        atoms,
    })
}
