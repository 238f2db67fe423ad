//! Line-oriented `key=value` state dumps.
//!
//! A dump is a sequence of `key=value` lines grouped into blank-separated
//! blocks per variable block. Vector values are space-separated; indexed
//! families use dotted keys (`loading.3=...`). Floats use the shortest
//! decimal representation that round-trips exactly.
//!
//! Three kinds are written: `vi` (a full variational state), `chain` (a
//! sampler state), and `truth` (generating loadings and counts). All three
//! can be evaluated against a test corpus.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use super::CliError;
use crate::mcmc::ChainState;
use crate::model::{FactorCounts, FactorLoadings};
use crate::vi::VariationalState;

/// A state restored from a dump file.
#[derive(Debug, Clone)]
pub enum SavedState {
    Vi(VariationalState),
    Chain(ChainState),
    Truth {
        loadings: Vec<Vec<f64>>,
        counts: Vec<Vec<f64>>,
    },
}

impl SavedState {
    /// Loadings and counts for metric evaluation: expectations for a
    /// variational state, current values for a chain, generating values
    /// for a truth dump.
    pub fn eval_pair(&self) -> Result<(FactorLoadings, FactorCounts), CliError> {
        let (columns, counts) = match self {
            SavedState::Vi(state) => (state.expected_loadings(), state.count_mean.clone()),
            SavedState::Chain(state) => (
                state.loadings.clone(),
                state
                    .z
                    .iter()
                    .map(|row| row.iter().map(|&z| z as f64).collect())
                    .collect(),
            ),
            SavedState::Truth { loadings, counts } => (loadings.clone(), counts.clone()),
        };
        let vocab = columns.first().map_or(0, |c| c.len());
        let n_docs = counts.first().map_or(0, |r| r.len());
        let loadings = FactorLoadings::new(vocab, columns).map_err(|e| CliError::Parse {
            line: 0,
            message: e.to_string(),
        })?;
        let counts = FactorCounts::new(n_docs, counts).map_err(|e| CliError::Parse {
            line: 0,
            message: e.to_string(),
        })?;
        Ok((loadings, counts))
    }
}

fn write_vec<W: Write>(out: &mut W, key: &str, values: &[f64]) -> std::io::Result<()> {
    let joined: Vec<String> = values.iter().map(|v| format!("{v}")).collect();
    writeln!(out, "{key}={}", joined.join(" "))
}

fn write_vec_u32<W: Write>(out: &mut W, key: &str, values: &[u32]) -> std::io::Result<()> {
    let joined: Vec<String> = values.iter().map(|v| format!("{v}")).collect();
    writeln!(out, "{key}={}", joined.join(" "))
}

/// Write a variational state dump.
pub fn write_vi_state<W: Write>(
    state: &VariationalState,
    mut out: W,
    comment: Option<&str>,
) -> std::io::Result<()> {
    if let Some(c) = comment {
        for line in c.lines() {
            writeln!(out, "# {line}")?;
        }
    }
    writeln!(out, "kind=vi")?;
    writeln!(out, "n_atoms={}", state.n_atoms())?;
    writeln!(out, "vocab_size={}", state.vocab_size())?;
    writeln!(out, "n_docs={}", state.n_docs())?;
    writeln!(out, "max_rounds={}", state.max_rounds())?;
    writeln!(out)?;
    write_vec(&mut out, "weight_shape", &state.weight_shape)?;
    write_vec(&mut out, "weight_rate", &state.weight_rate)?;
    write_vec(&mut out, "decay_shape", &state.decay_shape)?;
    write_vec(&mut out, "decay_rate", &state.decay_rate)?;
    writeln!(out)?;
    write_vec(
        &mut out,
        "alpha_params",
        &[state.alpha_params.0, state.alpha_params.1],
    )?;
    write_vec(
        &mut out,
        "gamma_params",
        &[state.gamma_params.0, state.gamma_params.1],
    )?;
    write_vec(&mut out, "c_params", &[state.c_params.0, state.c_params.1])?;
    writeln!(out)?;
    for (k, probs) in state.round_probs.iter().enumerate() {
        write_vec(&mut out, &format!("round_probs.{k}"), probs)?;
    }
    writeln!(out)?;
    for (k, row) in state.count_mean.iter().enumerate() {
        write_vec(&mut out, &format!("count_mean.{k}"), row)?;
    }
    writeln!(out)?;
    for (k, col) in state.loading.iter().enumerate() {
        write_vec(&mut out, &format!("loading.{k}"), col)?;
    }
    Ok(())
}

/// Write a chain state dump.
pub fn write_chain_state<W: Write>(
    state: &ChainState,
    mut out: W,
    comment: Option<&str>,
) -> std::io::Result<()> {
    if let Some(c) = comment {
        for line in c.lines() {
            writeln!(out, "# {line}")?;
        }
    }
    writeln!(out, "kind=chain")?;
    writeln!(out, "n_atoms={}", state.n_atoms())?;
    writeln!(
        out,
        "vocab_size={}",
        state.loadings.first().map_or(0, |c| c.len())
    )?;
    writeln!(out, "n_docs={}", state.z.first().map_or(0, |r| r.len()))?;
    writeln!(out)?;
    writeln!(out, "alpha={}", state.alpha)?;
    writeln!(out, "c={}", state.c)?;
    writeln!(out, "gamma={}", state.gamma_mass)?;
    write_vec_u32(&mut out, "rounds", &state.rounds)?;
    writeln!(out)?;
    for (k, row) in state.z.iter().enumerate() {
        write_vec_u32(&mut out, &format!("counts.{k}"), row)?;
    }
    writeln!(out)?;
    for (k, col) in state.loadings.iter().enumerate() {
        write_vec(&mut out, &format!("loading.{k}"), col)?;
    }
    Ok(())
}

/// Write a ground-truth dump (generating loadings and counts).
pub fn write_truth_state<W: Write>(
    loadings: &FactorLoadings,
    counts: &FactorCounts,
    mut out: W,
    comment: Option<&str>,
) -> std::io::Result<()> {
    if let Some(c) = comment {
        for line in c.lines() {
            writeln!(out, "# {line}")?;
        }
    }
    writeln!(out, "kind=truth")?;
    writeln!(out, "n_atoms={}", loadings.n_factors())?;
    writeln!(out, "vocab_size={}", loadings.vocab_size)?;
    writeln!(out, "n_docs={}", counts.n_docs)?;
    writeln!(out)?;
    for (k, row) in counts.values.iter().enumerate() {
        write_vec(&mut out, &format!("counts.{k}"), row)?;
    }
    writeln!(out)?;
    for (k, col) in loadings.columns.iter().enumerate() {
        write_vec(&mut out, &format!("loading.{k}"), col)?;
    }
    Ok(())
}

struct Fields {
    map: HashMap<String, (usize, String)>,
}

impl Fields {
    fn scalar<T: std::str::FromStr>(&self, key: &str) -> Result<T, CliError> {
        let (line, value) = self.map.get(key).ok_or_else(|| CliError::Parse {
            line: 0,
            message: format!("missing key '{key}'"),
        })?;
        value.trim().parse().map_err(|_| CliError::Parse {
            line: *line,
            message: format!("bad value for '{key}': '{value}'"),
        })
    }

    fn vector<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>, CliError> {
        let (line, value) = self.map.get(key).ok_or_else(|| CliError::Parse {
            line: 0,
            message: format!("missing key '{key}'"),
        })?;
        value
            .split_whitespace()
            .map(|tok| {
                tok.parse().map_err(|_| CliError::Parse {
                    line: *line,
                    message: format!("bad element '{tok}' in '{key}'"),
                })
            })
            .collect()
    }

    fn indexed<T: std::str::FromStr>(
        &self,
        prefix: &str,
        n: usize,
    ) -> Result<Vec<Vec<T>>, CliError> {
        (0..n)
            .map(|k| self.vector(&format!("{prefix}.{k}")))
            .collect()
    }
}

/// Read any state dump.
pub fn read_state<R: BufRead>(input: R) -> Result<SavedState, CliError> {
    let mut map = HashMap::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line.map_err(CliError::Io)?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| CliError::Parse {
            line: idx + 1,
            message: format!("expected key=value, found '{line}'"),
        })?;
        map.insert(key.trim().to_string(), (idx + 1, value.to_string()));
    }
    let fields = Fields { map };
    let kind: String = fields.scalar("kind")?;
    let n_atoms: usize = fields.scalar("n_atoms")?;
    match kind.as_str() {
        "vi" => {
            let state = VariationalState {
                weight_shape: fields.vector("weight_shape")?,
                weight_rate: fields.vector("weight_rate")?,
                decay_shape: fields.vector("decay_shape")?,
                decay_rate: fields.vector("decay_rate")?,
                round_probs: fields.indexed("round_probs", n_atoms)?,
                alpha_params: pair(&fields, "alpha_params")?,
                gamma_params: pair(&fields, "gamma_params")?,
                c_params: pair(&fields, "c_params")?,
                count_mean: fields.indexed("count_mean", n_atoms)?,
                loading: fields.indexed("loading", n_atoms)?,
            };
            Ok(SavedState::Vi(state))
        }
        "chain" => Ok(SavedState::Chain(ChainState {
            z: fields.indexed("counts", n_atoms)?,
            loadings: fields.indexed("loading", n_atoms)?,
            rounds: fields.vector("rounds")?,
            alpha: fields.scalar("alpha")?,
            c: fields.scalar("c")?,
            gamma_mass: fields.scalar("gamma")?,
        })),
        "truth" => Ok(SavedState::Truth {
            loadings: fields.indexed("loading", n_atoms)?,
            counts: fields.indexed("counts", n_atoms)?,
        }),
        other => Err(CliError::Parse {
            line: 0,
            message: format!("unknown state kind '{other}'"),
        }),
    }
}

fn pair(fields: &Fields, key: &str) -> Result<(f64, f64), CliError> {
    let v: Vec<f64> = fields.vector(key)?;
    if v.len() != 2 {
        return Err(CliError::Parse {
            line: 0,
            message: format!("'{key}' must hold two values"),
        });
    }
    Ok((v[0], v[1]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crm::GammaProcessParams;
    use crate::model::{generate_synthetic, Hyperpriors};
    use crate::numeric::SeededRng;
    use crate::vi::{DataAggregates, ViConfig};
    use std::io::Cursor;

    #[test]
    fn vi_state_round_trips_exactly() {
        let params = GammaProcessParams::new(1.0, 1.0, 3.0).unwrap();
        let hyper = Hyperpriors::symmetric(7, 0.9).unwrap();
        let rng = SeededRng::new(2);
        let (corpus, _) = generate_synthetic(&params, &hyper, 7, 9, 3, &rng).unwrap();
        let data = DataAggregates::new(&corpus);
        let state = VariationalState::init(&data, &hyper, &ViConfig::new(3, 4));
        let mut buf = Vec::new();
        write_vi_state(&state, &mut buf, Some("seed=2")).unwrap();
        match read_state(Cursor::new(buf)).unwrap() {
            SavedState::Vi(back) => assert_eq!(back, state),
            other => panic!("wrong kind: {other:?}"),
        }
    }

    #[test]
    fn chain_state_round_trips_exactly() {
        let params = GammaProcessParams::new(1.2, 0.8, 2.0).unwrap();
        let hyper = Hyperpriors::symmetric(5, 1.0).unwrap();
        let rng = SeededRng::new(3);
        let (corpus, _) = generate_synthetic(&params, &hyper, 5, 6, 3, &rng).unwrap();
        let state = crate::mcmc::ChainState::init(&corpus, &hyper, 4, &params, &rng).unwrap();
        let mut buf = Vec::new();
        write_chain_state(&state, &mut buf, None).unwrap();
        match read_state(Cursor::new(buf)).unwrap() {
            SavedState::Chain(back) => assert_eq!(back, state),
            other => panic!("wrong kind: {other:?}"),
        }
    }

    #[test]
    fn truth_state_evaluates() {
        let params = GammaProcessParams::new(1.0, 1.0, 4.0).unwrap();
        let hyper = Hyperpriors::symmetric(6, 1.0).unwrap();
        let rng = SeededRng::new(4);
        let (corpus, truth) = generate_synthetic(&params, &hyper, 6, 8, 4, &rng).unwrap();
        let mut buf = Vec::new();
        write_truth_state(&truth.loadings, &truth.counts, &mut buf, None).unwrap();
        let saved = read_state(Cursor::new(buf)).unwrap();
        let (loadings, counts) = saved.eval_pair().unwrap();
        let direct =
            crate::model::heldout_per_word_loglik(&corpus, &truth.loadings, &truth.counts).unwrap();
        let via_dump = crate::model::heldout_per_word_loglik(&corpus, &loadings, &counts).unwrap();
        assert_eq!(direct, via_dump);
    }
}
