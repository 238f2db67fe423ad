//! The infinite Gamma-Poisson factor model at the data level: sparse count
//! corpora, synthetic generation, token-level train/test splits, and the
//! held-out per-word log-likelihood.

use crate::crm::{self, GammaProcessDraw, GammaProcessParams, StickVariant};
use crate::numeric::{dist, NumericError, SeededRng};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid corpus: {0}")]
    InvalidCorpus(String),
    #[error("evaluation error: {0}")]
    Eval(String),
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

/// One nonzero cell of a count matrix. Indices are 0-based internally;
/// the UCI file format converts to and from 1-based ids at the boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CountEntry {
    pub word: usize,
    pub doc: usize,
    pub count: u32,
}

/// Sparse vocabulary-by-document count matrix. Zeros are implicit; entries
/// are kept sorted by (doc, word) and are unique per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    vocab_size: usize,
    n_docs: usize,
    entries: Vec<CountEntry>,
}

impl Corpus {
    pub fn new(
        vocab_size: usize,
        n_docs: usize,
        mut entries: Vec<CountEntry>,
    ) -> Result<Self, ModelError> {
        if vocab_size == 0 || n_docs == 0 {
            return Err(ModelError::InvalidCorpus(
                "vocab_size and n_docs must be positive".into(),
            ));
        }
        for e in &entries {
            if e.word >= vocab_size || e.doc >= n_docs {
                return Err(ModelError::InvalidCorpus(format!(
                    "entry (word {}, doc {}) outside {}x{}",
                    e.word, e.doc, vocab_size, n_docs
                )));
            }
            if e.count == 0 {
                return Err(ModelError::InvalidCorpus(format!(
                    "entry (word {}, doc {}) has zero count; zeros are implicit",
                    e.word, e.doc
                )));
            }
        }
        entries.sort_unstable_by_key(|e| (e.doc, e.word));
        for pair in entries.windows(2) {
            if pair[0].doc == pair[1].doc && pair[0].word == pair[1].word {
                return Err(ModelError::InvalidCorpus(format!(
                    "duplicate entry for (word {}, doc {})",
                    pair[0].word, pair[0].doc
                )));
            }
        }
        Ok(Corpus {
            vocab_size,
            n_docs,
            entries,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn entries(&self) -> &[CountEntry] {
        &self.entries
    }

    pub fn total_tokens(&self) -> u64 {
        self.entries.iter().map(|e| e.count as u64).sum()
    }

    pub fn doc_totals(&self) -> Vec<u64> {
        let mut totals = vec![0u64; self.n_docs];
        for e in &self.entries {
            totals[e.doc] += e.count as u64;
        }
        totals
    }

    pub fn word_totals(&self) -> Vec<u64> {
        let mut totals = vec![0u64; self.vocab_size];
        for e in &self.entries {
            totals[e.word] += e.count as u64;
        }
        totals
    }

    /// Nonzero (word, count) pairs per document.
    pub fn doc_entries(&self) -> Vec<Vec<(usize, u32)>> {
        let mut by_doc = vec![Vec::new(); self.n_docs];
        for e in &self.entries {
            by_doc[e.doc].push((e.word, e.count));
        }
        by_doc
    }
}

/// Column-stochastic factor loadings: `columns[k][v]`, each column a
/// probability vector over the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorLoadings {
    pub vocab_size: usize,
    pub columns: Vec<Vec<f64>>,
}

impl FactorLoadings {
    pub fn new(vocab_size: usize, columns: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        for (k, col) in columns.iter().enumerate() {
            if col.len() != vocab_size {
                return Err(ModelError::Dimension(format!(
                    "loading column {k} has length {}, expected {vocab_size}",
                    col.len()
                )));
            }
            if col.iter().any(|&p| p < 0.0 || p.is_nan()) {
                return Err(ModelError::Dimension(format!(
                    "loading column {k} has a negative entry"
                )));
            }
            let sum: f64 = col.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(ModelError::Dimension(format!(
                    "loading column {k} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(FactorLoadings {
            vocab_size,
            columns,
        })
    }

    pub fn n_factors(&self) -> usize {
        self.columns.len()
    }
}

/// Per-factor, per-document counts `values[k][n]`. Integer-valued when
/// holding sampled or generated counts, real-valued when holding
/// variational means.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorCounts {
    pub n_docs: usize,
    pub values: Vec<Vec<f64>>,
}

impl FactorCounts {
    pub fn new(n_docs: usize, values: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        for (k, row) in values.iter().enumerate() {
            if row.len() != n_docs {
                return Err(ModelError::Dimension(format!(
                    "factor count row {k} has length {}, expected {n_docs}",
                    row.len()
                )));
            }
            if row.iter().any(|&z| z < 0.0 || z.is_nan()) {
                return Err(ModelError::Dimension(format!(
                    "factor count row {k} has a negative entry"
                )));
            }
        }
        Ok(FactorCounts { n_docs, values })
    }

    pub fn n_factors(&self) -> usize {
        self.values.len()
    }

    pub fn total(&self) -> f64 {
        self.values.iter().map(|row| row.iter().sum::<f64>()).sum()
    }
}

/// Gamma hyperpriors on (alpha, gamma, c) and the Dirichlet parameters for
/// the loading columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperpriors {
    pub a1: f64,
    pub a2: f64,
    pub b1: f64,
    pub b2: f64,
    pub c1: f64,
    pub c2: f64,
    pub beta: Vec<f64>,
}

impl Hyperpriors {
    pub fn new(
        a1: f64,
        a2: f64,
        b1: f64,
        b2: f64,
        c1: f64,
        c2: f64,
        beta: Vec<f64>,
    ) -> Result<Self, ModelError> {
        for (name, v) in [
            ("a1", a1),
            ("a2", a2),
            ("b1", b1),
            ("b2", b2),
            ("c1", c1),
            ("c2", c2),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(ModelError::Dimension(format!(
                    "hyperprior {name} must be positive, got {v}"
                )));
            }
        }
        if beta.is_empty() || beta.iter().any(|&b| !b.is_finite() || b <= 0.0) {
            return Err(ModelError::Dimension(
                "Dirichlet parameters must be positive".into(),
            ));
        }
        Ok(Hyperpriors {
            a1,
            a2,
            b1,
            b2,
            c1,
            c2,
            beta,
        })
    }

    /// Unit-rate gamma hyperpriors with a symmetric Dirichlet(beta) prior.
    pub fn symmetric(vocab_size: usize, beta: f64) -> Result<Self, ModelError> {
        Hyperpriors::new(1.0, 1.0, 1.0, 1.0, 1.0, 1.0, vec![beta; vocab_size])
    }
}

/// Latent state a synthetic corpus was generated from.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub draw: GammaProcessDraw,
    pub loadings: FactorLoadings,
    pub counts: FactorCounts,
}

/// Generate a corpus from the model: a truncated draw supplies atom
/// weights, factor counts are Poisson in those weights, loading columns are
/// Dirichlet, and observed counts are Poisson in the loading-count product.
pub fn generate_synthetic(
    params: &GammaProcessParams,
    hyper: &Hyperpriors,
    vocab_size: usize,
    n_docs: usize,
    rounds: u32,
    rng: &SeededRng,
) -> Result<(Corpus, GroundTruth), ModelError> {
    if hyper.beta.len() != vocab_size {
        return Err(ModelError::Dimension(format!(
            "Dirichlet parameter vector has length {}, expected {vocab_size}",
            hyper.beta.len()
        )));
    }
    let mut draw_rng = rng.substream(0);
    let draw = crm::draw_stick(params, rounds, StickVariant::Theorem, &mut draw_rng)?;
    let n_factors = draw.atoms.len();

    let mut z_rng = rng.substream(1);
    let mut z = vec![vec![0.0; n_docs]; n_factors];
    for (k, atom) in draw.atoms.iter().enumerate() {
        for cell in z[k].iter_mut() {
            *cell = dist::poisson(&mut z_rng, atom.weight)? as f64;
        }
    }
    let counts = FactorCounts::new(n_docs, z)?;

    let mut phi_rng = rng.substream(2);
    let mut columns = Vec::with_capacity(n_factors);
    for _ in 0..n_factors {
        columns.push(dist::dirichlet(&mut phi_rng, &hyper.beta)?);
    }
    let loadings = FactorLoadings::new(vocab_size, columns)?;

    let mut data_rng = rng.substream(3);
    let mut entries = Vec::new();
    let mut rates = vec![0.0f64; vocab_size];
    for n in 0..n_docs {
        for r in rates.iter_mut() {
            *r = 0.0;
        }
        for k in 0..n_factors {
            let zkn = counts.values[k][n];
            if zkn > 0.0 {
                for (v, r) in rates.iter_mut().enumerate() {
                    *r += loadings.columns[k][v] * zkn;
                }
            }
        }
        for (v, &rate) in rates.iter().enumerate() {
            if rate > 0.0 {
                let d = dist::poisson(&mut data_rng, rate)?;
                if d > 0 {
                    entries.push(CountEntry {
                        word: v,
                        doc: n,
                        count: d as u32,
                    });
                }
            }
        }
    }
    let corpus = Corpus::new(vocab_size, n_docs, entries)?;
    Ok((
        corpus,
        GroundTruth {
            draw,
            loadings,
            counts,
        },
    ))
}

/// Split every word token independently into train (probability
/// `train_fraction`) or test. Per-cell counts split additively, so
/// train + test reproduce the input exactly.
pub fn train_test_split(
    corpus: &Corpus,
    train_fraction: f64,
    rng: &SeededRng,
) -> Result<(Corpus, Corpus), ModelError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(ModelError::Dimension(format!(
            "train_fraction must be in (0,1), got {train_fraction}"
        )));
    }
    let mut split_rng = rng.substream(0x5eed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for e in corpus.entries() {
        let mut to_train = 0u32;
        for _ in 0..e.count {
            if split_rng.next_f64() < train_fraction {
                to_train += 1;
            }
        }
        if to_train > 0 {
            train.push(CountEntry {
                count: to_train,
                ..*e
            });
        }
        if to_train < e.count {
            test.push(CountEntry {
                count: e.count - to_train,
                ..*e
            });
        }
    }
    Ok((
        Corpus::new(corpus.vocab_size(), corpus.n_docs(), train)?,
        Corpus::new(corpus.vocab_size(), corpus.n_docs(), test)?,
    ))
}

/// Drop test entries in documents that carry no training tokens.
///
/// Per-word evaluation needs test mass in documents the model has seen;
/// a document absent from training has no inferable factor counts, and
/// integer-valued states assign its cells probability zero.
pub fn restrict_test_to_train_docs(test: &Corpus, train: &Corpus) -> Result<Corpus, ModelError> {
    let totals = train.doc_totals();
    let entries: Vec<CountEntry> = test
        .entries()
        .iter()
        .filter(|e| totals[e.doc] > 0)
        .copied()
        .collect();
    Corpus::new(test.vocab_size(), test.n_docs(), entries)
}

/// Held-out per-word log-likelihood.
///
/// Model rates are normalized into a probability distribution over all
/// cells; the metric is the average log-probability of the held-out tokens.
/// Normalizing by the total factor count (the loading columns each sum to
/// one) makes the result invariant to rescaling the counts.
pub fn heldout_per_word_loglik(
    test: &Corpus,
    loadings: &FactorLoadings,
    counts: &FactorCounts,
) -> Result<f64, ModelError> {
    if loadings.n_factors() != counts.n_factors() {
        return Err(ModelError::Dimension(format!(
            "loadings have {} factors, counts have {}",
            loadings.n_factors(),
            counts.n_factors()
        )));
    }
    if loadings.vocab_size != test.vocab_size() || counts.n_docs != test.n_docs() {
        return Err(ModelError::Dimension(
            "corpus and state dimensions differ".into(),
        ));
    }
    let test_tokens = test.total_tokens();
    if test_tokens == 0 {
        return Err(ModelError::Eval("no test tokens to score".into()));
    }
    let z_total = counts.total();
    if z_total <= 0.0 || z_total.is_nan() {
        return Err(ModelError::Eval("all-zero rate matrix".into()));
    }
    let mut loglik = 0.0;
    for e in test.entries() {
        let mut p = 0.0;
        for k in 0..counts.n_factors() {
            p += loadings.columns[k][e.word] * (counts.values[k][e.doc] / z_total);
        }
        loglik += e.count as f64 * p.ln();
    }
    Ok(loglik / test_tokens as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_params() -> GammaProcessParams {
        GammaProcessParams::new(1.0, 1.0, 5.0).unwrap()
    }

    #[test]
    fn corpus_validation() {
        let e = |w, d, c| CountEntry {
            word: w,
            doc: d,
            count: c,
        };
        assert!(Corpus::new(2, 2, vec![e(0, 0, 1), e(1, 1, 3)]).is_ok());
        assert!(Corpus::new(2, 2, vec![e(2, 0, 1)]).is_err());
        assert!(Corpus::new(2, 2, vec![e(0, 0, 0)]).is_err());
        assert!(Corpus::new(2, 2, vec![e(0, 0, 1), e(0, 0, 2)]).is_err());
    }

    #[test]
    fn empty_corpus_from_vanishing_mass() {
        let p = GammaProcessParams::new(1.0, 1.0, 1e-300).unwrap();
        let hyper = Hyperpriors::symmetric(4, 1.0).unwrap();
        let rng = SeededRng::new(3);
        let (corpus, truth) = generate_synthetic(&p, &hyper, 4, 5, 3, &rng).unwrap();
        assert!(corpus.entries().is_empty());
        assert_eq!(truth.draw.atoms.len(), 0);
        assert_eq!(truth.loadings.n_factors(), 0);
    }

    #[test]
    fn generated_totals_match_rates() {
        let hyper = Hyperpriors::symmetric(50, 0.5).unwrap();
        let rng = SeededRng::new(11);
        let (corpus, truth) = generate_synthetic(&toy_params(), &hyper, 50, 400, 8, &rng).unwrap();
        // Total observed tokens are Poisson with mean sum(Phi Z) = sum(Z)
        // up to the column sums, which are 1.
        let expected = truth.counts.total();
        let got = corpus.total_tokens() as f64;
        assert!(
            (got - expected).abs() < 4.0 * expected.sqrt(),
            "got {got}, expected {expected}"
        );
    }

    #[test]
    fn split_conserves_counts_exactly() {
        let hyper = Hyperpriors::symmetric(30, 1.0).unwrap();
        let rng = SeededRng::new(21);
        let (corpus, _) = generate_synthetic(&toy_params(), &hyper, 30, 200, 6, &rng).unwrap();
        let (train, test) = train_test_split(&corpus, 0.8, &rng).unwrap();
        let mut merged = std::collections::HashMap::new();
        for e in train.entries().iter().chain(test.entries()) {
            *merged.entry((e.word, e.doc)).or_insert(0u32) += e.count;
        }
        for e in corpus.entries() {
            assert_eq!(merged.remove(&(e.word, e.doc)), Some(e.count));
        }
        assert!(merged.is_empty());
    }

    #[test]
    fn split_is_seed_deterministic() {
        let hyper = Hyperpriors::symmetric(20, 1.0).unwrap();
        let rng = SeededRng::new(31);
        let (corpus, _) = generate_synthetic(&toy_params(), &hyper, 20, 100, 5, &rng).unwrap();
        let (tr1, te1) = train_test_split(&corpus, 0.8, &SeededRng::new(5)).unwrap();
        let (tr2, te2) = train_test_split(&corpus, 0.8, &SeededRng::new(5)).unwrap();
        assert_eq!(tr1, tr2);
        assert_eq!(te1, te2);
    }

    #[test]
    fn split_share_is_binomial() {
        // One big cell gives a clean binomial proportion check.
        let corpus = Corpus::new(
            1,
            1,
            vec![CountEntry {
                word: 0,
                doc: 0,
                count: 100_000,
            }],
        )
        .unwrap();
        let (train, _) = train_test_split(&corpus, 0.8, &SeededRng::new(17)).unwrap();
        let share = train.total_tokens() as f64 / 100_000.0;
        let se = (0.8f64 * 0.2 / 100_000.0).sqrt();
        assert!((share - 0.8).abs() < 4.0 * se, "share {share}");
    }

    #[test]
    fn split_extreme_fraction_empties_test() {
        let corpus = Corpus::new(
            1,
            1,
            vec![CountEntry {
                word: 0,
                doc: 0,
                count: 1000,
            }],
        )
        .unwrap();
        let (train, test) = train_test_split(&corpus, 1.0 - 1e-12, &SeededRng::new(1)).unwrap();
        assert_eq!(train.total_tokens(), 1000);
        assert_eq!(test.total_tokens(), 0);
    }

    #[test]
    fn metric_toy_example() {
        let loadings =
            FactorLoadings::new(2, vec![vec![2.0 / 3.0, 1.0 / 3.0], vec![0.5, 0.5]]).unwrap();
        let counts = FactorCounts::new(2, vec![vec![3.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let test = Corpus::new(
            2,
            2,
            vec![
                CountEntry {
                    word: 0,
                    doc: 0,
                    count: 1,
                },
                CountEntry {
                    word: 1,
                    doc: 1,
                    count: 1,
                },
            ],
        )
        .unwrap();
        let m = heldout_per_word_loglik(&test, &loadings, &counts).unwrap();
        assert!((m - (-1.2628643221541277)).abs() < 1e-9, "metric {m}");
    }

    #[test]
    fn metric_single_token_full_mass() {
        let loadings = FactorLoadings::new(1, vec![vec![1.0]]).unwrap();
        let counts = FactorCounts::new(2, vec![vec![1.0, 0.0]]).unwrap();
        let test = Corpus::new(
            1,
            2,
            vec![CountEntry {
                word: 0,
                doc: 0,
                count: 1,
            }],
        )
        .unwrap();
        assert_eq!(
            heldout_per_word_loglik(&test, &loadings, &counts).unwrap(),
            0.0
        );
    }

    #[test]
    fn metric_uniform_rates() {
        let (v, n) = (4, 5);
        let loadings = FactorLoadings::new(v, vec![vec![1.0 / v as f64; v]]).unwrap();
        let counts = FactorCounts::new(n, vec![vec![1.0; n]]).unwrap();
        let test = Corpus::new(
            v,
            n,
            vec![
                CountEntry {
                    word: 1,
                    doc: 2,
                    count: 3,
                },
                CountEntry {
                    word: 3,
                    doc: 0,
                    count: 1,
                },
            ],
        )
        .unwrap();
        let m = heldout_per_word_loglik(&test, &loadings, &counts).unwrap();
        assert!((m + (v as f64 * n as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn metric_all_zero_rates_is_error() {
        let loadings = FactorLoadings::new(1, vec![vec![1.0]]).unwrap();
        let counts = FactorCounts::new(1, vec![vec![0.0]]).unwrap();
        let test = Corpus::new(
            1,
            1,
            vec![CountEntry {
                word: 0,
                doc: 0,
                count: 1,
            }],
        )
        .unwrap();
        assert!(heldout_per_word_loglik(&test, &loadings, &counts).is_err());
    }

    #[test]
    fn metric_scale_invariance_is_exact_for_integer_counts() {
        let hyper = Hyperpriors::symmetric(25, 1.0).unwrap();
        let rng = SeededRng::new(41);
        let (corpus, truth) = generate_synthetic(&toy_params(), &hyper, 25, 80, 5, &rng).unwrap();
        let (_, test) = train_test_split(&corpus, 0.8, &rng).unwrap();
        if test.total_tokens() == 0 {
            panic!("test split unexpectedly empty");
        }
        let base = heldout_per_word_loglik(&test, &truth.loadings, &truth.counts).unwrap();
        for &s in &[0.5, 2.0, 10.0] {
            let scaled = FactorCounts::new(
                truth.counts.n_docs,
                truth
                    .counts
                    .values
                    .iter()
                    .map(|row| row.iter().map(|&z| z * s).collect())
                    .collect(),
            )
            .unwrap();
            let m = heldout_per_word_loglik(&test, &truth.loadings, &scaled).unwrap();
            assert_eq!(m, base, "scale {s} changed the metric");
        }
    }

    #[test]
    fn truth_beats_scrambled_truth() {
        let hyper = Hyperpriors::symmetric(30, 0.7).unwrap();
        for seed in 0..100u64 {
            let rng = SeededRng::new(60_000 + seed);
            let (corpus, truth) =
                generate_synthetic(&toy_params(), &hyper, 30, 60, 4, &rng).unwrap();
            let (_, test) = train_test_split(&corpus, 0.8, &rng).unwrap();
            if test.total_tokens() == 0 || truth.loadings.n_factors() < 2 {
                continue;
            }
            let k = truth.loadings.n_factors();
            // Rotate the loading columns so every factor is mispaired.
            let mut cols = truth.loadings.columns.clone();
            cols.rotate_left(1);
            let scrambled = FactorLoadings::new(30, cols).unwrap();
            let m_truth = heldout_per_word_loglik(&test, &truth.loadings, &truth.counts).unwrap();
            let m_scrambled = heldout_per_word_loglik(&test, &scrambled, &truth.counts).unwrap();
            assert!(
                m_truth >= m_scrambled - 1e-12,
                "seed {seed}: truth {m_truth} < scrambled {m_scrambled} (k={k})"
            );
        }
    }
}
