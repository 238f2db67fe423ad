//! Command-line surface.
//!
//! Subcommands: `generate` (synthetic corpus), `bound` (truncation bound /
//! minimum rounds), `fit-vi`, `fit-mcmc`, `eval`, and `validate`. Every
//! output file starts with a `#` comment header recording the resolved
//! configuration and seed. Exit codes: 0 success, 1 validation or runtime
//! failure, 2 usage or input-parse errors.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::{bow, state_dump, trace, validate, CliError};
use crate::crm::GammaProcessParams;
use crate::mcmc::{self, ChainState, McConfig};
use crate::model::{
    generate_synthetic, heldout_per_word_loglik, train_test_split, Corpus, Hyperpriors,
};
use crate::numeric::SeededRng;
use crate::truncation::{self, TruncationQuery};
use crate::vi::{self, CountUpdate, ViConfig};

#[derive(Parser)]
#[command(
    name = "sbgp",
    about = "Stick-breaking gamma process construction and Gamma-Poisson factorization",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with its ground truth.
    Generate(GenerateArgs),
    /// Evaluate the truncation bound or invert it for a round count.
    Bound(BoundArgs),
    /// Fit the variational approximation and write trace and state.
    FitVi(FitViArgs),
    /// Run the Gibbs sampler and write trace and final state.
    FitMcmc(FitMcmcArgs),
    /// Held-out metric of a saved state against a test corpus.
    Eval(EvalArgs),
    /// Run the statistical validation suite.
    Validate(ValidateArgs),
}

#[derive(Args, Clone)]
struct ProcessArgs {
    /// Stick-breaking concentration.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Rate concentration.
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    /// Expected atoms per round.
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
}

impl ProcessArgs {
    fn params(&self) -> Result<GammaProcessParams, CliError> {
        GammaProcessParams::new(self.alpha, self.c, self.gamma)
            .map_err(|e| CliError::Usage(e.to_string()))
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    process: ProcessArgs,
    /// Vocabulary size.
    #[arg(long, default_value_t = 50)]
    vocab: usize,
    /// Number of documents.
    #[arg(long, default_value_t = 300)]
    docs: usize,
    /// Rounds to truncate the generating draw at.
    #[arg(long, default_value_t = 8)]
    rounds: u32,
    /// Symmetric Dirichlet parameter for the loading columns.
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output prefix; writes PREFIX.bow, PREFIX.truth and PREFIX.atoms.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BoundArgs {
    #[command(flatten)]
    process: ProcessArgs,
    /// Number of observations.
    #[arg(long, default_value_t = 1)]
    n: u64,
    /// Print the bound at this round count.
    #[arg(long)]
    rounds: Option<u32>,
    /// Print the smallest round count whose bound is at most this.
    #[arg(long)]
    epsilon: Option<f64>,
}

#[derive(Args, Clone)]
struct SplitArgs {
    /// Training corpus in UCI bag-of-words format.
    #[arg(long)]
    train: PathBuf,
    /// Optional held-out corpus; otherwise the training file is split.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Token-level training fraction used when no test file is given.
    #[arg(long, default_value_t = 0.8)]
    train_frac: f64,
}

impl SplitArgs {
    fn load(&self, seed: u64) -> Result<(Corpus, Corpus), CliError> {
        let train = read_corpus(&self.train)?;
        match &self.test {
            Some(path) => Ok((train, read_corpus(path)?)),
            None => {
                let rng = SeededRng::new(seed).substream(0x5011);
                train_test_split(&train, self.train_frac, &rng)
                    .map_err(|e| CliError::Usage(e.to_string()))
            }
        }
    }
}

#[derive(Args)]
struct FitViArgs {
    #[command(flatten)]
    process: ProcessArgs,
    #[command(flatten)]
    split: SplitArgs,
    /// Truncation level (number of atoms).
    #[arg(long = "K", default_value_t = 30)]
    k: usize,
    /// Round-indicator support size.
    #[arg(long, default_value_t = 12)]
    rounds: u32,
    /// Symmetric Dirichlet parameter.
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long, default_value_t = 100)]
    iters: u32,
    #[arg(long, default_value_t = 1e-4)]
    learning_rate: f64,
    #[arg(long, default_value_t = 5)]
    grad_steps: u32,
    #[arg(long, default_value_t = 1.0)]
    zeta: f64,
    /// Held-out convergence tolerance.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Count update rule: literal or multiplicative.
    #[arg(long, default_value = "literal")]
    count_update: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output prefix; writes PREFIX.trace.csv and PREFIX.state.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitMcmcArgs {
    #[command(flatten)]
    process: ProcessArgs,
    #[command(flatten)]
    split: SplitArgs,
    /// Initial number of atoms.
    #[arg(long = "K", default_value_t = 20)]
    k: usize,
    /// Symmetric Dirichlet parameter.
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    /// Post-burn-in iterations.
    #[arg(long, default_value_t = 30)]
    iters: u32,
    #[arg(long, default_value_t = 50)]
    burn_in: u32,
    /// Monte Carlo samples per marginalization.
    #[arg(long, default_value_t = 1000)]
    mc_samples: usize,
    /// Grid step for the concentration updates.
    #[arg(long, default_value_t = 0.05)]
    grid_step: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output prefix; writes PREFIX.trace.csv and PREFIX.state.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Saved state dump (vi, chain, or truth).
    #[arg(long)]
    state: PathBuf,
    /// Test corpus in UCI bag-of-words format.
    #[arg(long)]
    test: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    /// Reduced replication counts.
    #[arg(long)]
    quick: bool,
    /// Optional real corpus for the ordering comparison.
    #[arg(long)]
    psyrev: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn read_corpus(path: &Path) -> Result<Corpus, CliError> {
    let file = File::open(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    bow::parse_uci_bow(BufReader::new(file))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path)?))
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut name = prefix.as_os_str().to_os_string();
    name.push(suffix);
    PathBuf::from(name)
}

/// Parse arguments, run, and map every outcome to an exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Generate(args) => generate(args),
        Command::Bound(args) => bound(args),
        Command::FitVi(args) => fit_vi(args),
        Command::FitMcmc(args) => fit_mcmc(args),
        Command::Eval(args) => eval(args),
        Command::Validate(args) => run_validate(args),
    }
}

fn generate(args: GenerateArgs) -> Result<i32, CliError> {
    let params = args.process.params()?;
    let hyper = Hyperpriors::symmetric(args.vocab, args.beta)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let rng = SeededRng::new(args.seed);
    let (corpus, truth) =
        generate_synthetic(&params, &hyper, args.vocab, args.docs, args.rounds, &rng)
            .map_err(|e| CliError::Usage(e.to_string()))?;
    let header = format!(
        "sbgp generate seed={} alpha={} c={} gamma={} vocab={} docs={} rounds={} beta={}",
        args.seed,
        params.alpha,
        params.c,
        params.mass,
        args.vocab,
        args.docs,
        args.rounds,
        args.beta
    );
    bow::write_uci_bow(
        &corpus,
        create(&with_suffix(&args.out, ".bow"))?,
        Some(&header),
    )?;
    state_dump::write_truth_state(
        &truth.loadings,
        &truth.counts,
        create(&with_suffix(&args.out, ".truth"))?,
        Some(&header),
    )?;
    let mut atoms_out = create(&with_suffix(&args.out, ".atoms"))?;
    writeln!(atoms_out, "# {header}")?;
    crate::crm::write_draw(&truth.draw, atoms_out)?;
    println!(
        "wrote {} atoms, {} nonzero cells, {} tokens to {}.{{bow,truth,atoms}}",
        truth.draw.atoms.len(),
        corpus.entries().len(),
        corpus.total_tokens(),
        args.out.display()
    );
    Ok(0)
}

fn bound(args: BoundArgs) -> Result<i32, CliError> {
    let params = args.process.params()?;
    match (args.rounds, args.epsilon) {
        (Some(rounds), None) => {
            let q = TruncationQuery {
                n_samples: args.n,
                params,
                rounds,
            };
            println!("{}", truncation::marginal_truncation_bound(&q));
            Ok(0)
        }
        (None, Some(epsilon)) => {
            let r = truncation::min_rounds_for_error(args.n, &params, epsilon)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            println!("{r}");
            Ok(0)
        }
        _ => Err(CliError::Usage(
            "pass exactly one of --rounds or --epsilon".into(),
        )),
    }
}

fn parse_count_update(s: &str) -> Result<CountUpdate, CliError> {
    match s {
        "literal" => Ok(CountUpdate::Literal),
        "multiplicative" => Ok(CountUpdate::Multiplicative),
        other => Err(CliError::Usage(format!(
            "unknown count update '{other}' (expected literal or multiplicative)"
        ))),
    }
}

fn fit_vi(args: FitViArgs) -> Result<i32, CliError> {
    let params = args.process.params()?;
    let (train, test) = args.split.load(args.seed)?;
    let hyper = Hyperpriors::symmetric(train.vocab_size(), args.beta)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let config = ViConfig {
        truncation_atoms: args.k,
        max_rounds: args.rounds as usize,
        learning_rate: args.learning_rate,
        grad_steps: args.grad_steps,
        zeta: args.zeta,
        max_iters: args.iters,
        convergence_tol: args.tol,
        count_update: parse_count_update(&args.count_update)?,
        seed: args.seed,
    };
    let (state, fit_trace) = vi::fit(&train, &test, &params, &hyper, &config)?;
    let header = format!(
        "sbgp fit-vi seed={} alpha={} c={} gamma={} K={} rounds={} beta={} iters={} learning_rate={} grad_steps={} zeta={} tol={} count_update={} train={} train_frac={}",
        args.seed, params.alpha, params.c, params.mass, args.k, args.rounds, args.beta, args.iters,
        args.learning_rate, args.grad_steps, args.zeta, args.tol, args.count_update,
        args.split.train.display(), args.split.train_frac
    );
    trace::write_trace(
        &fit_trace,
        create(&with_suffix(&args.out, ".trace.csv"))?,
        Some(&header),
    )?;
    state_dump::write_vi_state(
        &state,
        create(&with_suffix(&args.out, ".state"))?,
        Some(&header),
    )?;
    let last = fit_trace.rows.last().expect("trace has the initial row");
    println!(
        "fit-vi: {} iterations, final heldout {:.6}, objective {:.4}",
        fit_trace.rows.len() - 1,
        last.heldout,
        last.elbo.unwrap_or(f64::NAN)
    );
    Ok(0)
}

fn fit_mcmc(args: FitMcmcArgs) -> Result<i32, CliError> {
    let params = args.process.params()?;
    let (train, test) = args.split.load(args.seed)?;
    let hyper = Hyperpriors::symmetric(train.vocab_size(), args.beta)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let config = McConfig {
        mc_samples: args.mc_samples,
        grid_step_alpha: args.grid_step,
        grid_step_c: args.grid_step,
        burn_in: args.burn_in,
        n_iters: args.iters,
        seed: args.seed,
        ..Default::default()
    };
    let init = ChainState::init(&train, &hyper, args.k, &params, &SeededRng::new(args.seed))?;
    let (states, chain_trace) = mcmc::run_chain(&train, &test, init, &hyper, &config)?;
    let header = format!(
        "sbgp fit-mcmc seed={} alpha={} c={} gamma={} K={} beta={} iters={} burn_in={} mc_samples={} grid_step={} train={} train_frac={}",
        args.seed, params.alpha, params.c, params.mass, args.k, args.beta, args.iters,
        args.burn_in, args.mc_samples, args.grid_step, args.split.train.display(), args.split.train_frac
    );
    trace::write_trace(
        &chain_trace,
        create(&with_suffix(&args.out, ".trace.csv"))?,
        Some(&header),
    )?;
    if let Some(last) = states.last() {
        state_dump::write_chain_state(
            last,
            create(&with_suffix(&args.out, ".state"))?,
            Some(&header),
        )?;
    }
    let mean = if chain_trace.rows.is_empty() {
        f64::NAN
    } else {
        chain_trace.rows.iter().map(|r| r.heldout).sum::<f64>() / chain_trace.rows.len() as f64
    };
    println!(
        "fit-mcmc: {} kept sweeps, mean heldout {:.6}, final atoms {}",
        chain_trace.rows.len(),
        mean,
        states.last().map_or(0, |s| s.n_atoms())
    );
    Ok(0)
}

fn eval(args: EvalArgs) -> Result<i32, CliError> {
    let file = File::open(&args.state)
        .map_err(|e| CliError::Usage(format!("{}: {e}", args.state.display())))?;
    let saved = state_dump::read_state(BufReader::new(file))?;
    let test = read_corpus(&args.test)?;
    let (loadings, counts) = saved.eval_pair()?;
    let metric = heldout_per_word_loglik(&test, &loadings, &counts)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    println!("{metric}");
    Ok(0)
}

fn run_validate(args: ValidateArgs) -> Result<i32, CliError> {
    let opts = validate::ValidateOptions {
        quick: args.quick,
        psyrev: args.psyrev,
        seed: args.seed,
    };
    let results = validate::run_all(&opts);
    let mut out = std::io::stdout().lock();
    let mut failed = 0;
    for r in &results {
        writeln!(out, "{}", r.line())?;
        if !r.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        Err(CliError::ValidationFailed {
            failed,
            total: results.len(),
        })
    } else {
        writeln!(out, "all {} checks passed", results.len())?;
        Ok(0)
    }
}
