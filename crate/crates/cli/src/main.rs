mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use emm::corpus::{read_corpus, synthesize_corpus, write_corpus, BetaSupport, SynthConfig};
use emm::eval::{
    cross_validate, evaluate, summarize, tune_penalties, write_metrics, write_summary_csv, DEFAULT_PENALTY_GRID,
};
use emm::learning::train;
use emm::model::{read_checkpoint, write_checkpoint, Checkpoint, TrainConfig};
use emm::predict::{predict_captions, predict_regions};
use emm::Error;

/// Exponential-multinomial mixture classifier for multi-label,
/// multi-instance data.
#[derive(Parser)]
#[command(name = "emm", version)]
struct Cli {
    /// Worker threads for inference (default: all cores). Results do not
    /// depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a labeled corpus from the generative model.
    Synth(SynthArgs),
    /// Fit a model to a labeled corpus.
    Train(TrainArgs),
    /// Predict tags for examples or for their instances.
    Predict(PredictArgs),
    /// Top-k micro-F1 of caption predictions.
    Eval(EvalArgs),
    /// Summarize a checkpoint.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    tags: usize,
    #[arg(long)]
    features: usize,
    #[arg(long)]
    examples: usize,
    #[arg(long, default_value_t = 3)]
    min_instances: usize,
    #[arg(long, default_value_t = 8)]
    max_instances: usize,
    /// Fewest feature draws per instance.
    #[arg(long, default_value_t = 10)]
    min_draws: usize,
    #[arg(long, default_value_t = 30)]
    max_draws: usize,
    /// Exponential rate shared by every tag.
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Dirichlet concentration of each tag's feature distribution.
    #[arg(long, default_value_t = 0.1)]
    concentration: f64,
    /// Give every tag its own block of features.
    #[arg(long)]
    disjoint: bool,
    /// Label weight shared by every tag.
    #[arg(long, default_value_t = 5.0)]
    weight: f64,
    /// Offset added to every label energy.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    label_bias: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Corpus output path.
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth output path (JSON); defaults to `<out>.truth.json`.
    #[arg(long)]
    truth: Option<PathBuf>,
}

/// Training and inference settings; flags override the config file.
#[derive(Args, Clone, Default)]
struct ModelOpts {
    /// File of `key=value` lines naming training settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Weight-norm penalty.
    #[arg(long)]
    nu1: Option<f64>,
    /// Ranking-slack penalty.
    #[arg(long)]
    nu2: Option<f64>,
    /// Weight learner: `mle` or `max-margin`.
    #[arg(long)]
    mode: Option<String>,
    /// Gamma scale update: `coordinate` or `printed`.
    #[arg(long)]
    rho_rule: Option<String>,
    #[arg(long)]
    em_iters: Option<usize>,
    #[arg(long)]
    estep_iters: Option<usize>,
    /// Relative tolerance on the bound for both loops.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Gamma hyperprior on the rates as `shape,rate`.
    #[arg(long, value_parser = config::parse_pair)]
    chi: Option<(f64, f64)>,
    /// Initial Dirichlet smoothing.
    #[arg(long)]
    eta: Option<f64>,
}

impl ModelOpts {
    fn resolve(&self) -> Result<TrainConfig, String> {
        let mut cfg = TrainConfig::default();
        if let Some(p) = &self.config {
            config::apply_file(&mut cfg, p)?;
        }
        macro_rules! over {
            ($($flag:ident => $field:ident),*) => {
                $(if let Some(v) = &self.$flag { cfg.$field = v.clone(); })*
            };
        }
        over!(nu1 => nu1, nu2 => nu2, mode => mode, rho_rule => rho_rule, em_iters => em_max_iters,
              estep_iters => estep_max_iters, tol => elbo_rel_tol, seed => seed, chi => chi, eta => eta);
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Per-iteration trace (JSON lines); defaults to `<out>.trace.jsonl`.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Pick nu1 and nu2 by cross-validated grid search before training.
    #[arg(long)]
    tune: bool,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_PENALTY_GRID)]
    grid_nu1: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_PENALTY_GRID)]
    grid_nu2: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    tune_folds: usize,
    /// Cutoff of the top-k F1 used to score grid points.
    #[arg(long, default_value_t = 3)]
    tune_k: usize,
    #[command(flatten)]
    opts: ModelOpts,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Output path (JSON lines).
    #[arg(long)]
    out: PathBuf,
    /// Emit per-instance tag distributions instead of captions.
    #[arg(long)]
    regions: bool,
    /// Condition instance predictions on the example labels.
    #[arg(long, requires = "regions")]
    use_labels: bool,
    #[command(flatten)]
    opts: ModelOpts,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Cutoffs, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1, 3, 5])]
    k: Vec<usize>,
    /// Cross-validate by retraining on each split with the model's mode;
    /// `--seed` also fixes the fold assignment.
    #[arg(long)]
    folds: Option<usize>,
    /// Metrics records (JSON lines); defaults to standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-k mean and standard deviation as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[command(flatten)]
    opts: ModelOpts,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    model: PathBuf,
}

/// Failure with its exit status.
enum Failure {
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type Outcome = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(|e| {
        Failure::Lib(Error::Io {
            path: path.into(),
            source: e,
        })
    })
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| {
        Failure::Lib(Error::Io {
            path: path.into(),
            source: e,
        })
    }
}

fn run_synth(a: &SynthArgs) -> Outcome {
    let cfg = SynthConfig {
        num_tags: a.tags,
        num_features: a.features,
        num_examples: a.examples,
        instances: (a.min_instances, a.max_instances),
        features_per_instance: (a.min_draws, a.max_draws),
        lambda: vec![a.lambda; a.tags],
        beta_concentration: a.concentration,
        beta_support: if a.disjoint {
            BetaSupport::Disjoint
        } else {
            BetaSupport::Full
        },
        w: vec![a.weight; a.tags],
        label_bias: a.label_bias,
        seed: a.seed,
    };
    let (corpus, truth) = synthesize_corpus(&cfg)?;
    write_corpus(&corpus, &a.out)?;
    let truth_path = a.truth.clone().unwrap_or_else(|| with_suffix(&a.out, ".truth.json"));
    let mut out = create(&truth_path)?;
    serde_json::to_writer(&mut out, &truth).expect("truth serializes");
    out.write_all(b"\n")
        .and_then(|_| out.flush())
        .map_err(io_err(&truth_path))?;
    info!("wrote {} examples to {}", corpus.len(), a.out.display());
    Ok(())
}

fn run_train(a: &TrainArgs) -> Outcome {
    let mut cfg = a.opts.resolve().map_err(usage)?;
    let corpus = read_corpus(&a.corpus)?;
    if a.tune {
        let ((nu1, nu2), table) = tune_penalties(
            &corpus,
            &cfg,
            &a.grid_nu1,
            &a.grid_nu2,
            a.tune_folds,
            cfg.seed,
            a.tune_k,
        )?;
        for (n1, n2, f1) in &table {
            info!("grid nu1={n1} nu2={n2}: {f1:.4}");
        }
        eprintln!("selected nu1={nu1} nu2={nu2}");
        cfg.nu1 = nu1;
        cfg.nu2 = nu2;
    }
    let (params, trace) = train(&corpus, &cfg)?;
    write_checkpoint(
        &Checkpoint {
            params,
            mode: cfg.mode.clone(),
        },
        &a.out,
    )?;
    trace.write(a.trace.clone().unwrap_or_else(|| with_suffix(&a.out, ".trace.jsonl")))?;
    Ok(())
}

fn run_predict(a: &PredictArgs) -> Outcome {
    let cfg = a.opts.resolve().map_err(usage)?;
    let ckpt = read_checkpoint(&a.model)?;
    let corpus = read_corpus(&a.corpus)?;
    ckpt.params.check_corpus(&corpus)?;
    let mut out = create(&a.out)?;
    let write_err = io_err(&a.out);
    if a.regions {
        for ex in &corpus.examples {
            let phi = predict_regions(ex, &ckpt.params, a.use_labels, &cfg)?;
            let rec = serde_json::json!({ "id": ex.id, "phi": phi.to_rows() });
            writeln!(out, "{rec}").map_err(&write_err)?;
        }
    } else {
        for r in predict_captions(&corpus, &ckpt.params, &cfg)? {
            writeln!(out, "{}", serde_json::to_string(&r).expect("serializes")).map_err(&write_err)?;
        }
    }
    out.flush().map_err(&write_err)
}

fn run_eval(a: &EvalArgs) -> Outcome {
    let mut cfg = a.opts.resolve().map_err(usage)?;
    if a.k.is_empty() || a.k.contains(&0) {
        return Err(usage("--k needs positive cutoffs"));
    }
    let ckpt = read_checkpoint(&a.model)?;
    let corpus = read_corpus(&a.corpus)?;
    ckpt.params.check_corpus(&corpus)?;
    let rows = match a.folds {
        Some(folds) => {
            if a.opts.mode.is_none() {
                cfg.mode = ckpt.mode.clone();
            }
            cross_validate(&corpus, &a.k, folds, cfg.seed, &cfg)?
        }
        None => evaluate(&corpus, &ckpt.params, &a.k, &cfg, 0)?,
    };
    match &a.out {
        Some(p) => write_metrics(&rows, p)?,
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            for r in &rows {
                writeln!(lock, "{}", serde_json::to_string(r).expect("serializes"))
                    .map_err(io_err(Path::new("<stdout>")))?;
            }
        }
    }
    if let Some(p) = &a.csv {
        write_summary_csv(&summarize(&rows), p)?;
    }
    Ok(())
}

fn run_inspect(a: &InspectArgs) -> Outcome {
    let ckpt = read_checkpoint(&a.model)?;
    let p = &ckpt.params;
    let (c, d) = (p.num_tags(), p.num_features());
    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    println!("tags {c}");
    println!("features {d}");
    println!("mode {}", ckpt.mode);
    println!("eta {}", p.eta);
    println!("chi {} {}", p.chi.0, p.chi.1);
    println!("lambda min {:e} max {:e}", min(&p.lambda), max(&p.lambda));
    println!(
        "w min {} max {} positive {}",
        min(&p.w),
        max(&p.w),
        p.w.iter().filter(|&&x| x > 0.0).count()
    );
    let effective: Vec<f64> =
        p.mu.iter_rows()
            .map(|row| {
                let total: f64 = row.iter().sum();
                let entropy: f64 = row.iter().map(|&m| m / total).map(|q| -q * q.ln()).sum();
                entropy.exp()
            })
            .collect();
    println!(
        "effective features per tag mean {:.2} min {:.2} max {:.2}",
        effective.iter().sum::<f64>() / c as f64,
        min(&effective),
        max(&effective)
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EMM_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return ExitCode::from(2);
        }
    };
    let result = pool.install(|| match &cli.command {
        Command::Synth(a) => run_synth(a),
        Command::Train(a) => run_train(a),
        Command::Predict(a) => run_predict(a),
        Command::Eval(a) => run_eval(a),
        Command::Inspect(a) => run_inspect(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
