//! EM driver and M-step updates.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, OnceLock};
use std::time::{SystemTime, UNIX_EPOCH};

use log::{debug, info, warn};
use serde::Serialize;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::inference::{e_step_corpus, scale_rules, update_mu, InferenceMode};
use crate::margin::{cutting_plane, label_sizes, restricted_objective, DualState};
use crate::matrix::Matrix;
use crate::model::{elbo, BetaTable, ModelParams, TrainConfig, VariationalState, MODE_MAX_MARGIN, MODE_MLE};
use crate::numerics::{digamma_unchecked, log_gamma_unchecked, trigamma_unchecked};
use crate::registry::Registry;

/// λ_c = (χ₁ + N − 1) / (χ₂ + Σ_n γ_nc ρ_nc).
pub fn update_lambda(states: &[VariationalState], chi: (f64, f64), num_examples: usize) -> Result<Vec<f64>> {
    let numer = chi.0 + num_examples as f64 - 1.0;
    if num_examples == 0 || !(numer > 0.0) {
        return Err(Error::InvalidInput(format!(
            "rate update needs chi1 + N > 1 (chi1 = {}, N = {num_examples})",
            chi.0
        )));
    }
    let c_count = states.first().map_or(0, VariationalState::num_tags);
    let mut mass = vec![chi.1; c_count];
    for st in states {
        for (acc, (g, r)) in mass.iter_mut().zip(st.gamma.iter().zip(&st.rho)) {
            *acc += g * r;
        }
    }
    mass.into_iter()
        .map(|den| {
            if den > 0.0 && den.is_finite() {
                Ok(numer / den)
            } else {
                Err(Error::Domain(format!("rate update denominator {den} is not positive")))
            }
        })
        .collect()
}

pub const ETA_MIN: f64 = 1e-4;
pub const ETA_MAX: f64 = 1e3;
const ETA_GRAD_TOL: f64 = 1e-8;

/// Σ_c [log Γ(Dη) − D log Γ(η) + (η − 1) Σ_d E_q log β_cd].
pub fn eta_objective(elog_beta: &Matrix, eta: f64) -> f64 {
    let (c, d) = (elog_beta.rows() as f64, elog_beta.cols() as f64);
    let s: f64 = elog_beta.as_slice().iter().sum();
    c * (log_gamma_unchecked(d * eta) - d * log_gamma_unchecked(eta)) + (eta - 1.0) * s
}

/// Derivative of [`eta_objective`] in η.
pub fn eta_gradient(elog_beta: &Matrix, eta: f64) -> f64 {
    let (c, d) = (elog_beta.rows() as f64, elog_beta.cols() as f64);
    let s: f64 = elog_beta.as_slice().iter().sum();
    c * d * (digamma_unchecked(d * eta) - digamma_unchecked(eta)) + s
}

/// Maximizes [`eta_objective`] over [ETA_MIN, ETA_MAX].
///
/// The objective is concave, so the gradient decreases in η. A bound is
/// returned (with a warning) when the gradient does not change sign inside
/// the interval; otherwise Newton steps run inside a shrinking bracket.
pub fn update_eta(elog_beta: &Matrix, current: f64, max_iters: usize) -> Result<f64> {
    if !(current > 0.0) || elog_beta.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain(
            "eta update needs a positive start and finite statistics".into(),
        ));
    }
    if elog_beta.cols() <= 1 || elog_beta.rows() == 0 {
        return Ok(current.clamp(ETA_MIN, ETA_MAX));
    }
    let g = |e: f64| eta_gradient(elog_beta, e);
    let (mut lo, mut hi) = (ETA_MIN, ETA_MAX);
    if g(hi) >= 0.0 {
        warn!("smoothing update reached its upper bound {ETA_MAX}");
        return Ok(hi);
    }
    if g(lo) <= 0.0 {
        warn!("smoothing update reached its lower bound {ETA_MIN}");
        return Ok(lo);
    }
    let (c, d) = (elog_beta.rows() as f64, elog_beta.cols() as f64);
    let mut x = current.clamp(lo, hi);
    for _ in 0..max_iters {
        let gx = g(x);
        if gx.abs() <= ETA_GRAD_TOL {
            return Ok(x);
        }
        if gx > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            return Ok(x);
        }
        let h = c * (d * d * trigamma_unchecked(d * x) - d * trigamma_unchecked(x));
        let newton = x - gx / h;
        x = if newton > lo && newton < hi {
            newton
        } else {
            (lo * hi).sqrt()
        };
    }
    let gx = g(x);
    if gx.abs() <= ETA_GRAD_TOL {
        return Ok(x);
    }
    Err(Error::Convergence {
        what: "smoothing Newton solve",
        iterations: max_iters,
        residual: gx,
    })
}

/// w_c = (1/ν₁) Σ_n (y_nc / M_n) Σ_m φ_nmc.
pub fn update_w_mle(states: &[VariationalState], corpus: &Corpus, nu1: f64) -> Result<Vec<f64>> {
    if !(nu1 > 0.0) {
        return Err(Error::InvalidInput(format!(
            "the weight update needs nu1 > 0, got {nu1}"
        )));
    }
    if states.len() != corpus.len() {
        return Err(Error::Dimension(format!(
            "{} states for {} examples",
            states.len(),
            corpus.len()
        )));
    }
    let mut w = vec![0.0; corpus.num_tags];
    for (ex, st) in corpus.examples.iter().zip(states) {
        st.check(ex, corpus.num_tags)?;
        let sums = st.phi_sums();
        let m = ex.num_instances() as f64;
        for &c in ex.labels() {
            w[c] += sums[c] / m;
        }
    }
    w.iter_mut().for_each(|x| *x /= nu1);
    Ok(w)
}

/// Output of one weight-learning step.
#[derive(Clone, Debug)]
pub struct WeightUpdate {
    pub w: Vec<f64>,
    /// Margin multipliers for the next E-step, if the learner uses any.
    pub dual: Option<DualState>,
    /// Value subtracted from the bound in the tracked objective.
    pub penalty: f64,
}

/// A way of fitting the tag weights given the current variational states.
pub trait WeightLearner: Send + Sync {
    fn update(
        &self,
        corpus: &Corpus,
        states: &[VariationalState],
        w: &[f64],
        dual: Option<DualState>,
        cfg: &TrainConfig,
    ) -> Result<WeightUpdate>;
}

/// Closed-form maximizer of the label term minus (ν₁/2)‖w‖².
pub struct MleWeights;

impl WeightLearner for MleWeights {
    fn update(
        &self,
        corpus: &Corpus,
        states: &[VariationalState],
        _w: &[f64],
        _dual: Option<DualState>,
        cfg: &TrainConfig,
    ) -> Result<WeightUpdate> {
        let w = update_w_mle(states, corpus, cfg.nu1)?;
        let penalty = 0.5 * cfg.nu1 * w.iter().map(|x| x * x).sum::<f64>();
        Ok(WeightUpdate { w, dual: None, penalty })
    }
}

/// Pairwise ranking constraints solved by the cutting-plane QP.
pub struct MaxMarginWeights;

impl WeightLearner for MaxMarginWeights {
    fn update(
        &self,
        corpus: &Corpus,
        states: &[VariationalState],
        w: &[f64],
        dual: Option<DualState>,
        cfg: &TrainConfig,
    ) -> Result<WeightUpdate> {
        if !label_sizes(corpus).0.iter().any(|&e| e) {
            return Err(Error::InvalidInput(
                "max-margin training needs an example whose label set is nonempty and not every tag".into(),
            ));
        }
        let res = cutting_plane(corpus, states, w, dual, cfg)?;
        let (_, sizes) = label_sizes(corpus);
        let penalty = restricted_objective(&res.dual.working_set, &res.w, cfg.nu1, cfg.nu2, &sizes);
        Ok(WeightUpdate {
            w: res.w,
            dual: Some(res.dual),
            penalty,
        })
    }
}

/// Registry of built-in weight learners.
pub fn weight_learners() -> &'static Registry<dyn WeightLearner> {
    static LEARNERS: OnceLock<Registry<dyn WeightLearner>> = OnceLock::new();
    LEARNERS.get_or_init(|| {
        let mut reg: Registry<dyn WeightLearner> = Registry::new("training mode");
        reg.register(MODE_MLE, Arc::new(MleWeights));
        reg.register(MODE_MAX_MARGIN, Arc::new(MaxMarginWeights));
        reg
    })
}

/// One EM iteration as recorded in the trace.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRecord {
    pub iteration: usize,
    /// Bound + rate hyperprior − weight penalty (higher is better).
    pub objective: f64,
    pub elbo: f64,
    /// Seconds since the Unix epoch at the end of the iteration.
    pub timestamp: f64,
    pub working_set_size: usize,
    /// Mean number of tags per example with a positive MAP activity.
    pub mean_support: f64,
    /// Largest relative decrease of any example's bound between consecutive
    /// e-step sweeps (negative when every sweep improved).
    pub worst_sweep_change: f64,
    pub eta: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
}

impl TrainTrace {
    /// One JSON record per line.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |e| Error::io(path, e);
        let mut out = BufWriter::new(File::create(path).map_err(io)?);
        for r in &self.records {
            let line = serde_json::to_string(r).expect("trace records serialize");
            writeln!(out, "{line}").map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

/// Everything produced by [`fit`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub trace: TrainTrace,
    /// Variational states from the last e-step (empty when no iteration ran).
    pub states: Vec<VariationalState>,
    pub dual: Option<DualState>,
}

const INIT_PERTURBATION: f64 = 0.01;

/// Starting parameters: unit rates, zero weights, and μ = η plus a
/// perturbation of at most 0.01 proportional to how often each feature
/// occurs in examples carrying each tag.
pub fn initial_params(corpus: &Corpus, cfg: &TrainConfig) -> ModelParams {
    let (c_count, d_count) = (corpus.num_tags, corpus.num_features);
    let mut freq = Matrix::zeros(c_count, d_count);
    for ex in &corpus.examples {
        for inst in &ex.instances {
            for &c in ex.labels() {
                let row = freq.row_mut(c);
                for &(d, x) in inst.counts() {
                    row[d] += f64::from(x);
                }
            }
        }
    }
    let peak = freq.as_slice().iter().copied().fold(0.0, f64::max);
    let mut mu = Matrix::filled(c_count, d_count, cfg.eta);
    if peak > 0.0 {
        for c in 0..c_count {
            for (m, f) in mu.row_mut(c).iter_mut().zip(freq.row(c)) {
                *m += INIT_PERTURBATION * f / peak;
            }
        }
    }
    ModelParams {
        lambda: vec![1.0; c_count],
        mu,
        w: vec![0.0; c_count],
        eta: cfg.eta,
        chi: cfg.chi,
    }
}

fn lambda_hyperprior(params: &ModelParams) -> f64 {
    let (a, b) = params.chi;
    params.lambda.iter().map(|&l| (a - 1.0) * l.ln() - b * l).sum()
}

fn mean_support(states: &[VariationalState]) -> f64 {
    if states.is_empty() {
        return 0.0;
    }
    let total: usize = states
        .iter()
        .map(|s| s.gamma.iter().filter(|&&g| g > 1.0).count())
        .sum();
    total as f64 / states.len() as f64
}

fn worst_sweep_change(traces: &[Vec<f64>]) -> f64 {
    traces
        .iter()
        .flat_map(|t| t.windows(2).map(|p| (p[0] - p[1]) / p[0].abs().max(1e-300)))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Variational EM: e-step over all examples, then μ, λ, η and the weights.
pub fn fit(corpus: &Corpus, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    corpus.validate()?;
    if corpus.is_empty() {
        return Err(Error::InvalidInput("cannot train on an empty corpus".into()));
    }
    let learner = weight_learners().get(&cfg.mode)?;
    scale_rules().get(&cfg.rho_rule)?;

    let mut params = initial_params(corpus, cfg);
    let mut trace = TrainTrace::default();
    let mut states: Vec<VariationalState> = Vec::new();
    let mut dual: Option<DualState> = None;
    let mut prev_objective: Option<f64> = None;

    for iteration in 0..cfg.em_max_iters {
        let beta = BetaTable::expected(&params.mu);
        let delta = dual.as_ref().map(|d| &d.delta);
        let init = (!states.is_empty()).then_some(states.as_slice());
        let results = e_step_corpus(corpus, &params, &beta, delta, InferenceMode::Train, cfg, init)?;
        let sweep_change = worst_sweep_change(&results.iter().map(|r| r.trace.clone()).collect::<Vec<_>>());
        states = results.into_iter().map(|r| r.state).collect();

        params.mu = update_mu(corpus, &states, params.eta)?;
        params.lambda = update_lambda(&states, params.chi, corpus.len())?;
        params.eta = update_eta(
            &BetaTable::expected(&params.mu).log_beta().clone(),
            params.eta,
            cfg.newton_max_iters,
        )?;
        // Keep μ consistent with the η it was built from.
        params.mu = update_mu(corpus, &states, params.eta)?;

        let step = learner.update(corpus, &states, &params.w, dual.take(), cfg)?;
        params.w = step.w;
        dual = step.dual;

        let bound = elbo(&params, corpus, &states, None, true)?;
        let objective = bound + lambda_hyperprior(&params) - step.penalty;
        let record = TraceRecord {
            iteration,
            objective,
            elbo: bound,
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0.0, |d| d.as_secs_f64()),
            working_set_size: dual.as_ref().map_or(0, DualState::len),
            mean_support: mean_support(&states),
            worst_sweep_change: sweep_change,
            eta: params.eta,
        };
        debug!(
            "iteration {iteration}: objective {objective:.10e}, support {:.2}",
            record.mean_support
        );
        trace.records.push(record);

        if let Some(prev) = prev_objective {
            if (objective - prev).abs() < cfg.elbo_rel_tol * prev.abs() {
                info!("converged after {} iterations", iteration + 1);
                break;
            }
        }
        prev_objective = Some(objective);
    }
    Ok(TrainOutcome {
        params,
        trace,
        states,
        dual,
    })
}

/// Trains a model and returns its parameters with the per-iteration trace.
pub fn train(corpus: &Corpus, cfg: &TrainConfig) -> Result<(ModelParams, TrainTrace)> {
    fit(corpus, cfg).map(|o| (o.params, o.trace))
}
