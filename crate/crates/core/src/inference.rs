//! Per-example mean-field coordinate ascent over q(θ) = Π Gamma(γ_c, ρ_c)
//! and q(z_m) = Mult(φ_m).

use std::sync::{Arc, OnceLock};

use rayon::prelude::*;

use crate::corpus::{Corpus, Example, Instance};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{example_elbo, BetaTable, ModelParams, TrainConfig, VariationalState};
use crate::numerics::{digamma_unchecked, log_normalize_in_place, tetragamma_unchecked, trigamma_unchecked};
use crate::registry::Registry;

/// Whether the label evidence (and margin multipliers) enter the φ update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InferenceMode {
    Train,
    Test,
}

/// Update rule for the Gamma scales ρ given shape, rate and Σ_m φ_mc.
pub trait ScaleRule: Send + Sync {
    fn scale(&self, lambda: f64, gamma: f64, phi_sum: f64) -> f64;
}

/// ρ = λγ / (1 + Σ_m φ_mc).
pub struct PrintedScale;

impl ScaleRule for PrintedScale {
    fn scale(&self, lambda: f64, gamma: f64, phi_sum: f64) -> f64 {
        lambda * gamma / (1.0 + phi_sum)
    }
}

/// ρ = (1 + Σ_m φ_mc) / (λγ), the stationary point of the bound in ρ.
pub struct CoordinateScale;

impl ScaleRule for CoordinateScale {
    fn scale(&self, lambda: f64, gamma: f64, phi_sum: f64) -> f64 {
        (1.0 + phi_sum) / (lambda * gamma)
    }
}

pub const RHO_PRINTED: &str = "printed";
pub const RHO_COORDINATE: &str = "coordinate";
pub const DEFAULT_RHO_RULE: &str = RHO_COORDINATE;

/// Registry of built-in scale rules.
pub fn scale_rules() -> &'static Registry<dyn ScaleRule> {
    static RULES: OnceLock<Registry<dyn ScaleRule>> = OnceLock::new();
    RULES.get_or_init(|| {
        let mut reg: Registry<dyn ScaleRule> = Registry::new("scale rule");
        reg.register(RHO_PRINTED, Arc::new(PrintedScale));
        reg.register(RHO_COORDINATE, Arc::new(CoordinateScale));
        reg
    })
}

/// ρ_c = λ_c γ_c / (1 + Σ_m φ_mc).
pub fn update_rho(lambda: f64, gamma: f64, phi_sum: f64) -> Result<f64> {
    if !(lambda > 0.0 && gamma > 0.0) {
        return Err(Error::Domain(format!(
            "update_rho needs lambda, gamma > 0 (got {lambda}, {gamma})"
        )));
    }
    if !(phi_sum >= 0.0) {
        return Err(Error::Domain(format!("phi sum must be nonnegative, got {phi_sum}")));
    }
    Ok(PrintedScale.scale(lambda, gamma, phi_sum))
}

/// Residual of the shape equation (Σφ − γ + 1) Ψ'(γ) + 1 − λρ.
pub fn shape_residual(gamma: f64, phi_sum: f64, lambda_rho: f64) -> f64 {
    (phi_sum - gamma + 1.0) * trigamma_unchecked(gamma) + 1.0 - lambda_rho
}

const SHAPE_FLOOR: f64 = 1e-8;

/// Solves the shape equation for γ by Newton's method inside a sign-change
/// bracket, falling back to bisection whenever a step leaves the bracket.
///
/// The residual is positive below the root and negative above it. `start`
/// seeds the first Newton step.
pub fn solve_shape(phi_sum: f64, lambda_rho: f64, start: f64, max_iters: usize, tol: f64) -> Result<f64> {
    if !(phi_sum >= 0.0 && phi_sum.is_finite()) || !(lambda_rho > 0.0 && lambda_rho.is_finite()) {
        return Err(Error::Domain(format!(
            "shape equation needs phi_sum >= 0 and lambda*rho > 0 (got {phi_sum}, {lambda_rho})"
        )));
    }
    let f = |g: f64| shape_residual(g, phi_sum, lambda_rho);
    let mut lo = SHAPE_FLOOR;
    let mut hi = 1.0;
    let mut f_hi = f(hi);
    while f_hi > 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::Convergence {
                what: "shape bracket search",
                iterations: 0,
                residual: f_hi,
            });
        }
        f_hi = f(hi);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }

    let mut x = if start > lo && start < hi {
        start
    } else {
        bisect_point(lo, hi)
    };
    let mut fx = f(x);
    for _ in 0..max_iters {
        if fx > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let slope = -trigamma_unchecked(x) + (phi_sum - x + 1.0) * tetragamma_unchecked(x);
        let newton = x - fx / slope;
        if fx.abs() <= tol {
            // One more step tightens the root well past the residual tolerance.
            if newton > lo && newton < hi {
                let fn_ = f(newton);
                if fn_.abs() < fx.abs() {
                    return Ok(newton);
                }
            }
            return Ok(x);
        }
        let next = if newton > lo && newton < hi && newton.is_finite() {
            newton
        } else {
            bisect_point(lo, hi)
        };
        if hi - lo <= 4.0 * f64::EPSILON * x {
            // Bracket collapsed to adjacent floats; the residual is at its
            // rounding floor.
            return Ok(x);
        }
        x = next;
        fx = f(x);
    }
    if fx.abs() <= tol {
        return Ok(x);
    }
    Err(Error::Convergence {
        what: "shape Newton solve",
        iterations: max_iters,
        residual: fx,
    })
}

fn bisect_point(lo: f64, hi: f64) -> f64 {
    if hi > 4.0 * lo {
        (lo * hi).sqrt()
    } else {
        0.5 * (lo + hi)
    }
}

/// γ update for one tag: the root of the shape equation at the given ρ.
pub fn update_gamma(phi_sum: f64, lambda: f64, rho: f64, cfg: &TrainConfig) -> Result<f64> {
    if !(lambda > 0.0 && rho > 0.0) {
        return Err(Error::Domain(format!(
            "update_gamma needs lambda, rho > 0 (got {lambda}, {rho})"
        )));
    }
    solve_shape(
        phi_sum,
        lambda * rho,
        phi_sum + 1.0,
        cfg.newton_max_iters,
        cfg.newton_tol,
    )
}

/// Responsibilities for one instance.
///
/// Log-score per tag: log ρ_c + Ψ(γ_c) + Σ_d x_d log β_cd, plus
/// (w_c/M)(y_c + δ_c) when labels are given.
#[allow(clippy::too_many_arguments)]
pub fn update_phi(
    instance: &Instance,
    params: &ModelParams,
    beta: &BetaTable,
    gamma: &[f64],
    rho: &[f64],
    y_row: Option<&[f64]>,
    delta_row: Option<&[f64]>,
    num_instances: usize,
) -> Result<Vec<f64>> {
    let c_count = params.num_tags();
    if gamma.len() != c_count || rho.len() != c_count {
        return Err(Error::Dimension(format!("gamma/rho must have {c_count} entries")));
    }
    if y_row.is_none() && delta_row.is_some() {
        return Err(Error::InvalidInput("margin multipliers given without labels".into()));
    }
    if y_row.is_some_and(|y| y.len() != c_count) || delta_row.is_some_and(|d| d.len() != c_count) {
        return Err(Error::Dimension(format!(
            "label and delta rows must have {c_count} entries"
        )));
    }
    let prior: Vec<f64> = gamma
        .iter()
        .zip(rho)
        .map(|(&g, &r)| r.ln() + digamma_unchecked(g))
        .collect();
    let mut out = vec![0.0; c_count];
    phi_scores(
        instance,
        params,
        beta,
        &prior,
        y_row,
        delta_row,
        num_instances,
        &mut out,
    );
    log_normalize_in_place(&mut out)?;
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn phi_scores(
    instance: &Instance,
    params: &ModelParams,
    beta: &BetaTable,
    prior: &[f64],
    y_row: Option<&[f64]>,
    delta_row: Option<&[f64]>,
    num_instances: usize,
    out: &mut [f64],
) {
    beta.instance_log_likelihood(instance.counts(), out);
    let m = num_instances as f64;
    for c in 0..out.len() {
        out[c] += prior[c];
        if let Some(y) = y_row {
            let d = delta_row.map_or(0.0, |d| d[c]);
            out[c] += params.w[c] / m * (y[c] + d);
        }
    }
}

/// Result of one e-step together with the bound after initialization and
/// after every sweep.
#[derive(Clone, Debug)]
pub struct EStepResult {
    pub state: VariationalState,
    pub trace: Vec<f64>,
}

/// Coordinate ascent for one example: φ (all instances), then ρ, then γ,
/// until the example's bound changes by less than `elbo_rel_tol` relative.
pub fn e_step(
    example: &Example,
    params: &ModelParams,
    beta: &BetaTable,
    delta_row: Option<&[f64]>,
    mode: InferenceMode,
    cfg: &TrainConfig,
) -> Result<VariationalState> {
    e_step_traced(example, params, beta, delta_row, mode, cfg).map(|r| r.state)
}

pub fn e_step_traced(
    example: &Example,
    params: &ModelParams,
    beta: &BetaTable,
    delta_row: Option<&[f64]>,
    mode: InferenceMode,
    cfg: &TrainConfig,
) -> Result<EStepResult> {
    e_step_from(example, params, beta, delta_row, mode, cfg, None)
}

/// Like [`e_step_traced`], but resumes from `init` when given instead of the
/// symmetric starting point.
pub fn e_step_from(
    example: &Example,
    params: &ModelParams,
    beta: &BetaTable,
    delta_row: Option<&[f64]>,
    mode: InferenceMode,
    cfg: &TrainConfig,
    init: Option<&VariationalState>,
) -> Result<EStepResult> {
    let rule = scale_rules().get(&cfg.rho_rule)?;
    let c_count = params.num_tags();
    let m_count = example.num_instances();
    let m = m_count as f64;
    let train = mode == InferenceMode::Train;
    let y = train.then(|| example.label_indicator(c_count));
    let delta_row = if train { delta_row } else { None };

    let mut state = match init {
        Some(st) => {
            st.check(example, c_count)?;
            st.clone()
        }
        None => {
            let gamma = vec![1.0 + m / c_count as f64; c_count];
            let sums = vec![m / c_count as f64; c_count];
            let rho = (0..c_count)
                .map(|c| rule.scale(params.lambda[c], gamma[c], sums[c]))
                .collect();
            let phi = Matrix::filled(m_count, c_count, 1.0 / c_count as f64);
            VariationalState { gamma, rho, phi }
        }
    };

    // Σ_d x_d log β_cd does not change during the e-step.
    let mut feature_ll = Matrix::zeros(m_count, c_count);
    for (mi, inst) in example.instances.iter().enumerate() {
        beta.instance_log_likelihood(inst.counts(), feature_ll.row_mut(mi));
    }

    let bound = |st: &VariationalState| example_elbo(params, beta, example, st, delta_row, train).total();
    let mut prev = bound(&state);
    let mut trace = vec![prev];

    let mut prior = vec![0.0; c_count];
    for _ in 0..cfg.estep_max_iters {
        let VariationalState {
            mut gamma,
            mut rho,
            mut phi,
        } = state;
        for c in 0..c_count {
            prior[c] = rho[c].ln() + digamma_unchecked(gamma[c]);
        }
        for mi in 0..m_count {
            let row = phi.row_mut(mi);
            for c in 0..c_count {
                row[c] = feature_ll[(mi, c)] + prior[c];
                if let Some(y) = &y {
                    let d = delta_row.map_or(0.0, |d| d[c]);
                    row[c] += params.w[c] / m * (y[c] + d);
                }
            }
            log_normalize_in_place(row)?;
        }
        let sums = phi.column_sums();
        for c in 0..c_count {
            rho[c] = rule.scale(params.lambda[c], gamma[c], sums[c]);
            gamma[c] = solve_shape(
                sums[c],
                params.lambda[c] * rho[c],
                gamma[c],
                cfg.newton_max_iters,
                cfg.newton_tol,
            )?;
        }
        state = VariationalState { gamma, rho, phi };
        let value = bound(&state);
        trace.push(value);
        let converged = (value - prev).abs() < cfg.elbo_rel_tol * prev.abs().max(1e-300);
        prev = value;
        if converged {
            break;
        }
    }
    Ok(EStepResult { state, trace })
}

/// E-step over a whole corpus. Examples run in parallel on the current rayon
/// pool; results keep corpus order.
pub fn e_step_corpus(
    corpus: &Corpus,
    params: &ModelParams,
    beta: &BetaTable,
    delta: Option<&Matrix>,
    mode: InferenceMode,
    cfg: &TrainConfig,
    init: Option<&[VariationalState]>,
) -> Result<Vec<EStepResult>> {
    if init.is_some_and(|s| s.len() != corpus.len()) {
        return Err(Error::Dimension("one starting state per example is required".into()));
    }
    corpus
        .examples
        .par_iter()
        .enumerate()
        .map(|(n, ex)| {
            e_step_from(
                ex,
                params,
                beta,
                delta.map(|d| d.row(n)),
                mode,
                cfg,
                init.map(|s| &s[n]),
            )
        })
        .collect()
}

/// μ_cd = η + Σ_n Σ_m φ_nmc x_nmd, accumulated in example order.
pub fn update_mu(corpus: &Corpus, states: &[VariationalState], eta: f64) -> Result<Matrix> {
    if states.len() != corpus.len() {
        return Err(Error::Dimension(format!(
            "{} states for {} examples",
            states.len(),
            corpus.len()
        )));
    }
    let mut mu = Matrix::filled(corpus.num_tags, corpus.num_features, eta);
    for (ex, st) in corpus.examples.iter().zip(states) {
        st.check(ex, corpus.num_tags)?;
        for (mi, inst) in ex.instances.iter().enumerate() {
            let phi = st.phi.row(mi);
            for (c, &p) in phi.iter().enumerate() {
                let row = mu.row_mut(c);
                for &(d, x) in inst.counts() {
                    row[d] += p * f64::from(x);
                }
            }
        }
    }
    Ok(mu)
}
