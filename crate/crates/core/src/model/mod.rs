//! Parameter containers, per-example variational state, and the evidence
//! lower bound.

mod checkpoint;
mod elbo;

pub use checkpoint::{read_checkpoint, write_checkpoint, write_checkpoint_to, Checkpoint};
pub use elbo::{beta_bound_terms, elbo, elbo_with_beta, example_elbo, expected_log_beta, ElboTerms};

use crate::corpus::{Corpus, Example};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::numerics::digamma_unchecked;

/// Global model parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// Exponential rate per tag.
    pub lambda: Vec<f64>,
    /// Dirichlet variational parameters of the tag feature distributions, C×D.
    pub mu: Matrix,
    /// Label weight per tag.
    pub w: Vec<f64>,
    /// Exchangeable Dirichlet smoothing.
    pub eta: f64,
    /// Gamma hyperprior (shape, rate) on each rate λ_c.
    pub chi: (f64, f64),
}

impl ModelParams {
    pub fn num_tags(&self) -> usize {
        self.lambda.len()
    }

    pub fn num_features(&self) -> usize {
        self.mu.cols()
    }

    /// Parameters with feature distributions fixed at point values `beta`
    /// (rows are normalized).
    pub fn with_point_beta(lambda: Vec<f64>, beta: &Matrix, w: Vec<f64>) -> Self {
        let mut mu = beta.clone();
        for c in 0..mu.rows() {
            let s: f64 = mu.row(c).iter().sum();
            mu.row_mut(c).iter_mut().for_each(|v| *v /= s);
        }
        ModelParams {
            lambda,
            mu,
            w,
            eta: 1.0,
            chi: (1.0, 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.lambda.len();
        if c == 0 || self.mu.rows() != c || self.w.len() != c || self.mu.cols() == 0 {
            return Err(Error::Dimension(format!(
                "params: lambda has {c} tags, mu is {}x{}, w has {}",
                self.mu.rows(),
                self.mu.cols(),
                self.w.len()
            )));
        }
        if self.lambda.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::Domain("every lambda must be positive and finite".into()));
        }
        if self.mu.as_slice().iter().any(|&m| !(m > 0.0 && m.is_finite())) {
            return Err(Error::Domain("every mu entry must be positive and finite".into()));
        }
        if self.w.iter().any(|w| !w.is_finite()) {
            return Err(Error::Domain("w must be finite".into()));
        }
        if !(self.eta > 0.0) || !(self.chi.0 > 0.0 && self.chi.1 > 0.0) {
            return Err(Error::Domain("eta and chi must be positive".into()));
        }
        Ok(())
    }

    pub fn check_corpus(&self, corpus: &Corpus) -> Result<()> {
        if corpus.num_tags != self.num_tags() || corpus.num_features != self.num_features() {
            return Err(Error::Dimension(format!(
                "corpus is {}x{} (tags x features) but model is {}x{}",
                corpus.num_tags,
                corpus.num_features,
                self.num_tags(),
                self.num_features()
            )));
        }
        Ok(())
    }

    /// Relabels tags so that old tag `t` becomes `new_index[t]`.
    pub fn permute_tags(&self, new_index: &[usize]) -> ModelParams {
        let source = invert(new_index);
        ModelParams {
            lambda: source.iter().map(|&s| self.lambda[s]).collect(),
            mu: self.mu.permute_rows(&source),
            w: source.iter().map(|&s| self.w[s]).collect(),
            eta: self.eta,
            chi: self.chi,
        }
    }
}

pub(crate) fn invert(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Log feature-distribution table consumed by inference, C×D.
///
/// Either the variational expectation E_q[log β] under Dirichlet(μ) or the
/// log of a fixed point estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct BetaTable {
    log_beta: Matrix,
    expected: bool,
}

impl BetaTable {
    /// E_q[log β_cd] = Ψ(μ_cd) − Ψ(Σ_d' μ_cd').
    pub fn expected(mu: &Matrix) -> Self {
        let mut log_beta = Matrix::zeros(mu.rows(), mu.cols());
        for c in 0..mu.rows() {
            let row = mu.row(c);
            let total = digamma_unchecked(row.iter().sum());
            for (out, &m) in log_beta.row_mut(c).iter_mut().zip(row) {
                *out = digamma_unchecked(m) - total;
            }
        }
        BetaTable {
            log_beta,
            expected: true,
        }
    }

    /// log of the normalized rows of `beta`.
    pub fn point(beta: &Matrix) -> Self {
        let mut log_beta = Matrix::zeros(beta.rows(), beta.cols());
        for c in 0..beta.rows() {
            let row = beta.row(c);
            let total: f64 = row.iter().sum();
            for (out, &b) in log_beta.row_mut(c).iter_mut().zip(row) {
                *out = (b / total).ln();
            }
        }
        BetaTable {
            log_beta,
            expected: false,
        }
    }

    /// The table matching an elbo evaluation: expected under q(β) when the
    /// β prior is included, otherwise the normalized μ rows as point values.
    pub fn for_params(params: &ModelParams, include_beta_prior: bool) -> Self {
        if include_beta_prior {
            Self::expected(&params.mu)
        } else {
            Self::point(&params.mu)
        }
    }

    pub fn is_expected(&self) -> bool {
        self.expected
    }

    pub fn log_beta(&self) -> &Matrix {
        &self.log_beta
    }

    /// Σ_d x_d log β_cd for one instance and every tag.
    pub fn instance_log_likelihood(&self, counts: &[(usize, u32)], out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            let row = self.log_beta.row(c);
            *o = counts.iter().map(|&(d, x)| f64::from(x) * row[d]).sum();
        }
    }
}

/// Per-example variational parameters: Gamma shape/scale per tag and the
/// instance responsibilities.
#[derive(Clone, Debug, PartialEq)]
pub struct VariationalState {
    pub gamma: Vec<f64>,
    pub rho: Vec<f64>,
    /// M×C, one simplex row per instance.
    pub phi: Matrix,
}

impl VariationalState {
    pub fn num_tags(&self) -> usize {
        self.gamma.len()
    }

    pub fn num_instances(&self) -> usize {
        self.phi.rows()
    }

    /// Σ_m φ_mc per tag.
    pub fn phi_sums(&self) -> Vec<f64> {
        self.phi.column_sums()
    }

    pub fn check(&self, example: &Example, num_tags: usize) -> Result<()> {
        if self.gamma.len() != num_tags
            || self.rho.len() != num_tags
            || self.phi.cols() != num_tags
            || self.phi.rows() != example.num_instances()
        {
            return Err(Error::Dimension(format!(
                "state for example {:?} does not match {} instances x {num_tags} tags",
                example.id,
                example.num_instances()
            )));
        }
        Ok(())
    }

    pub fn permute_tags(&self, new_index: &[usize]) -> VariationalState {
        let source = invert(new_index);
        VariationalState {
            gamma: source.iter().map(|&s| self.gamma[s]).collect(),
            rho: source.iter().map(|&s| self.rho[s]).collect(),
            phi: self.phi.permute_cols(&source),
        }
    }
}

pub const MODE_MLE: &str = "mle";
pub const MODE_MAX_MARGIN: &str = "max-margin";

/// Training and inference settings.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Weight-norm penalty ν₁.
    pub nu1: f64,
    /// Pairwise slack penalty ν₂.
    pub nu2: f64,
    /// Name of the registered weight learner (`mle` or `max-margin`).
    pub mode: String,
    /// Name of the registered scale-update rule for q(θ).
    pub rho_rule: String,
    pub em_max_iters: usize,
    pub estep_max_iters: usize,
    pub newton_max_iters: usize,
    pub elbo_rel_tol: f64,
    pub newton_tol: f64,
    pub violation_eps: f64,
    pub cutting_plane_max_rounds: usize,
    pub qp_max_sweeps: usize,
    pub qp_tol: f64,
    pub chi: (f64, f64),
    pub eta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            nu1: 1.0,
            nu2: 1.0,
            mode: MODE_MLE.to_string(),
            rho_rule: crate::inference::DEFAULT_RHO_RULE.to_string(),
            em_max_iters: 50,
            estep_max_iters: 100,
            newton_max_iters: 100,
            elbo_rel_tol: 1e-6,
            newton_tol: 1e-10,
            violation_eps: 1e-3,
            cutting_plane_max_rounds: 100,
            qp_max_sweeps: 100_000,
            qp_tol: 1e-10,
            chi: (1.0, 1.0),
            eta: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        if !(self.nu1 >= 0.0 && self.nu2 >= 0.0) {
            return bad("nu1 and nu2 must be nonnegative");
        }
        if !(self.elbo_rel_tol > 0.0 && self.newton_tol > 0.0 && self.violation_eps > 0.0 && self.qp_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if self.estep_max_iters == 0 || self.newton_max_iters == 0 || self.qp_max_sweeps == 0 {
            return bad("iteration caps must be at least 1");
        }
        if !(self.chi.0 > 0.0 && self.chi.1 > 0.0 && self.eta > 0.0) {
            return bad("chi and eta must be positive");
        }
        Ok(())
    }
}
