use super::{BetaTable, ModelParams, VariationalState};
use crate::corpus::{Corpus, Example};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::numerics::{digamma_unchecked, log_gamma_unchecked, xlogx};

/// E_q[log β_d] = Ψ(μ_d) − Ψ(Σ μ) for one Dirichlet row.
pub fn expected_log_beta(mu_row: &[f64], d: usize) -> f64 {
    digamma_unchecked(mu_row[d]) - digamma_unchecked(mu_row.iter().sum())
}

/// E_q[log p(θ_c | λ_c)] for an Exp(rate λ) prior and Gamma(shape γ, scale ρ).
pub fn theta_prior_term(lambda: f64, gamma: f64, rho: f64) -> f64 {
    lambda.ln() - lambda * gamma * rho
}

/// Entropy of Gamma(shape γ, scale ρ).
pub fn gamma_entropy(gamma: f64, rho: f64) -> f64 {
    rho.ln() + gamma + log_gamma_unchecked(gamma) - (gamma - 1.0) * digamma_unchecked(gamma)
}

/// The per-example pieces of the bound, kept apart for diagnostics.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ElboTerms {
    pub theta_prior: f64,
    pub z_given_theta: f64,
    pub features: f64,
    pub labels: f64,
    /// Σ_c δ_c w_c E_q[z̄_c], the multiplier term of the margin Lagrangian.
    pub margin: f64,
    pub theta_entropy: f64,
    pub z_entropy: f64,
}

impl ElboTerms {
    pub fn total(&self) -> f64 {
        self.theta_prior
            + self.z_given_theta
            + self.features
            + self.labels
            + self.margin
            + self.theta_entropy
            + self.z_entropy
    }
}

/// One example's contribution to the bound.
///
/// The label term uses the example's own labels when `use_labels` is set;
/// `delta_row` adds the margin multiplier term.
pub fn example_elbo(
    params: &ModelParams,
    beta: &BetaTable,
    example: &Example,
    state: &VariationalState,
    delta_row: Option<&[f64]>,
    use_labels: bool,
) -> ElboTerms {
    let c_count = params.num_tags();
    let m = example.num_instances() as f64;
    let sums = state.phi_sums();
    let mut t = ElboTerms::default();

    for c in 0..c_count {
        let (g, r) = (state.gamma[c], state.rho[c]);
        t.theta_prior += theta_prior_term(params.lambda[c], g, r);
        t.z_given_theta += sums[c] * (digamma_unchecked(g) + r.ln());
        t.theta_entropy += gamma_entropy(g, r);
    }

    let mut ll = vec![0.0; c_count];
    for (mi, inst) in example.instances.iter().enumerate() {
        beta.instance_log_likelihood(inst.counts(), &mut ll);
        let phi = state.phi.row(mi);
        for c in 0..c_count {
            if phi[c] > 0.0 {
                t.features += phi[c] * ll[c];
            }
            t.z_entropy -= xlogx(phi[c]);
        }
    }

    if use_labels {
        t.labels = example.labels().iter().map(|&c| params.w[c] * sums[c]).sum::<f64>() / m;
    }
    if let Some(delta) = delta_row {
        t.margin = (0..c_count).map(|c| delta[c] * params.w[c] * sums[c]).sum::<f64>() / m;
    }
    t
}

/// E_q[log p(β | η)] + H[q(β)] for an exchangeable Dirichlet prior.
pub fn beta_bound_terms(params: &ModelParams) -> f64 {
    let d_count = params.num_features() as f64;
    let eta = params.eta;
    let log_norm = log_gamma_unchecked(d_count * eta) - d_count * log_gamma_unchecked(eta);
    let table = BetaTable::expected(&params.mu);
    let mut total = 0.0;
    for c in 0..params.num_tags() {
        let mu = params.mu.row(c);
        let elog = table.log_beta().row(c);
        let sum_elog: f64 = elog.iter().sum();
        total += log_norm + (eta - 1.0) * sum_elog;
        let entropy = -(log_gamma_unchecked(mu.iter().sum()) - mu.iter().map(|&m| log_gamma_unchecked(m)).sum::<f64>()
            + mu.iter().zip(elog).map(|(&m, &e)| (m - 1.0) * e).sum::<f64>());
        total += entropy;
    }
    total
}

/// Evidence lower bound over a corpus.
///
/// With `include_beta_prior` the feature term uses E_q[log β] and the
/// Dirichlet prior and entropy of q(β) are added; without it the normalized
/// rows of μ are treated as fixed point values.
pub fn elbo(
    params: &ModelParams,
    corpus: &Corpus,
    states: &[VariationalState],
    delta: Option<&Matrix>,
    include_beta_prior: bool,
) -> Result<f64> {
    let table = BetaTable::for_params(params, include_beta_prior);
    let mut total = elbo_with_beta(params, &table, corpus, states, delta)?;
    if include_beta_prior {
        total += beta_bound_terms(params);
    }
    Ok(total)
}

/// Sum of per-example contributions against an explicit β table.
pub fn elbo_with_beta(
    params: &ModelParams,
    beta: &BetaTable,
    corpus: &Corpus,
    states: &[VariationalState],
    delta: Option<&Matrix>,
) -> Result<f64> {
    params.check_corpus(corpus)?;
    if states.len() != corpus.len() {
        return Err(Error::Dimension(format!(
            "{} states for {} examples",
            states.len(),
            corpus.len()
        )));
    }
    if let Some(d) = delta {
        if d.rows() != corpus.len() || d.cols() != corpus.num_tags {
            return Err(Error::Dimension(format!(
                "delta is {}x{}, expected {}x{}",
                d.rows(),
                d.cols(),
                corpus.len(),
                corpus.num_tags
            )));
        }
    }
    let mut total = 0.0;
    for (n, (ex, st)) in corpus.examples.iter().zip(states).enumerate() {
        st.check(ex, corpus.num_tags)?;
        total += example_elbo(params, beta, ex, st, delta.map(|d| d.row(n)), true).total();
    }
    Ok(total)
}
