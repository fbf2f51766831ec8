//! Brute-force reference values for tiny problems.
//!
//! The marginal likelihood sums over every tag assignment z ∈ C^M and
//! integrates the activities θ out. Writing θ = r·u with r = ‖θ‖₁ and u on
//! the simplex, the radial integral is elementary:
//!
//! ```text
//! E[Π_c θ̃_c^{n_c}] = (C−1)! Π_c λ_c ∫_simplex Π_c u_c^{n_c} / (λ·u)^C du
//! ```
//!
//! which leaves a smooth integral over at most two simplex coordinates. It is
//! evaluated with tensor Gauss–Legendre rules after a stick-breaking change
//! of variables, doubling the node count from 64 until two successive values
//! agree to 1e-8 relative. A direct tensor Gauss–Laguerre rule over θ is
//! provided for cross-checking.

use crate::corpus::Example;
use crate::error::{Error, Result};
use crate::inference::shape_residual;
use crate::matrix::Matrix;
use crate::numerics::{log_gamma, log_sum_exp};

pub const MAX_TAGS: usize = 3;
pub const MAX_INSTANCES: usize = 4;
pub const MAX_FEATURES: usize = 5;

const START_NODES: usize = 64;
const MAX_NODES: usize = 1024;
const AGREEMENT: f64 = 1e-8;

/// Point parameters of the generative model.
#[derive(Clone, Debug, PartialEq)]
pub struct PointParams {
    pub lambda: Vec<f64>,
    /// C×D rows on the simplex.
    pub beta: Matrix,
    pub w: Vec<f64>,
}

/// Whether the per-tag logistic label factor exp(y w z̄)/(1 + exp(w z̄))
/// multiplies the joint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelTerm {
    Include,
    Exclude,
}

/// Gauss–Legendre nodes and weights on [0, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = nf * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let weight = 1.0 / ((1.0 - z * z) * dp * dp);
        x[i] = 0.5 * (1.0 - z);
        x[n - 1 - i] = 0.5 * (1.0 + z);
        w[i] = weight;
        w[n - 1 - i] = weight;
    }
    (x, w)
}

/// Gauss–Laguerre nodes and log weights for ∫_0^∞ e^{−x} f(x) dx.
pub fn gauss_laguerre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut logw = vec![0.0; n];
    let nf = n as f64;
    let mut z = 0.0;
    for i in 0..n {
        z = match i {
            0 => 3.0 / (1.0 + 2.4 * nf),
            1 => z + 15.0 / (1.0 + 2.5 * nf),
            _ => {
                let ai = (i - 1) as f64;
                z + ((1.0 + 2.55 * ai) / (1.9 * ai)) * (z - x[i - 2])
            }
        };
        let mut p1 = 0.0;
        let mut p2;
        let mut pp = 0.0;
        for _ in 0..200 {
            p1 = 1.0;
            p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = ((2.0 * jf + 1.0 - z) * p2 - jf * p3) / (jf + 1.0);
            }
            pp = nf * (p1 - p2) / z;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs() {
                break;
            }
        }
        let _ = p1;
        x[i] = z;
        // w = 1 / (z · pp² ) with the recurrence normalized so that L_n has
        // leading coefficient (−1)^n / n!.
        logw[i] = -(z.ln() + 2.0 * pp.abs().ln());
    }
    (x, logw)
}

fn check_sizes(example: &Example, params: &PointParams) -> Result<()> {
    let c = params.lambda.len();
    let d = params.beta.cols();
    let m = example.num_instances();
    if c == 0 || c > MAX_TAGS || m > MAX_INSTANCES || d > MAX_FEATURES {
        return Err(Error::SizeLimit(format!(
            "C = {c}, M = {m}, D = {d} (limits {MAX_TAGS}, {MAX_INSTANCES}, {MAX_FEATURES})"
        )));
    }
    if params.beta.rows() != c || params.w.len() != c {
        return Err(Error::Dimension("point parameters disagree on the tag count".into()));
    }
    if params.lambda.iter().any(|&l| !(l > 0.0)) || params.beta.as_slice().iter().any(|&b| !(b > 0.0)) {
        return Err(Error::Domain("rates and feature probabilities must be positive".into()));
    }
    if example
        .instances
        .iter()
        .any(|i| i.max_feature().is_some_and(|f| f >= d))
    {
        return Err(Error::Dimension("instance feature index out of range".into()));
    }
    Ok(())
}

/// ∫_simplex Π u^n / (λ·u)^C du by an `nodes`-point rule per coordinate.
fn simplex_integral(lambda: &[f64], counts: &[usize], nodes: usize) -> f64 {
    let integrand = |u: &[f64]| {
        let dot: f64 = lambda.iter().zip(u).map(|(l, x)| l * x).sum();
        let mut v = dot.powi(-(lambda.len() as i32));
        for (x, &k) in u.iter().zip(counts) {
            v *= x.powi(k as i32);
        }
        v
    };
    match lambda.len() {
        1 => integrand(&[1.0]),
        2 => {
            let (x, w) = gauss_legendre(nodes);
            x.iter().zip(&w).map(|(&s, &ws)| ws * integrand(&[s, 1.0 - s])).sum()
        }
        3 => {
            let (x, w) = gauss_legendre(nodes);
            let mut total = 0.0;
            for (&s, &ws) in x.iter().zip(&w) {
                for (&t, &wt) in x.iter().zip(&w) {
                    let u = [s, (1.0 - s) * t, (1.0 - s) * (1.0 - t)];
                    total += ws * wt * (1.0 - s) * integrand(&u);
                }
            }
            total
        }
        _ => unreachable!("size checked"),
    }
}

/// log E[Π_c θ̃_c^{n_c}] under independent Exp(λ_c) activities.
pub fn log_normalized_moment(lambda: &[f64], counts: &[usize]) -> Result<f64> {
    let c = lambda.len();
    if c == 0 || c > MAX_TAGS || counts.len() != c {
        return Err(Error::SizeLimit(format!("moment over {c} tags")));
    }
    let prefactor = log_gamma(c as f64)? + lambda.iter().map(|l| l.ln()).sum::<f64>();
    if c == 1 {
        return Ok(prefactor + simplex_integral(lambda, counts, 1).ln());
    }
    let mut nodes = START_NODES;
    let mut prev = simplex_integral(lambda, counts, nodes);
    loop {
        nodes *= 2;
        let next = simplex_integral(lambda, counts, nodes);
        if (next - prev).abs() <= AGREEMENT * next.abs() {
            return Ok(prefactor + next.ln());
        }
        if nodes >= MAX_NODES {
            return Err(Error::Convergence {
                what: "simplex quadrature",
                iterations: nodes,
                residual: (next - prev).abs() / next.abs(),
            });
        }
        prev = next;
    }
}

/// The same moment by a tensor Gauss–Laguerre rule over θ with `nodes`
/// points per tag.
pub fn log_normalized_moment_laguerre(lambda: &[f64], counts: &[usize], nodes: usize) -> Result<f64> {
    let c = lambda.len();
    if c == 0 || c > MAX_TAGS || counts.len() != c {
        return Err(Error::SizeLimit(format!("moment over {c} tags")));
    }
    let (x, logw) = gauss_laguerre(nodes);
    let mut terms = Vec::with_capacity(nodes.pow(c as u32));
    let mut idx = vec![0usize; c];
    loop {
        // θ_c = x / λ_c; the λ_c from the density cancels the Jacobian.
        let theta: Vec<f64> = idx.iter().zip(lambda).map(|(&i, &l)| x[i] / l).collect();
        let total: f64 = theta.iter().sum();
        let mut v: f64 = idx.iter().map(|&i| logw[i]).sum();
        for (t, &k) in theta.iter().zip(counts) {
            v += k as f64 * (t / total).ln();
        }
        terms.push(v);
        let mut pos = 0;
        loop {
            if pos == c {
                return Ok(log_sum_exp(&terms));
            }
            idx[pos] += 1;
            if idx[pos] < nodes {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

/// log p(X, z) summed over z, per assignment, in lexicographic z order.
fn joint_terms(example: &Example, params: &PointParams, labels: LabelTerm) -> Result<Vec<(Vec<usize>, f64)>> {
    check_sizes(example, params)?;
    let c = params.lambda.len();
    let m = example.num_instances();
    let inst_ll: Vec<Vec<f64>> = example
        .instances
        .iter()
        .map(|inst| {
            (0..c)
                .map(|t| {
                    inst.counts()
                        .iter()
                        .map(|&(d, x)| f64::from(x) * params.beta[(t, d)].ln())
                        .sum()
                })
                .collect()
        })
        .collect();
    let normalizers: Vec<f64> = (0..c).map(|t| params.beta.row(t).iter().sum::<f64>().ln()).collect();

    let mut out = Vec::with_capacity(c.pow(m as u32));
    let mut moments = std::collections::BTreeMap::new();
    let mut z = vec![0usize; m];
    loop {
        let mut counts = vec![0usize; c];
        z.iter().for_each(|&t| counts[t] += 1);
        let moment = match moments.get(&counts) {
            Some(&v) => v,
            None => {
                let v = log_normalized_moment(&params.lambda, &counts)?;
                moments.insert(counts.clone(), v);
                v
            }
        };
        let mut v = moment;
        for (mi, &t) in z.iter().enumerate() {
            let k = example.instances[mi].total() as f64;
            v += inst_ll[mi][t] - k * normalizers[t];
        }
        if labels == LabelTerm::Include {
            for t in 0..c {
                let a = params.w[t] * counts[t] as f64 / m as f64;
                let y = if example.has_label(t) { a } else { 0.0 };
                v += y - a.max(0.0) - (-a.abs()).exp().ln_1p();
            }
        }
        out.push((z.clone(), v));
        let mut pos = 0;
        loop {
            if pos == m {
                return Ok(out);
            }
            z[pos] += 1;
            if z[pos] < c {
                break;
            }
            z[pos] = 0;
            pos += 1;
        }
    }
}

/// log p(X [, y]) with θ and every z marginalized out.
pub fn exact_log_likelihood(example: &Example, params: &PointParams, labels: LabelTerm) -> Result<f64> {
    let terms: Vec<f64> = joint_terms(example, params, labels)?
        .into_iter()
        .map(|(_, v)| v)
        .collect();
    Ok(log_sum_exp(&terms))
}

/// Exact posterior p(z_m = c | X [, y]) for every instance, M×C.
pub fn exact_posterior_z(example: &Example, params: &PointParams, labels: LabelTerm) -> Result<Matrix> {
    let terms = joint_terms(example, params, labels)?;
    let c = params.lambda.len();
    let log_total = log_sum_exp(&terms.iter().map(|(_, v)| *v).collect::<Vec<_>>());
    let mut post = Matrix::zeros(example.num_instances(), c);
    for (z, v) in &terms {
        let p = (v - log_total).exp();
        for (mi, &t) in z.iter().enumerate() {
            post.row_mut(mi)[t] += p;
        }
    }
    Ok(post)
}

/// Root of the shape equation by plain bisection on [1e-8, 1e6].
pub fn root_bisection_eq10(phi_sum: f64, lambda: f64, rho: f64) -> Result<f64> {
    let a = lambda * rho;
    let f = |g: f64| shape_residual(g, phi_sum, a);
    let (mut lo, mut hi) = (1e-8, 1e6);
    let (f_lo, f_hi) = (f(lo), f(hi));
    if !(f_lo > 0.0 && f_hi < 0.0) {
        return Err(Error::InvalidInput(format!(
            "no sign change on [1e-8, 1e6] (residuals {f_lo:e}, {f_hi:e})"
        )));
    }
    loop {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm.abs() <= 1e-12 || mid <= lo || mid >= hi {
            return Ok(mid);
        }
        if fm > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}
