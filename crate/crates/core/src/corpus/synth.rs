//! Synthetic corpora drawn from the generative process of the model.
//!
//! Random numbers come from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded with
//! `seed_from_u64(config.seed)`. Draw order:
//!
//! 1. for each tag, the feature distribution: independent
//!    `Gamma(beta_concentration, 1)` weights over the tag's support, normalized;
//! 2. for each example: `M` uniform on the instance range; `θ_c = E_c / λ_c`
//!    with `E_c ~ Exp(1)` for every tag in index order;
//! 3. for each instance: `z` by inverse CDF over `θ/‖θ‖₁`, `K` uniform on the
//!    feature range, then `K` features by inverse CDF over row `z`;
//! 4. for each tag, `y_c = 1` with probability `σ(w_c z̄_c + label_bias)`.
//!    If no tag fires, the most frequent instance tag is forced on.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma};
use serde::{Deserialize, Serialize};

use super::{Corpus, Example, Instance};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BetaSupport {
    /// Every tag may emit every feature.
    Full,
    /// Tag `c` emits only features in block `c` of an even partition of
    /// `0..D`; requires `D >= C`.
    Disjoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_tags: usize,
    pub num_features: usize,
    pub num_examples: usize,
    /// Inclusive range for the number of instances per example.
    pub instances: (usize, usize),
    /// Inclusive range for the number of feature draws per instance.
    pub features_per_instance: (usize, usize),
    /// Exponential rates, one per tag.
    pub lambda: Vec<f64>,
    pub beta_concentration: f64,
    pub beta_support: BetaSupport,
    /// Label weights, one per tag.
    pub w: Vec<f64>,
    /// Offset added to every label energy; 0 gives the plain logistic rule.
    pub label_bias: f64,
    pub seed: u64,
}

impl SynthConfig {
    /// Uniform rates and weights with common defaults for the rest.
    pub fn uniform(num_tags: usize, num_features: usize, num_examples: usize, seed: u64) -> Self {
        SynthConfig {
            num_tags,
            num_features,
            num_examples,
            instances: (3, 8),
            features_per_instance: (10, 30),
            lambda: vec![1.0; num_tags],
            beta_concentration: 0.1,
            beta_support: BetaSupport::Full,
            w: vec![5.0; num_tags],
            label_bias: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.num_tags == 0 || self.num_features == 0 {
            return bad("synthetic corpus needs at least one tag and one feature".into());
        }
        for (name, (lo, hi)) in [("instance", self.instances), ("feature", self.features_per_instance)] {
            if lo == 0 || lo > hi {
                return bad(format!("{name} range [{lo}, {hi}] must satisfy 1 <= min <= max"));
            }
        }
        if self.lambda.len() != self.num_tags || self.w.len() != self.num_tags {
            return bad(format!("lambda and w must have {} entries", self.num_tags));
        }
        if self.lambda.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return bad("every lambda must be positive and finite".into());
        }
        if self.w.iter().any(|w| !w.is_finite()) || !self.label_bias.is_finite() {
            return bad("w and label_bias must be finite".into());
        }
        if !(self.beta_concentration > 0.0 && self.beta_concentration.is_finite()) {
            return bad("beta_concentration must be positive".into());
        }
        if self.beta_support == BetaSupport::Disjoint && self.num_features < self.num_tags {
            return bad("disjoint supports need at least as many features as tags".into());
        }
        Ok(())
    }

    /// Feature range owned by `tag` under [`BetaSupport::Disjoint`].
    pub fn support_block(&self, tag: usize) -> std::ops::Range<usize> {
        match self.beta_support {
            BetaSupport::Full => 0..self.num_features,
            BetaSupport::Disjoint => {
                let lo = tag * self.num_features / self.num_tags;
                let hi = (tag + 1) * self.num_features / self.num_tags;
                lo..hi
            }
        }
    }
}

/// Ground truth behind a synthetic corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrueParams {
    pub lambda: Vec<f64>,
    pub beta: Matrix,
    pub w: Vec<f64>,
    /// Unnormalized tag proportions per example.
    pub theta: Vec<Vec<f64>>,
    /// Instance tags per example.
    pub z: Vec<Vec<usize>>,
}

fn sample_index<R: Rng>(rng: &mut R, weights: &[f64], total: f64) -> usize {
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // u landed in the rounding gap at the top; take the last nonzero weight.
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(weights.len() - 1)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn synthesize_corpus(config: &SynthConfig) -> Result<(Corpus, TrueParams)> {
    config.validate()?;
    let (c_count, d_count) = (config.num_tags, config.num_features);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let gamma = Gamma::new(config.beta_concentration, 1.0)
        .map_err(|e| Error::InvalidInput(format!("beta_concentration: {e}")))?;

    let mut beta = Matrix::zeros(c_count, d_count);
    for c in 0..c_count {
        let block = config.support_block(c);
        let row = beta.row_mut(c);
        let mut sum = 0.0;
        for d in block.clone() {
            // Small concentrations can underflow to exactly zero.
            row[d] = gamma.sample(&mut rng).max(f64::MIN_POSITIVE);
            sum += row[d];
        }
        for d in block {
            row[d] /= sum;
        }
    }

    let mut examples = Vec::with_capacity(config.num_examples);
    let mut thetas = Vec::with_capacity(config.num_examples);
    let mut zs = Vec::with_capacity(config.num_examples);
    let mut feature_counts = vec![0u32; d_count];
    for n in 0..config.num_examples {
        let m_count = rng.random_range(config.instances.0..=config.instances.1);
        let theta: Vec<f64> = config
            .lambda
            .iter()
            .map(|&l| {
                let e: f64 = Exp1.sample(&mut rng);
                e / l
            })
            .collect();
        let theta_sum: f64 = theta.iter().sum();

        let mut instances = Vec::with_capacity(m_count);
        let mut z = Vec::with_capacity(m_count);
        for _ in 0..m_count {
            let tag = sample_index(&mut rng, &theta, theta_sum);
            let k = rng.random_range(config.features_per_instance.0..=config.features_per_instance.1);
            feature_counts.iter_mut().for_each(|x| *x = 0);
            let row = beta.row(tag);
            for _ in 0..k {
                feature_counts[sample_index(&mut rng, row, 1.0)] += 1;
            }
            let counts = feature_counts
                .iter()
                .enumerate()
                .filter(|(_, &x)| x > 0)
                .map(|(d, &x)| (d, x))
                .collect();
            instances.push(Instance::new(counts)?);
            z.push(tag);
        }

        let mut zbar = vec![0.0; c_count];
        for &t in &z {
            zbar[t] += 1.0 / m_count as f64;
        }
        let mut labels: Vec<usize> = (0..c_count)
            .filter(|&c| rng.random::<f64>() < sigmoid(config.w[c] * zbar[c] + config.label_bias))
            .collect();
        if labels.is_empty() {
            let mut best = 0;
            for c in 1..c_count {
                if zbar[c] > zbar[best] {
                    best = c;
                }
            }
            labels.push(best);
        }
        examples.push(Example::new(format!("ex{n:06}"), instances, labels)?);
        thetas.push(theta);
        zs.push(z);
    }

    let corpus = Corpus::new(c_count, d_count, examples)?;
    let truth = TrueParams {
        lambda: config.lambda.clone(),
        beta,
        w: config.w.clone(),
        theta: thetas,
        z: zs,
    };
    Ok((corpus, truth))
}
