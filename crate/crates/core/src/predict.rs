//! Tag prediction for whole examples and for individual instances.

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{Corpus, Example};
use crate::error::{Error, Result};
use crate::inference::{e_step, InferenceMode};
use crate::matrix::Matrix;
use crate::model::{BetaTable, ModelParams, TrainConfig, VariationalState};

/// MAP activity per tag, [(γ_c − 1) ρ_c]⁺. Tags with γ_c ≤ 1 get exactly 0.
pub fn map_theta(gamma: &[f64], rho: &[f64]) -> Vec<f64> {
    gamma
        .iter()
        .zip(rho)
        .map(|(&g, &r)| if g > 1.0 { (g - 1.0) * r } else { 0.0 })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PredictionResult {
    pub id: String,
    /// Distribution over tags built from the positive part of the raw scores.
    pub tag_scores: Vec<f64>,
    /// w_c θ̂_c.
    pub raw_scores: Vec<f64>,
    /// All tags by raw score, highest first, ties by index.
    pub ranked_tags: Vec<usize>,
    /// Tags with a positive MAP activity.
    pub support: Vec<usize>,
}

/// Orders tag indices by score, highest first; equal scores keep index order.
pub fn rank_by_score(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Scores an inferred state: s_c = w_c θ̂_c.
///
/// The reported distribution is max(s, 0) normalized. When no score is
/// positive it is uniform over the support, or over every tag if the support
/// is empty.
pub fn caption_from_state(id: &str, state: &VariationalState, w: &[f64]) -> PredictionResult {
    let theta = map_theta(&state.gamma, &state.rho);
    let raw: Vec<f64> = theta.iter().zip(w).map(|(t, w)| t * w).collect();
    let support: Vec<usize> = (0..theta.len()).filter(|&c| theta[c] > 0.0).collect();
    let positive: f64 = raw.iter().map(|s| s.max(0.0)).sum();
    let tag_scores = if positive > 0.0 {
        raw.iter().map(|s| s.max(0.0) / positive).collect()
    } else if !support.is_empty() {
        let p = 1.0 / support.len() as f64;
        let mut v = vec![0.0; theta.len()];
        support.iter().for_each(|&c| v[c] = p);
        v
    } else {
        vec![1.0 / theta.len() as f64; theta.len()]
    };
    PredictionResult {
        id: id.to_string(),
        tag_scores,
        ranked_tags: rank_by_score(&raw),
        raw_scores: raw,
        support,
    }
}

/// Infers an example's tags with its labels hidden.
pub fn predict_caption(example: &Example, params: &ModelParams, cfg: &TrainConfig) -> Result<PredictionResult> {
    let beta = BetaTable::expected(&params.mu);
    let state = e_step(example, params, &beta, None, InferenceMode::Test, cfg)?;
    Ok(caption_from_state(&example.id, &state, &params.w))
}

/// [`predict_caption`] for every example, in corpus order.
pub fn predict_captions(corpus: &Corpus, params: &ModelParams, cfg: &TrainConfig) -> Result<Vec<PredictionResult>> {
    params.check_corpus(corpus)?;
    let beta = BetaTable::expected(&params.mu);
    corpus
        .examples
        .par_iter()
        .map(|ex| {
            let state = e_step(ex, params, &beta, None, InferenceMode::Test, cfg)?;
            Ok(caption_from_state(&ex.id, &state, &params.w))
        })
        .collect()
}

/// Tag responsibilities per instance, M×C.
///
/// With `use_labels` the example's labels enter inference (margin
/// multipliers at zero); otherwise inference runs as for captions.
pub fn predict_regions(example: &Example, params: &ModelParams, use_labels: bool, cfg: &TrainConfig) -> Result<Matrix> {
    if use_labels && example.labels().is_empty() {
        return Err(Error::InvalidInput(format!(
            "example {:?} has no labels to condition on",
            example.id
        )));
    }
    let mode = if use_labels {
        InferenceMode::Train
    } else {
        InferenceMode::Test
    };
    let beta = BetaTable::expected(&params.mu);
    Ok(e_step(example, params, &beta, None, mode, cfg)?.phi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Instance;

    #[test]
    fn map_theta_examples() {
        assert_eq!(map_theta(&[3.0, 0.8, 1.0], &[0.5, 2.0, 7.0]), vec![1.0, 0.0, 0.0]);
    }

    fn state(gamma: Vec<f64>, rho: Vec<f64>) -> VariationalState {
        let c = gamma.len();
        VariationalState {
            gamma,
            rho,
            phi: Matrix::filled(1, c, 1.0 / c as f64),
        }
    }

    #[test]
    fn caption_scores() {
        let r = caption_from_state("x", &state(vec![2.0, 0.5], vec![1.0, 1.0]), &[2.0, 5.0]);
        assert_eq!(r.raw_scores, vec![2.0, 0.0]);
        assert_eq!(r.tag_scores, vec![1.0, 0.0]);
        assert_eq!(r.ranked_tags, vec![0, 1]);
        assert_eq!(r.support, vec![0]);
    }

    #[test]
    fn caption_fallbacks() {
        let r = caption_from_state("x", &state(vec![0.5; 4], vec![1.0; 4]), &[1.0; 4]);
        assert_eq!(r.tag_scores, vec![0.25; 4]);
        assert_eq!(r.ranked_tags, vec![0, 1, 2, 3]);
        let r = caption_from_state("x", &state(vec![2.0, 3.0, 0.5], vec![1.0; 3]), &[-1.0, -1.0, 1.0]);
        assert_eq!(r.tag_scores, vec![0.5, 0.5, 0.0]);
        assert_eq!(r.ranked_tags, vec![2, 0, 1]);
    }

    #[test]
    fn ranking_is_scale_invariant() {
        let s = [0.3, 1.2, 0.3, -0.5, 2.0];
        let scaled: Vec<f64> = s.iter().map(|x| x * 7.5).collect();
        assert_eq!(rank_by_score(&s), rank_by_score(&scaled));
        assert_eq!(rank_by_score(&s), vec![4, 1, 0, 2, 3]);
    }

    #[test]
    fn single_tag_regions() {
        let params = ModelParams::with_point_beta(vec![1.0], &Matrix::from_rows(&[vec![0.5, 0.5]]), vec![1.0]);
        let ex = Example::new(
            "a",
            vec![
                Instance::new(vec![(0, 2)]).unwrap(),
                Instance::new(vec![(1, 1)]).unwrap(),
            ],
            vec![0],
        )
        .unwrap();
        let cfg = TrainConfig::default();
        for use_labels in [false, true] {
            let phi = predict_regions(&ex, &params, use_labels, &cfg).unwrap();
            assert!(phi.as_slice().iter().all(|&p| p == 1.0));
        }
        assert!(predict_regions(&ex.without_labels(), &params, true, &cfg).is_err());
    }
}
