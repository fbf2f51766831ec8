//! Top-k micro-F1, metrics tables and cross-validation.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use log::{info, warn};
use serde::Serialize;

use crate::corpus::{fold_indices, Corpus};
use crate::error::{Error, Result};
use crate::learning::train;
use crate::model::{ModelParams, TrainConfig};
use crate::predict::{predict_captions, PredictionResult};

/// Micro-averaged F1 of the top `k` ranked tags against the true label sets.
///
/// Hits are pooled over examples; precision divides by N·k and recall by the
/// total number of true labels.
pub fn topk_f1<L: AsRef<[usize]>>(results: &[PredictionResult], truths: &[L], k: usize) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::InvalidInput("no predictions to score".into()));
    }
    if results.len() != truths.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} label sets",
            results.len(),
            truths.len()
        )));
    }
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    let mut hits = 0usize;
    let mut relevant = 0usize;
    for (r, y) in results.iter().zip(truths) {
        let y = y.as_ref();
        if y.is_empty() {
            return Err(Error::InvalidInput(format!("example {:?} has no true labels", r.id)));
        }
        relevant += y.len();
        hits += r.ranked_tags.iter().take(k).filter(|t| y.contains(t)).count();
    }
    // 2PR/(P+R) with P = hits/(N·k) and R = hits/relevant, reduced to a
    // single division.
    Ok(2.0 * hits as f64 / (results.len() * k + relevant) as f64)
}

/// Replaces every k above the tag count by the tag count.
pub fn clamp_ks(ks: &[usize], num_tags: usize) -> Vec<usize> {
    ks.iter()
        .map(|&k| {
            if k > num_tags {
                warn!("k = {k} exceeds the {num_tags} tags; using k = {num_tags}");
                num_tags
            } else {
                k
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRow {
    pub fold: usize,
    pub k: usize,
    pub f1: f64,
    pub n_examples: usize,
}

/// Scores caption predictions on a labeled corpus for each k. Rows carry
/// `fold`.
pub fn evaluate(
    corpus: &Corpus,
    params: &ModelParams,
    ks: &[usize],
    cfg: &TrainConfig,
    fold: usize,
) -> Result<Vec<MetricsRow>> {
    let results = predict_captions(corpus, params, cfg)?;
    score(&results, corpus, ks, fold)
}

fn score(results: &[PredictionResult], corpus: &Corpus, ks: &[usize], fold: usize) -> Result<Vec<MetricsRow>> {
    let truths: Vec<&[usize]> = corpus.examples.iter().map(|e| e.labels()).collect();
    clamp_ks(ks, corpus.num_tags)
        .into_iter()
        .map(|k| {
            Ok(MetricsRow {
                fold,
                k,
                f1: topk_f1(results, &truths, k)?,
                n_examples: results.len(),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub k: usize,
    pub mean_f1: f64,
    pub std_f1: f64,
}

/// Mean and sample standard deviation of F1 per k, in order of first
/// appearance.
pub fn summarize(rows: &[MetricsRow]) -> Vec<SummaryRow> {
    let mut ks: Vec<usize> = Vec::new();
    for r in rows {
        if !ks.contains(&r.k) {
            ks.push(r.k);
        }
    }
    ks.into_iter()
        .map(|k| {
            let v: Vec<f64> = rows.iter().filter(|r| r.k == k).map(|r| r.f1).collect();
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let std = if v.len() > 1 {
                (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            SummaryRow {
                k,
                mean_f1: mean,
                std_f1: std,
            }
        })
        .collect()
}

/// Trains on all but one fold and scores the held-out fold, for every fold.
pub fn cross_validate(
    corpus: &Corpus,
    ks: &[usize],
    folds: usize,
    seed: u64,
    cfg: &TrainConfig,
) -> Result<Vec<MetricsRow>> {
    let mut rows = Vec::new();
    for (f, fold) in fold_indices(corpus.len(), folds, seed)?.iter().enumerate() {
        let (train_part, test_part) = fold.materialize(corpus);
        let (params, _) = train(&train_part, cfg)?;
        rows.extend(evaluate(&test_part, &params, ks, cfg, f)?);
    }
    Ok(rows)
}

/// (ν₁, ν₂, mean F1) for one grid point.
pub type GridScore = (f64, f64, f64);

/// Cross-validated grid search over (ν₁, ν₂), scored by mean top-`k` F1.
/// Returns the winning pair and the mean score of every grid point, in grid
/// order. Earlier grid points win ties.
pub fn tune_penalties(
    corpus: &Corpus,
    cfg: &TrainConfig,
    nu1_grid: &[f64],
    nu2_grid: &[f64],
    folds: usize,
    seed: u64,
    k: usize,
) -> Result<((f64, f64), Vec<GridScore>)> {
    if nu1_grid.is_empty() || nu2_grid.is_empty() {
        return Err(Error::InvalidInput("the penalty grid is empty".into()));
    }
    let mut table = Vec::new();
    let mut best: Option<(f64, f64, f64)> = None;
    for &nu1 in nu1_grid {
        for &nu2 in nu2_grid {
            let trial = TrainConfig {
                nu1,
                nu2,
                ..cfg.clone()
            };
            let rows = cross_validate(corpus, &[k], folds, seed, &trial)?;
            let mean = summarize(&rows)[0].mean_f1;
            info!("nu1 = {nu1}, nu2 = {nu2}: mean top-{k} F1 {mean:.4}");
            table.push((nu1, nu2, mean));
            if best.is_none_or(|b| mean > b.2) {
                best = Some((nu1, nu2, mean));
            }
        }
    }
    let (nu1, nu2, _) = best.expect("grid is nonempty");
    Ok(((nu1, nu2), table))
}

pub const DEFAULT_PENALTY_GRID: [f64; 3] = [0.1, 1.0, 10.0];

/// One JSON record per row.
pub fn write_metrics(rows: &[MetricsRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    for r in rows {
        writeln!(out, "{}", serde_json::to_string(r).expect("rows serialize")).map_err(io)?;
    }
    out.flush().map_err(io)
}

/// CSV with header `k,mean_f1,std_f1`.
pub fn write_summary_csv(rows: &[SummaryRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(out, "k,mean_f1,std_f1").map_err(io)?;
    for r in rows {
        writeln!(out, "{},{},{}", r.k, r.mean_f1, r.std_f1).map_err(io)?;
    }
    out.flush().map_err(io)
}
