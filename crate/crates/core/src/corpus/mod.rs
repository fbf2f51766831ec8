//! Multi-instance multi-label corpora: examples are bags of sparse
//! feature-count instances, each carrying a set of tag labels.

mod io;
mod synth;

pub use io::{read_corpus, read_vocab, write_corpus, write_corpus_to, write_vocab};
pub use synth::{synthesize_corpus, BetaSupport, SynthConfig, TrueParams};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// One instance: a sparse bag of feature counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Instance {
    counts: Vec<(usize, u32)>,
    total: u64,
}

impl Instance {
    /// Builds an instance from `(feature, count)` pairs in any order.
    ///
    /// Counts must be positive and feature indices unique.
    pub fn new(mut counts: Vec<(usize, u32)>) -> Result<Self> {
        counts.sort_unstable_by_key(|&(d, _)| d);
        for pair in counts.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(Error::InvalidInput(format!(
                    "duplicate feature index {} in instance",
                    pair[0].0
                )));
            }
        }
        if let Some(&(d, _)) = counts.iter().find(|&&(_, x)| x == 0) {
            return Err(Error::InvalidInput(format!("feature {d} has zero count")));
        }
        let total = counts.iter().map(|&(_, x)| u64::from(x)).sum();
        Ok(Instance { counts, total })
    }

    /// `(feature, count)` pairs sorted by feature index.
    pub fn counts(&self) -> &[(usize, u32)] {
        &self.counts
    }

    /// Total number of feature occurrences K.
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn max_feature(&self) -> Option<usize> {
        self.counts.last().map(|&(d, _)| d)
    }
}

/// A bag of instances with its (possibly empty) label set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub id: String,
    pub instances: Vec<Instance>,
    labels: Vec<usize>,
}

impl Example {
    pub fn new(id: impl Into<String>, instances: Vec<Instance>, mut labels: Vec<usize>) -> Result<Self> {
        let id = id.into();
        if instances.is_empty() {
            return Err(Error::InvalidInput(format!("example {id:?} has no instances")));
        }
        labels.sort_unstable();
        labels.dedup();
        Ok(Example { id, instances, labels })
    }

    /// Sorted, duplicate-free tag indices.
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn has_label(&self, tag: usize) -> bool {
        self.labels.binary_search(&tag).is_ok()
    }

    pub fn num_instances(&self) -> usize {
        self.instances.len()
    }

    /// Dense 0/1 label indicator of length `num_tags`.
    pub fn label_indicator(&self, num_tags: usize) -> Vec<f64> {
        let mut y = vec![0.0; num_tags];
        for &t in &self.labels {
            y[t] = 1.0;
        }
        y
    }

    /// Copy with tag indices relabeled through `new_index[old] = new`.
    pub fn relabel(&self, new_index: &[usize]) -> Example {
        let mut labels: Vec<usize> = self.labels.iter().map(|&t| new_index[t]).collect();
        labels.sort_unstable();
        Example {
            id: self.id.clone(),
            instances: self.instances.clone(),
            labels,
        }
    }

    /// Copy with the label set cleared, as seen at prediction time.
    pub fn without_labels(&self) -> Example {
        Example {
            id: self.id.clone(),
            instances: self.instances.clone(),
            labels: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    pub examples: Vec<Example>,
    pub num_tags: usize,
    pub num_features: usize,
    pub tag_names: Option<Vec<String>>,
    pub feature_names: Option<Vec<String>>,
}

impl Corpus {
    pub fn new(num_tags: usize, num_features: usize, examples: Vec<Example>) -> Result<Self> {
        let corpus = Corpus {
            examples,
            num_tags,
            num_features,
            tag_names: None,
            feature_names: None,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Checks every index against the declared dimensions.
    pub fn validate(&self) -> Result<()> {
        if self.num_tags == 0 || self.num_features == 0 {
            return Err(Error::Dimension("corpus needs at least one tag and one feature".into()));
        }
        for ex in &self.examples {
            validate_example(ex, self.num_tags, self.num_features)?;
        }
        Ok(())
    }

    /// Mean label-set size, used to report how parsimonious the labels are.
    pub fn mean_labels_per_example(&self) -> f64 {
        if self.examples.is_empty() {
            return 0.0;
        }
        self.examples.iter().map(|e| e.labels().len()).sum::<usize>() as f64 / self.len() as f64
    }

    pub fn subset(&self, indices: &[usize]) -> Corpus {
        Corpus {
            examples: indices.iter().map(|&i| self.examples[i].clone()).collect(),
            num_tags: self.num_tags,
            num_features: self.num_features,
            tag_names: self.tag_names.clone(),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Relabels tags so that old tag `t` becomes `new_index[t]`.
    pub fn permute_tags(&self, new_index: &[usize]) -> Corpus {
        assert_eq!(new_index.len(), self.num_tags);
        let tag_names = self.tag_names.as_ref().map(|names| {
            let mut out = names.clone();
            for (old, &new) in new_index.iter().enumerate() {
                out[new] = names[old].clone();
            }
            out
        });
        Corpus {
            examples: self.examples.iter().map(|e| e.relabel(new_index)).collect(),
            num_tags: self.num_tags,
            num_features: self.num_features,
            tag_names,
            feature_names: self.feature_names.clone(),
        }
    }
}

pub(crate) fn validate_example(ex: &Example, num_tags: usize, num_features: usize) -> Result<()> {
    if let Some(&t) = ex.labels().iter().find(|&&t| t >= num_tags) {
        return Err(Error::Dimension(format!(
            "example {:?}: label {t} out of range for {num_tags} tags",
            ex.id
        )));
    }
    for inst in &ex.instances {
        if let Some(d) = inst.max_feature().filter(|&d| d >= num_features) {
            return Err(Error::Dimension(format!(
                "example {:?}: feature {d} out of range for {num_features} features",
                ex.id
            )));
        }
    }
    Ok(())
}

/// Train/test index sets of one cross-validation fold.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Fold {
    pub fn materialize(&self, corpus: &Corpus) -> (Corpus, Corpus) {
        (corpus.subset(&self.train), corpus.subset(&self.test))
    }
}

/// Seeded k-fold partition of `0..n`.
///
/// Indices are shuffled with a Fisher-Yates pass driven by ChaCha8 seeded
/// from `seed`; position `p` of the shuffled order goes to fold `p % folds`,
/// so fold sizes differ by at most one.
pub fn fold_indices(n: usize, folds: usize, seed: u64) -> Result<Vec<Fold>> {
    if folds < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 folds, got {folds}")));
    }
    if n < folds {
        return Err(Error::InvalidInput(format!(
            "cannot split {n} examples into {folds} folds"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut assignment = vec![0usize; n];
    for (pos, &idx) in order.iter().enumerate() {
        assignment[idx] = pos % folds;
    }
    Ok((0..folds)
        .map(|f| Fold {
            train: (0..n).filter(|&i| assignment[i] != f).collect(),
            test: (0..n).filter(|&i| assignment[i] == f).collect(),
        })
        .collect())
}

/// Splits a corpus into `folds` (train, test) pairs.
pub fn split_corpus(corpus: &Corpus, folds: usize, seed: u64) -> Result<Vec<(Corpus, Corpus)>> {
    Ok(fold_indices(corpus.len(), folds, seed)?
        .iter()
        .map(|f| f.materialize(corpus))
        .collect())
}
