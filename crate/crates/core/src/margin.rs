//! Pairwise ranking constraints between relevant and irrelevant tags, the
//! working-set QP over them, and the cutting-plane loop that grows the
//! working set.
//!
//! A constraint (n, i, j) asks that tag i ∈ Y_n outscore tag j ∉ Y_n by a
//! unit margin: w_i a_ni − w_j a_nj ≥ 1 − ξ, with a_n = E_q[z̄_n]. Its feature
//! difference vector is Δ = a_ni e_i − a_nj e_j.

use std::collections::{BTreeMap, BTreeSet};

use log::warn;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{TrainConfig, VariationalState};

pub type ConstraintKey = (usize, usize, usize);

/// E_q[z̄_c] = (1/M) Σ_m φ_mc.
pub fn expected_zbar(state: &VariationalState) -> Vec<f64> {
    let m = state.num_instances() as f64;
    state.phi_sums().into_iter().map(|s| s / m).collect()
}

/// One working-set entry with its cached expected tag frequencies.
#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub n: usize,
    pub i: usize,
    pub j: usize,
    pub a_i: f64,
    pub a_j: f64,
}

impl Constraint {
    pub fn key(&self) -> ConstraintKey {
        (self.n, self.i, self.j)
    }

    /// w · Δ.
    pub fn margin(&self, w: &[f64]) -> f64 {
        w[self.i] * self.a_i - w[self.j] * self.a_j
    }

    /// ‖Δ‖², treating i and j as distinct coordinates.
    pub fn norm_sq(&self) -> f64 {
        self.a_i * self.a_i + self.a_j * self.a_j
    }

    pub fn slack(&self, w: &[f64]) -> f64 {
        (1.0 - self.margin(w)).max(0.0)
    }
}

/// Margin multipliers, the working set they live on, and the δ matrix they
/// induce.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DualState {
    pub alpha: BTreeMap<ConstraintKey, f64>,
    /// Constraints in insertion order.
    pub working_set: Vec<Constraint>,
    /// N×C.
    pub delta: Matrix,
}

impl DualState {
    pub fn empty(num_examples: usize, num_tags: usize) -> Self {
        DualState {
            alpha: BTreeMap::new(),
            working_set: Vec::new(),
            delta: Matrix::zeros(num_examples, num_tags),
        }
    }

    pub fn len(&self) -> usize {
        self.working_set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.working_set.is_empty()
    }
}

/// δ_nc = Σ_{j∉Y_n} α_n^{cj} for c ∈ Y_n and −Σ_{i∈Y_n} α_n^{ic} otherwise.
pub fn compute_delta<L: AsRef<[usize]>>(
    alpha: &BTreeMap<ConstraintKey, f64>,
    labels: &[L],
    num_tags: usize,
) -> Result<Matrix> {
    let mut delta = Matrix::zeros(labels.len(), num_tags);
    for (&(n, i, j), &a) in alpha {
        let valid = n < labels.len() && i < num_tags && j < num_tags && {
            let y = labels[n].as_ref();
            y.contains(&i) && !y.contains(&j)
        };
        if !valid {
            return Err(Error::InvalidInput(format!(
                "multiplier key ({n}, {i}, {j}) does not pair a relevant with an irrelevant tag"
            )));
        }
        let row = delta.row_mut(n);
        row[i] += a;
        row[j] -= a;
    }
    Ok(delta)
}

/// The relevant tag with the lowest score against the irrelevant tag with the
/// highest, together with the violation 1 − (s_i − s_j). `None` when the
/// violation does not exceed `eps`. Ties go to the smaller index.
pub fn most_violated_pair(scores: &[f64], labels: &[usize], eps: f64) -> Result<Option<(usize, usize, f64)>> {
    let c_count = scores.len();
    if labels.is_empty() || labels.len() >= c_count {
        return Err(Error::InvalidInput(format!(
            "ranking constraints need a proper nonempty label set ({} of {c_count} tags)",
            labels.len()
        )));
    }
    let relevant: BTreeSet<usize> = labels.iter().copied().collect();
    let mut best_i: Option<usize> = None;
    let mut best_j: Option<usize> = None;
    for (c, &s) in scores.iter().enumerate() {
        if relevant.contains(&c) {
            if best_i.is_none_or(|b| s < scores[b]) {
                best_i = Some(c);
            }
        } else if best_j.is_none_or(|b| s > scores[b]) {
            best_j = Some(c);
        }
    }
    let (i, j) = (best_i.expect("nonempty"), best_j.expect("nonempty"));
    let violation = 1.0 - (scores[i] - scores[j]);
    Ok((violation > eps).then_some((i, j, violation)))
}

/// Box bound c_n = ν₂ / (N |Y_n| |Y_n°|) on every multiplier of example n.
pub fn box_bound(nu2: f64, num_examples: usize, sizes: (usize, usize)) -> f64 {
    nu2 / (num_examples as f64 * sizes.0 as f64 * sizes.1 as f64)
}

/// Solution of the working-set QP.
#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub w: Vec<f64>,
    /// One multiplier per working-set entry, same order.
    pub alpha: Vec<f64>,
    pub sweeps: usize,
    /// Largest projected-gradient magnitude of the dual at exit.
    pub kkt_residual: f64,
}

/// (ν₁/2)‖w‖² + Σ c_n ξ over the working set, ξ recovered as the hinge.
pub fn restricted_objective(
    working_set: &[Constraint],
    w: &[f64],
    nu1: f64,
    nu2: f64,
    label_sizes: &[(usize, usize)],
) -> f64 {
    let n_total = label_sizes.len();
    let reg = 0.5 * nu1 * w.iter().map(|x| x * x).sum::<f64>();
    let slack: f64 = working_set
        .iter()
        .map(|k| box_bound(nu2, n_total, label_sizes[k.n]) * k.slack(w))
        .sum();
    reg + slack
}

fn projected_gradient(g: f64, a: f64, c: f64) -> f64 {
    if a <= 0.0 {
        g.max(0.0)
    } else if a >= c {
        (-g).max(0.0)
    } else {
        g.abs()
    }
}

/// Dual coordinate ascent on the working-set QP.
///
/// The dual is max Σ α − ‖Σ α Δ‖² / (2ν₁) over 0 ≤ α_k ≤ c_{n(k)}, and
/// w = Σ α Δ / ν₁. Coordinates are swept in working-set order until every
/// projected-gradient entry is at most `tol`. `warm` seeds the multipliers
/// (clipped into the box).
#[allow(clippy::too_many_arguments)]
pub fn solve_qp(
    working_set: &[Constraint],
    nu1: f64,
    nu2: f64,
    label_sizes: &[(usize, usize)],
    num_tags: usize,
    warm: Option<&[f64]>,
    max_sweeps: usize,
    tol: f64,
) -> Result<QpSolution> {
    if !(nu1 > 0.0) {
        return Err(Error::InvalidInput(format!("the margin QP needs nu1 > 0, got {nu1}")));
    }
    let n_total = label_sizes.len();
    let caps: Vec<f64> = working_set
        .iter()
        .map(|k| {
            if k.n >= n_total || k.i >= num_tags || k.j >= num_tags || k.i == k.j {
                Err(Error::InvalidInput(format!("malformed constraint {:?}", k.key())))
            } else {
                Ok(box_bound(nu2, n_total, label_sizes[k.n]))
            }
        })
        .collect::<Result<_>>()?;
    let mut alpha: Vec<f64> = match warm {
        Some(a) if a.len() == working_set.len() => a.iter().zip(&caps).map(|(&x, &c)| x.clamp(0.0, c)).collect(),
        Some(a) => {
            return Err(Error::Dimension(format!(
                "{} warm multipliers for {} constraints",
                a.len(),
                working_set.len()
            )))
        }
        None => vec![0.0; working_set.len()],
    };
    let mut w = vec![0.0; num_tags];
    for (k, &a) in working_set.iter().zip(&alpha) {
        w[k.i] += a * k.a_i / nu1;
        w[k.j] -= a * k.a_j / nu1;
    }

    let kkt = |w: &[f64], alpha: &[f64]| {
        working_set
            .iter()
            .zip(alpha)
            .zip(&caps)
            .map(|((k, &a), &c)| projected_gradient(1.0 - k.margin(w), a, c))
            .fold(0.0, f64::max)
    };

    let mut residual = kkt(&w, &alpha);
    let mut sweeps = 0;
    while residual > tol {
        if sweeps == max_sweeps {
            return Err(Error::Convergence {
                what: "margin QP",
                iterations: sweeps,
                residual,
            });
        }
        sweeps += 1;
        for (idx, k) in working_set.iter().enumerate() {
            let q = k.norm_sq() / nu1;
            let old = alpha[idx];
            let new = if q > 0.0 {
                (old + (1.0 - k.margin(&w)) / q).clamp(0.0, caps[idx])
            } else {
                // Δ = 0: the margin can never be met, the slack term is
                // linear in α with slope 1, so the box bound is optimal.
                caps[idx]
            };
            if new != old {
                let step = new - old;
                w[k.i] += step * k.a_i / nu1;
                w[k.j] -= step * k.a_j / nu1;
                alpha[idx] = new;
            }
        }
        residual = kkt(&w, &alpha);
    }
    Ok(QpSolution {
        w,
        alpha,
        sweeps,
        kkt_residual: residual,
    })
}

/// Restricted objective at the start of a cutting-plane round (new
/// constraints added at α = 0, weights unchanged) and after the re-solve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoundObjective {
    pub added: usize,
    pub before: f64,
    pub after: f64,
}

#[derive(Clone, Debug)]
pub struct CuttingPlaneResult {
    pub w: Vec<f64>,
    pub dual: DualState,
    pub rounds: Vec<RoundObjective>,
}

/// Examples that can carry ranking constraints, with (|Y|, |Y°|) for every
/// example (zeros for the excluded ones).
pub fn label_sizes(corpus: &Corpus) -> (Vec<bool>, Vec<(usize, usize)>) {
    let c = corpus.num_tags;
    corpus
        .examples
        .iter()
        .map(|ex| {
            let y = ex.labels().len();
            if y == 0 || y == c {
                (false, (0, 0))
            } else {
                (true, (y, c - y))
            }
        })
        .unzip()
}

/// Grows the working set by the most violated pair of each example and
/// re-solves the QP, until a round adds nothing or the round cap is hit.
///
/// A `warm` dual state from an earlier call has its cached frequencies
/// refreshed from `states` and is re-solved before new constraints are
/// sought. Without one, the search starts from `w_init`.
pub fn cutting_plane(
    corpus: &Corpus,
    states: &[VariationalState],
    w_init: &[f64],
    warm: Option<DualState>,
    cfg: &TrainConfig,
) -> Result<CuttingPlaneResult> {
    let c_count = corpus.num_tags;
    if states.len() != corpus.len() || w_init.len() != c_count {
        return Err(Error::Dimension(format!(
            "cutting plane: {} states, {} weights for {} examples x {c_count} tags",
            states.len(),
            w_init.len(),
            corpus.len()
        )));
    }
    let (eligible, sizes) = label_sizes(corpus);
    let skipped = eligible.iter().filter(|&&e| !e).count();
    if skipped > 0 {
        warn!("{skipped} example(s) with an empty or complete label set carry no ranking constraints");
    }
    let zbar: Vec<Vec<f64>> = states.iter().map(expected_zbar).collect();
    let refresh = |k: &mut Constraint| {
        k.a_i = zbar[k.n][k.i];
        k.a_j = zbar[k.n][k.j];
    };

    let mut dual = warm.unwrap_or_else(|| DualState::empty(corpus.len(), c_count));
    dual.working_set.retain(|k| k.n < corpus.len() && eligible[k.n]);
    dual.working_set.iter_mut().for_each(refresh);
    let mut alpha: Vec<f64> = dual
        .working_set
        .iter()
        .map(|k| dual.alpha.get(&k.key()).copied().unwrap_or(0.0))
        .collect();
    let mut w = w_init.to_vec();
    if !dual.working_set.is_empty() {
        let sol = solve_qp(
            &dual.working_set,
            cfg.nu1,
            cfg.nu2,
            &sizes,
            c_count,
            Some(&alpha),
            cfg.qp_max_sweeps,
            cfg.qp_tol,
        )?;
        w = sol.w;
        alpha = sol.alpha;
    }
    let mut present: BTreeSet<ConstraintKey> = dual.working_set.iter().map(Constraint::key).collect();

    let mut rounds = Vec::new();
    for _ in 0..cfg.cutting_plane_max_rounds {
        let mut added = 0;
        for n in (0..corpus.len()).filter(|&n| eligible[n]) {
            let scores: Vec<f64> = (0..c_count).map(|c| w[c] * zbar[n][c]).collect();
            if let Some((i, j, _)) = most_violated_pair(&scores, corpus.examples[n].labels(), cfg.violation_eps)? {
                if present.insert((n, i, j)) {
                    let mut k = Constraint {
                        n,
                        i,
                        j,
                        a_i: 0.0,
                        a_j: 0.0,
                    };
                    refresh(&mut k);
                    dual.working_set.push(k);
                    alpha.push(0.0);
                    added += 1;
                }
            }
        }
        if added == 0 {
            break;
        }
        let before = restricted_objective(&dual.working_set, &w, cfg.nu1, cfg.nu2, &sizes);
        let sol = solve_qp(
            &dual.working_set,
            cfg.nu1,
            cfg.nu2,
            &sizes,
            c_count,
            Some(&alpha),
            cfg.qp_max_sweeps,
            cfg.qp_tol,
        )?;
        w = sol.w;
        alpha = sol.alpha;
        let after = restricted_objective(&dual.working_set, &w, cfg.nu1, cfg.nu2, &sizes);
        rounds.push(RoundObjective { added, before, after });
    }

    dual.alpha = dual
        .working_set
        .iter()
        .zip(&alpha)
        .filter(|(_, &a)| a > 0.0)
        .map(|(k, &a)| (k.key(), a))
        .collect();
    let labels: Vec<&[usize]> = corpus.examples.iter().map(|e| e.labels()).collect();
    dual.delta = compute_delta(&dual.alpha, &labels, c_count)?;
    Ok(CuttingPlaneResult { w, dual, rounds })
}
