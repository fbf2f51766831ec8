//! Special functions and stable reductions.
//!
//! The polygamma family is evaluated by recurring the argument upward until
//! it is at least [`ASYMPTOTIC_CUTOFF`], applying the asymptotic (Bernoulli)
//! series there, and folding the recurrence terms back in.

use crate::error::{Error, Result};

const ASYMPTOTIC_CUTOFF: f64 = 10.0;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

fn check_positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "{name} requires a positive finite argument, got {x}"
        )))
    }
}

/// Digamma function Ψ(x) for x > 0.
pub fn digamma(x: f64) -> Result<f64> {
    check_positive("digamma", x)?;
    Ok(digamma_unchecked(x))
}

/// Trigamma function Ψ'(x) for x > 0.
pub fn trigamma(x: f64) -> Result<f64> {
    check_positive("trigamma", x)?;
    Ok(trigamma_unchecked(x))
}

/// Tetragamma function Ψ''(x) for x > 0.
pub fn tetragamma(x: f64) -> Result<f64> {
    check_positive("tetragamma", x)?;
    Ok(tetragamma_unchecked(x))
}

/// ln Γ(x) for x > 0.
pub fn log_gamma(x: f64) -> Result<f64> {
    check_positive("log_gamma", x)?;
    Ok(log_gamma_unchecked(x))
}

pub(crate) fn digamma_unchecked(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < ASYMPTOTIC_CUTOFF {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32760.0 - inv2 / 12.0))))));
    acc + x.ln() - 0.5 * inv - series
}

pub(crate) fn trigamma_unchecked(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < ASYMPTOTIC_CUTOFF {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let tail = inv
        * inv2
        * (1.0 / 6.0
            - inv2
                * (1.0 / 30.0
                    - inv2
                        * (1.0 / 42.0
                            - inv2 * (1.0 / 30.0 - inv2 * (5.0 / 66.0 - inv2 * (691.0 / 2730.0 - inv2 * 7.0 / 6.0))))));
    acc + inv + 0.5 * inv2 + tail
}

pub(crate) fn tetragamma_unchecked(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < ASYMPTOTIC_CUTOFF {
        acc -= 2.0 / (x * x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let tail = inv2
        * inv2
        * (-0.5
            + inv2
                * (1.0 / 6.0
                    - inv2
                        * (1.0 / 6.0
                            - inv2 * (3.0 / 10.0 - inv2 * (5.0 / 6.0 - inv2 * (691.0 / 210.0 - inv2 * 35.0 / 2.0))))));
    acc - inv2 - inv2 * inv + tail
}

pub(crate) fn log_gamma_unchecked(mut x: f64) -> f64 {
    let mut shift = 1.0;
    while x < ASYMPTOTIC_CUTOFF {
        shift *= x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv
        * (1.0 / 12.0
            - inv2
                * (1.0 / 360.0
                    - inv2
                        * (1.0 / 1260.0
                            - inv2
                                * (1.0 / 1680.0 - inv2 * (1.0 / 1188.0 - inv2 * (691.0 / 360360.0 - inv2 / 156.0))))));
    (x - 0.5) * x.ln() - x + HALF_LN_2PI + series - shift.ln()
}

/// Exponentiates and normalizes log-weights onto the probability simplex.
///
/// Entries may be `-inf` (zero weight) but not all of them.
pub fn log_normalize(log_values: &[f64]) -> Result<Vec<f64>> {
    let mut out = log_values.to_vec();
    log_normalize_in_place(&mut out)?;
    Ok(out)
}

/// In-place variant of [`log_normalize`]; returns the log normalizer.
pub fn log_normalize_in_place(values: &mut [f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidInput("log_normalize of an empty sequence".into()));
    }
    let mut max = f64::NEG_INFINITY;
    for &v in values.iter() {
        if v.is_nan() || v == f64::INFINITY {
            return Err(Error::Domain(format!("log_normalize got non-finite value {v}")));
        }
        max = max.max(v);
    }
    if max == f64::NEG_INFINITY {
        return Err(Error::Domain("log_normalize: every entry is -inf".into()));
    }
    let mut sum = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in values.iter_mut() {
        *v /= sum;
    }
    Ok(max + sum.ln())
}

/// ln Σ exp(values), `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// x ln x with the 0 ln 0 = 0 convention.
pub(crate) fn xlogx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}
