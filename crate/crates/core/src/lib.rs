//! Exponential-multinomial mixture (EMM) classifier for many-class,
//! multi-label, multi-instance data.
//!
//! Examples are bags of sparse count vectors (instances) with a set of tags.
//! Each tag carries an exponentially distributed activity; instances pick a
//! tag in proportion to the activities and draw features from that tag's
//! multinomial. Inference is mean-field variational; weights are learned
//! either by a closed-form regularized fit or by a pairwise max-margin
//! cutting-plane scheme.

// `!(x > 0.0)` rejects NaN together with out-of-range values, and the
// numerical kernels index several parallel arrays by tag.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod corpus;
pub mod error;
pub mod eval;
pub mod inference;
pub mod learning;
pub mod margin;
pub mod matrix;
pub mod model;
pub mod numerics;
pub mod oracle;
pub mod predict;
pub mod registry;

pub use error::{Error, Result};
pub use matrix::Matrix;
