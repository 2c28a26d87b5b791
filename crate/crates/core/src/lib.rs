//! Compositional explanations as training signal.
//!
//! Explanations written in a small controlled language are parsed into
//! rules (`lang`), generalized over an annotated corpus by strict or soft
//! matching (`matcher`), and used to refine a small classifier through
//! attribution and interaction regularization (`refine`). `eval` holds the
//! classification and fairness metrics, `pipeline` chains the stages and
//! `synthetic` generates a planted-bias test world.
//!
//! Numeric code is generic over [`Scalar`]; the aliases below fix it to
//! `f64`, which is what the pipeline uses.

// `!(x >= 0)` style checks also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod lang;
pub mod matcher;
pub mod pipeline;
pub mod refine;
pub mod scalar;
pub mod synthetic;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Model = refine::ModelState<f64>;
pub type Example = refine::Example<f64>;
pub type LossConfig = refine::LossConfig<f64>;
pub type ReplacementSet = refine::ReplacementSet<f64>;
pub type LabeledSet = refine::LabeledSet<f64>;
