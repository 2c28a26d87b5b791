//! Rule execution over annotated corpora.
//!
//! A rule body compiles into a [`MatchingModel`] built from individuality
//! units (variable grounding), interaction units (relations) and
//! Łukasiewicz connectives. Strict execution is boolean; soft execution
//! scores every leaf in [0, 1] and folds the scores through the body.

mod engine;
mod io;
pub mod logic;
mod negatives;
mod units;

pub use engine::{
    execute_rule, generalize, AdviceTarget, Binding, Bound, MatchParams, MatchRecord,
    MatchingModel, Mode,
};
pub use io::{read_matches, write_matches, MatchSummary};
pub use logic::{interaction_soft, soft_and, soft_or};
pub use negatives::{balance_negatives, NEGATIVE_RULE_ID};
pub use units::{individuality_soft, individuality_strict, interaction_strict, InstanceView};
