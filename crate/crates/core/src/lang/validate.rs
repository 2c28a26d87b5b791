use crate::corpus::AnnotatedInstance;
use crate::matcher::MatchingModel;

use super::Rule;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Validation {
    Accepted,
    Discarded(String),
}

impl Validation {
    pub fn is_accepted(&self) -> bool {
        matches!(self, Validation::Accepted)
    }
}

/// Executes the rule body strictly on `reference`, binding each variable
/// to its literal's occurrences (or its explicit span). A rule that does
/// not hold on its own reference is discarded with the first failing
/// clause as the reason.
pub fn validate_rule(rule: &Rule, reference: &AnnotatedInstance) -> Validation {
    let model = match MatchingModel::compile(rule, reference, None) {
        Ok(m) => m,
        Err(e) => return Validation::Discarded(e.to_string()),
    };
    match model.check_reference(reference) {
        Ok(()) => Validation::Accepted,
        Err(reason) => Validation::Discarded(reason),
    }
}
