//! Canonical text form of a rule. Re-parsing the output against the same
//! reference instance yields an equal [`Rule`].

use std::fmt::Write;

use super::ast::*;
use crate::corpus::Polarity;

fn quote(lit: &str) -> String {
    if lit.contains('\'') {
        format!("\"{lit}\"")
    } else {
        format!("'{lit}'")
    }
}

fn marker(m: Softness) -> &'static str {
    match m {
        Softness::Default => "",
        Softness::Soft => " [soft]",
        Softness::Strict => " [strict]",
    }
}

fn characteristic(c: &Characteristic) -> String {
    match c {
        Characteristic::Ner(t) => format!("@NER({t})"),
        Characteristic::Pos(t) => format!("@POS({t})"),
        Characteristic::Sentiment(Polarity::Positive) => "a positive word".into(),
        Characteristic::Sentiment(Polarity::Negative) => "a negative word".into(),
        Characteristic::Sentiment(Polarity::Neutral) => "a neutral word".into(),
        Characteristic::Identity => "an identity term".into(),
        Characteristic::Hateful => "a hateful word".into(),
    }
}

fn leaf(l: &Leaf) -> String {
    let body = match &l.pred {
        LeafPredicate::Existence { var, literal } => format!("{var} is {}", quote(literal)),
        LeafPredicate::Characteristic { var, kind } => format!("{var} is {}", characteristic(kind)),
        LeafPredicate::Relation { a, b, rel } => match rel {
            Relation::ImmediatelyBefore => format!("{a} is immediately before {b}"),
            Relation::WithinBefore(k) => format!("{a} is within {k} words before {b}"),
            Relation::WithinAfter(k) => format!("{a} is within {k} words after {b}"),
            Relation::Modifies => format!("{a} modifies {b}"),
            Relation::SubjectOf => format!("{a} is the subject of {b}"),
            Relation::DependencyWithin(k) => format!("{a} is within {k} dependency hops of {b}"),
        },
    };
    format!("{body}{}", marker(l.marker))
}

fn expr(e: &PredicateExpr, nested: bool) -> String {
    match e {
        PredicateExpr::Leaf(l) => leaf(l),
        PredicateExpr::And(c) | PredicateExpr::Or(c) => {
            let sep = if matches!(e, PredicateExpr::And(_)) {
                " and "
            } else {
                " or "
            };
            let inner = c
                .iter()
                .map(|x| expr(x, true))
                .collect::<Vec<_>>()
                .join(sep);
            if nested {
                format!("({inner})")
            } else {
                inner
            }
        }
    }
}

fn class_name(classes: &ClassList, c: usize) -> String {
    classes
        .name(c)
        .map(str::to_string)
        .unwrap_or_else(|| c.to_string())
}

impl Rule {
    /// Renders the rule in the explanation language.
    pub fn to_text(&self, classes: &ClassList) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Rule: {}", self.id);
        let _ = writeln!(out, "Reference: {}", self.ref_instance);
        let top: &[PredicateExpr] = match &self.body {
            PredicateExpr::And(c) => c,
            other => std::slice::from_ref(other),
        };
        for child in top {
            if let PredicateExpr::And(c) | PredicateExpr::Or(c) = child {
                if c.is_empty() {
                    continue;
                }
            }
            let _ = writeln!(out, "{}.", expr(child, false));
        }
        for (name, decl) in &self.vars {
            if decl.explicit {
                let _ = writeln!(
                    out,
                    "{name} = tokens {}..{}.",
                    decl.span.start, decl.span.end
                );
            }
        }
        let _ = writeln!(out, "Label: {}.", class_name(classes, self.noisy_label));
        for atom in &self.head {
            let (what, class, dir) = match atom {
                AdviceAtom::Attr { var, class, dir } => {
                    (format!("Attribution score of {var}"), class, dir)
                }
                AdviceAtom::Inter { a, b, class, dir } => {
                    (format!("Interaction score between {a} and {b}"), class, dir)
                }
            };
            let dir = match dir {
                Direction::Increase => "increased",
                Direction::Decrease => "decreased",
            };
            let _ = writeln!(
                out,
                "{what} for {} should be {dir}.",
                class_name(classes, *class)
            );
        }
        out
    }
}
