use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{Polarity, Span};

/// Semantic type tested by a characteristic clause.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Characteristic {
    Ner(String),
    Pos(String),
    Sentiment(Polarity),
    Identity,
    Hateful,
}

impl fmt::Display for Characteristic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Characteristic::Ner(t) => write!(f, "NER={t}"),
            Characteristic::Pos(t) => write!(f, "POS={t}"),
            Characteristic::Sentiment(p) => write!(f, "{}", p.as_str()),
            Characteristic::Identity => write!(f, "identity"),
            Characteristic::Hateful => write!(f, "hateful"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Relation {
    ImmediatelyBefore,
    WithinBefore(usize),
    WithinAfter(usize),
    Modifies,
    SubjectOf,
    DependencyWithin(usize),
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Relation::ImmediatelyBefore => write!(f, "ImmediatelyBefore"),
            Relation::WithinBefore(k) => write!(f, "WithinBefore({k})"),
            Relation::WithinAfter(k) => write!(f, "WithinAfter({k})"),
            Relation::Modifies => write!(f, "Modifies"),
            Relation::SubjectOf => write!(f, "SubjectOf"),
            Relation::DependencyWithin(k) => write!(f, "DependencyWithin({k})"),
        }
    }
}

/// Per-clause execution marker. `Default` softens existence and relation
/// clauses and keeps characteristic clauses strict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Softness {
    #[default]
    Default,
    Soft,
    Strict,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LeafPredicate {
    Existence { var: String, literal: String },
    Characteristic { var: String, kind: Characteristic },
    Relation { a: String, b: String, rel: Relation },
}

impl LeafPredicate {
    pub fn vars(&self) -> Vec<&str> {
        match self {
            LeafPredicate::Existence { var, .. } | LeafPredicate::Characteristic { var, .. } => {
                vec![var]
            }
            LeafPredicate::Relation { a, b, .. } => vec![a, b],
        }
    }
}

impl fmt::Display for LeafPredicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LeafPredicate::Existence { var, .. } => write!(f, "Existence({var})"),
            LeafPredicate::Characteristic { var, kind } => {
                write!(f, "Characteristic({var}: {kind})")
            }
            LeafPredicate::Relation { a, b, rel } => write!(f, "Relation({rel} {a} {b})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Leaf {
    pub pred: LeafPredicate,
    pub marker: Softness,
}

impl Leaf {
    pub fn new(pred: LeafPredicate) -> Self {
        Leaf {
            pred,
            marker: Softness::Default,
        }
    }

    /// Whether soft execution uses the softened unit for this leaf.
    pub fn softened(&self) -> bool {
        match self.marker {
            Softness::Soft => true,
            Softness::Strict => false,
            Softness::Default => !matches!(self.pred, LeafPredicate::Characteristic { .. }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PredicateExpr {
    And(Vec<PredicateExpr>),
    Or(Vec<PredicateExpr>),
    Leaf(Leaf),
}

impl PredicateExpr {
    pub fn leaf(pred: LeafPredicate) -> Self {
        PredicateExpr::Leaf(Leaf::new(pred))
    }

    pub fn leaves(&self) -> Vec<&Leaf> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a Leaf>) {
        match self {
            PredicateExpr::Leaf(l) => out.push(l),
            PredicateExpr::And(c) | PredicateExpr::Or(c) => {
                for e in c {
                    e.collect_leaves(out);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Increase,
    Decrease,
}

impl Direction {
    /// Regularization target: 1 for increase, 0 for decrease.
    pub fn target(&self) -> f64 {
        match self {
            Direction::Increase => 1.0,
            Direction::Decrease => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AdviceAtom {
    Attr {
        var: String,
        class: usize,
        dir: Direction,
    },
    Inter {
        a: String,
        b: String,
        class: usize,
        dir: Direction,
    },
}

/// Grounding of a rule variable in its reference instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VarDecl {
    pub span: Span,
    pub literal: String,
    /// Set by an explicit `X = tokens i..j` override.
    pub explicit: bool,
}

/// Parsed explanation `B -> H` grounded in a reference instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub id: String,
    pub ref_instance: String,
    pub vars: BTreeMap<String, VarDecl>,
    /// Root conjunction; one child per pattern sentence.
    pub body: PredicateExpr,
    pub head: Vec<AdviceAtom>,
    pub noisy_label: usize,
}

/// Ordered class names; index = class id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassList(Vec<String>);

impl ClassList {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Self {
        ClassList(names.into_iter().map(Into::into).collect())
    }

    /// Parses `a,b,c` or `a=0,b=1` (explicit indices must be 0..n).
    pub fn parse(spec: &str) -> Option<Self> {
        let items: Vec<&str> = spec
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .collect();
        if items.is_empty() {
            return None;
        }
        if items.iter().all(|s| s.contains('=')) {
            let mut slots: Vec<Option<String>> = vec![None; items.len()];
            for it in items {
                let (name, idx) = it.split_once('=')?;
                let idx: usize = idx.trim().parse().ok()?;
                if idx >= slots.len() || slots[idx].is_some() {
                    return None;
                }
                slots[idx] = Some(name.trim().to_string());
            }
            return slots.into_iter().collect::<Option<Vec<_>>>().map(ClassList);
        }
        if items.iter().any(|s| s.contains('=')) {
            return None;
        }
        Some(ClassList(items.into_iter().map(String::from).collect()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        let n = name.trim().to_lowercase();
        self.0.iter().position(|c| c.to_lowercase() == n)
    }

    pub fn name(&self, idx: usize) -> Option<&str> {
        self.0.get(idx).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.0
    }
}
