//! Matching model built from a rule body, binding search and corpus-wide
//! generalization.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::logic::{soft_and, soft_and_all, soft_or_all};
use super::units::{
    cosine_candidates, relation_holds, relation_soft, strict_candidates, InstanceView, SpanTypes,
};
use crate::corpus::{AnnotatedInstance, Corpus, EmbeddingTable, Polarity, Span, Token, TokenFlags};
use crate::error::{Error, Result};
use crate::lang::{AdviceAtom, Characteristic, LeafPredicate, PredicateExpr, Relation, Rule};
use crate::scalar::cosine;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Strict,
    Soft,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Strict => "strict",
            Mode::Soft => "soft",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "strict" => Ok(Mode::Strict),
            "soft" => Ok(Mode::Soft),
            other => Err(Error::Config(format!("unknown match mode {other:?}"))),
        }
    }
}

/// Soft-matching parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchParams {
    /// Cosine floor for soft individuality candidates.
    pub tau_cos: f64,
    /// Candidate cap per variable.
    pub k: usize,
}

impl Default for MatchParams {
    fn default() -> Self {
        MatchParams { tau_cos: 0.6, k: 3 }
    }
}

/// A concrete regularization target produced by instantiating advice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AdviceTarget {
    Attr {
        span: Span,
        class: usize,
        target: f64,
    },
    Inter {
        spans: [Span; 2],
        class: usize,
        target: f64,
    },
}

impl AdviceTarget {
    pub fn class(&self) -> usize {
        match self {
            AdviceTarget::Attr { class, .. } | AdviceTarget::Inter { class, .. } => *class,
        }
    }

    pub fn target(&self) -> f64 {
        match self {
            AdviceTarget::Attr { target, .. } | AdviceTarget::Inter { target, .. } => *target,
        }
    }
}

/// One matched instance with its noisy label, advice and confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub instance_id: String,
    pub rule_id: String,
    pub label: usize,
    pub z: f64,
    pub bindings: BTreeMap<String, Span>,
    pub advice: Vec<AdviceTarget>,
}

/// A variable bound by the search, with its individuality score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bound {
    pub span: Span,
    pub score: f64,
}

pub type Binding = BTreeMap<String, Bound>;

#[derive(Debug, Clone)]
struct Slot {
    name: String,
    span: Span,
    texts: Vec<String>,
    lemmas: Vec<String>,
    types: SpanTypes,
    vector: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
enum LeafKind {
    Exists {
        v: usize,
        words: Vec<String>,
        /// The literal is the one that grounded the variable, so the
        /// reference lemmas also count as an exact match.
        grounding: bool,
    },
    Char {
        v: usize,
        kind: Characteristic,
    },
    Rel {
        a: usize,
        b: usize,
        rel: Relation,
    },
}

#[derive(Debug, Clone)]
enum Node {
    And(Vec<Node>),
    Or(Vec<Node>),
    Leaf {
        kind: LeafKind,
        soft: bool,
        label: String,
    },
}

impl Node {
    fn max_slot(&self) -> Option<usize> {
        match self {
            Node::And(c) | Node::Or(c) => c.iter().filter_map(Node::max_slot).max(),
            Node::Leaf { kind, .. } => Some(match kind {
                LeafKind::Exists { v, .. } | LeafKind::Char { v, .. } => *v,
                LeafKind::Rel { a, b, .. } => *a.max(b),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Cand {
    span: Span,
    /// Individuality score: 1 for strict candidates, else the cosine.
    unit: f64,
    /// Clipped cosine to the reference span (0 when vectors are absent).
    cos: f64,
    /// Found by strict individuality; wins ties against cosine candidates.
    strict: bool,
}

const UNBOUND: Cand = Cand {
    span: Span { start: 0, end: 0 },
    unit: 0.0,
    cos: 0.0,
    strict: false,
};

/// Executable matching model compiled from one rule and its reference.
#[derive(Debug, Clone)]
pub struct MatchingModel<'r> {
    rule: &'r Rule,
    slots: Vec<Slot>,
    /// Top-level conjuncts with the slot depth at which they become
    /// evaluable.
    roots: Vec<(Node, usize)>,
    /// `separate[i][j]`: the bound spans of slots i and j must not overlap.
    separate: Vec<Vec<bool>>,
}

fn folded_words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_lowercase).collect()
}

fn used_vars(rule: &Rule) -> Vec<&str> {
    let mut names: Vec<&str> = rule
        .body
        .leaves()
        .into_iter()
        .flat_map(|l| l.pred.vars())
        .collect();
    for h in &rule.head {
        match h {
            AdviceAtom::Attr { var, .. } => names.push(var),
            AdviceAtom::Inter { a, b, .. } => {
                names.push(a);
                names.push(b);
            }
        }
    }
    names.sort_unstable();
    names.dedup();
    names
}

impl<'r> MatchingModel<'r> {
    /// Compiles `rule` against its reference instance. Soft execution
    /// needs `table` to cover the reference.
    pub fn compile(
        rule: &'r Rule,
        reference: &AnnotatedInstance,
        table: Option<&EmbeddingTable>,
    ) -> Result<Self> {
        let view = InstanceView::new(reference, table)?;
        let mut slots = Vec::new();
        for name in used_vars(rule) {
            let decl = rule.vars.get(name).ok_or_else(|| {
                Error::Invalid(format!("rule {}: undeclared variable {name}", rule.id))
            })?;
            let span = decl.span;
            let in_bounds = !span.is_empty() && span.end <= reference.len();
            slots.push(Slot {
                name: name.to_string(),
                span,
                texts: if in_bounds {
                    view.folded_texts(span).to_vec()
                } else {
                    Vec::new()
                },
                lemmas: if in_bounds {
                    view.folded_lemmas(span).to_vec()
                } else {
                    Vec::new()
                },
                types: if in_bounds {
                    SpanTypes::of(view.tokens(span))
                } else {
                    SpanTypes::default()
                },
                vector: if in_bounds {
                    view.span_vector(span)
                } else {
                    None
                },
            });
        }
        let index = |n: &str| {
            slots
                .iter()
                .position(|s| s.name == n)
                .expect("slot for used var")
        };
        let roots = match &rule.body {
            PredicateExpr::And(children) => children.clone(),
            other => vec![other.clone()],
        };
        let roots = roots
            .iter()
            .map(|e| {
                let node = compile_node(e, rule, &index);
                let ready = node.max_slot().map_or(0, |m| m + 1);
                (node, ready)
            })
            .collect();
        let n = slots.len();
        let mut separate = vec![vec![false; n]; n];
        for i in 0..n {
            for j in 0..n {
                separate[i][j] = i != j && !slots[i].span.overlaps(&slots[j].span);
            }
        }
        Ok(MatchingModel {
            rule,
            slots,
            roots,
            separate,
        })
    }

    pub fn rule(&self) -> &Rule {
        self.rule
    }

    fn candidates(
        &self,
        x: &InstanceView,
        mode: Mode,
        params: &MatchParams,
    ) -> Result<Vec<Vec<Cand>>> {
        let mut all = Vec::with_capacity(self.slots.len());
        for slot in &self.slots {
            let strict = strict_candidates(x, &slot.texts, &slot.lemmas, &slot.types);
            let list = match mode {
                Mode::Strict => strict
                    .into_iter()
                    .map(|span| Cand {
                        span,
                        unit: 1.0,
                        cos: 0.0,
                        strict: true,
                    })
                    .collect(),
                Mode::Soft => {
                    let target = slot.vector.as_ref().ok_or_else(|| {
                        Error::Invalid(format!(
                            "missing embeddings for reference {:?} of rule {}",
                            self.rule.ref_instance, self.rule.id
                        ))
                    })?;
                    let ranked = cosine_candidates(
                        x,
                        target,
                        slot.span.len() + 1,
                        params.k,
                        params.tau_cos,
                    )?;
                    let mut list: Vec<Cand> = strict
                        .iter()
                        .map(|&span| {
                            let v = x.span_vector(span).expect("vectors present");
                            Cand {
                                span,
                                unit: 1.0,
                                cos: cosine(&v, target).max(0.0),
                                strict: true,
                            }
                        })
                        .collect();
                    for (span, score) in ranked {
                        if !strict.contains(&span) {
                            list.push(Cand {
                                span,
                                unit: score,
                                cos: score,
                                strict: false,
                            });
                        }
                    }
                    list
                }
            };
            all.push(list);
        }
        Ok(all)
    }

    /// Runs the model on one instance. Strict matches have `z = 1`; soft
    /// matches report the best folded score and are returned iff `z > 0`.
    pub fn execute(
        &self,
        x: &InstanceView,
        mode: Mode,
        params: &MatchParams,
    ) -> Result<Option<MatchRecord>> {
        let cands = self.candidates(x, mode, params)?;
        if cands.iter().any(Vec::is_empty) {
            return Ok(None);
        }
        let Some((z, assign)) = self.search(x, &cands, mode) else {
            return Ok(None);
        };
        let accepted = match mode {
            Mode::Strict => z == 1.0,
            Mode::Soft => z > 0.0,
        };
        if !accepted {
            return Ok(None);
        }
        let binding: Binding = self
            .slots
            .iter()
            .zip(&assign)
            .zip(&cands)
            .map(|((s, &ci), list)| {
                let c = list[ci];
                (
                    s.name.clone(),
                    Bound {
                        span: c.span,
                        score: c.unit,
                    },
                )
            })
            .collect();
        Ok(Some(self.record(x.inst, &binding, z)))
    }

    fn record(&self, x: &AnnotatedInstance, binding: &Binding, z: f64) -> MatchRecord {
        let span = |v: &str| binding[v].span;
        let advice = self
            .rule
            .head
            .iter()
            .map(|h| match h {
                AdviceAtom::Attr { var, class, dir } => AdviceTarget::Attr {
                    span: span(var),
                    class: *class,
                    target: dir.target(),
                },
                AdviceAtom::Inter { a, b, class, dir } => AdviceTarget::Inter {
                    spans: [span(a), span(b)],
                    class: *class,
                    target: dir.target(),
                },
            })
            .collect();
        MatchRecord {
            instance_id: x.id.clone(),
            rule_id: self.rule.id.clone(),
            label: self.rule.noisy_label,
            z,
            bindings: binding.iter().map(|(k, b)| (k.clone(), b.span)).collect(),
            advice,
        }
    }

    fn search(
        &self,
        x: &InstanceView,
        cands: &[Vec<Cand>],
        mode: Mode,
    ) -> Option<(f64, Vec<usize>)> {
        let mut s = Search {
            model: self,
            x,
            cands,
            mode,
            assign: Vec::with_capacity(self.slots.len()),
            root_scores: vec![0.0; self.roots.len()],
            best: None,
        };
        s.dfs(0, 0.0);
        s.best
    }

    /// Strict execution on the reference itself, binding each variable to
    /// the occurrences of its literal (or its explicit span).
    pub(crate) fn check_reference(
        &self,
        reference: &AnnotatedInstance,
    ) -> std::result::Result<(), String> {
        let x = InstanceView::new(reference, None).map_err(|e| e.to_string())?;
        let cands: Vec<Vec<Cand>> = self
            .slots
            .iter()
            .map(|slot| {
                let decl = &self.rule.vars[&slot.name];
                let spans: Vec<Span> = if decl.explicit {
                    (decl.span.end <= reference.len())
                        .then_some(decl.span)
                        .into_iter()
                        .collect()
                } else {
                    let words = folded_words(&decl.literal);
                    (0..reference.len().saturating_sub(words.len()) + 1)
                        .map(|s| Span::new(s, s + words.len()))
                        .filter(|sp| {
                            !words.is_empty() && sp.end <= reference.len() && x.spells(*sp, &words)
                        })
                        .collect()
                };
                spans
                    .into_iter()
                    .map(|span| Cand {
                        span,
                        unit: 1.0,
                        cos: 0.0,
                        strict: true,
                    })
                    .collect()
            })
            .collect();
        if cands.iter().all(|c| !c.is_empty()) {
            if let Some((z, _)) = self.search(&x, &cands, Mode::Strict) {
                if z == 1.0 {
                    return Ok(());
                }
            }
        }
        // Explain with the first candidate of each variable.
        let assign: Vec<Option<Cand>> = cands.iter().map(|c| c.first().copied()).collect();
        for (root, _) in &self.roots {
            if let Some(reason) = self.first_failure(root, &x, &assign) {
                return Err(reason);
            }
        }
        Err("no consistent binding of the rule variables".into())
    }

    fn first_failure(
        &self,
        node: &Node,
        x: &InstanceView,
        assign: &[Option<Cand>],
    ) -> Option<String> {
        match node {
            Node::Leaf { kind, label, .. } => {
                let bound = match kind {
                    LeafKind::Exists { v, .. } | LeafKind::Char { v, .. } => assign[*v].is_some(),
                    LeafKind::Rel { a, b, .. } => assign[*a].is_some() && assign[*b].is_some(),
                };
                let holds = bound && {
                    let full: Vec<Cand> = assign.iter().map(|c| c.unwrap_or(UNBOUND)).collect();
                    self.leaf_score(kind, false, x, &full) == 1.0
                };
                (!holds).then(|| format!("{label} failed"))
            }
            Node::And(c) => c.iter().find_map(|n| self.first_failure(n, x, assign)),
            Node::Or(c) => {
                let fails: Vec<String> = c
                    .iter()
                    .filter_map(|n| self.first_failure(n, x, assign))
                    .collect();
                (fails.len() == c.len() && !c.is_empty()).then(|| fails.join("; "))
            }
        }
    }

    fn leaf_score(&self, kind: &LeafKind, soft: bool, x: &InstanceView, assign: &[Cand]) -> f64 {
        match kind {
            LeafKind::Exists {
                v,
                words,
                grounding,
            } => {
                let c = assign[*v];
                let exact = x.spells(c.span, words)
                    || (*grounding && x.folded_lemmas(c.span) == self.slots[*v].lemmas.as_slice());
                if exact {
                    1.0
                } else if soft {
                    c.cos
                } else {
                    0.0
                }
            }
            LeafKind::Char { v, kind } => {
                let c = assign[*v];
                if characteristic_holds(x.tokens(c.span), kind) {
                    1.0
                } else if soft {
                    c.cos
                } else {
                    0.0
                }
            }
            LeafKind::Rel { a, b, rel } => {
                let (sa, sb) = (assign[*a].span, assign[*b].span);
                if soft {
                    relation_soft(x, *rel, sa, sb)
                } else if relation_holds(x, *rel, sa, sb) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn eval(&self, node: &Node, x: &InstanceView, assign: &[Cand], mode: Mode) -> f64 {
        match node {
            Node::And(c) => soft_and_all(c.iter().map(|n| self.eval(n, x, assign, mode))),
            Node::Or(c) => soft_or_all(c.iter().map(|n| self.eval(n, x, assign, mode))),
            Node::Leaf { kind, soft, .. } => {
                self.leaf_score(kind, *soft && mode == Mode::Soft, x, assign)
            }
        }
    }
}

fn compile_node(e: &PredicateExpr, rule: &Rule, index: &dyn Fn(&str) -> usize) -> Node {
    match e {
        PredicateExpr::And(c) => {
            Node::And(c.iter().map(|n| compile_node(n, rule, index)).collect())
        }
        PredicateExpr::Or(c) => Node::Or(c.iter().map(|n| compile_node(n, rule, index)).collect()),
        PredicateExpr::Leaf(leaf) => {
            let kind = match &leaf.pred {
                LeafPredicate::Existence { var, literal } => {
                    let words = folded_words(literal);
                    let grounding = rule
                        .vars
                        .get(var)
                        .is_some_and(|d| folded_words(&d.literal) == words);
                    LeafKind::Exists {
                        v: index(var),
                        words,
                        grounding,
                    }
                }
                LeafPredicate::Characteristic { var, kind } => LeafKind::Char {
                    v: index(var),
                    kind: kind.clone(),
                },
                LeafPredicate::Relation { a, b, rel } => LeafKind::Rel {
                    a: index(a),
                    b: index(b),
                    rel: *rel,
                },
            };
            Node::Leaf {
                kind,
                soft: leaf.softened(),
                label: leaf.pred.to_string(),
            }
        }
    }
}

/// Whether every (NER, POS) or some (sentiment, identity, hateful) token of
/// the span has the characteristic. Neutral sentiment requires every token
/// to be neutral.
fn characteristic_holds(tokens: &[Token], kind: &Characteristic) -> bool {
    if tokens.is_empty() {
        return false;
    }
    match kind {
        Characteristic::Ner(t) => tokens
            .iter()
            .all(|k| k.entity().is_some_and(|e| e.eq_ignore_ascii_case(t))),
        Characteristic::Pos(t) => tokens.iter().all(|k| k.pos.eq_ignore_ascii_case(t)),
        Characteristic::Sentiment(Polarity::Neutral) => {
            tokens.iter().all(|k| k.polarity() == Polarity::Neutral)
        }
        Characteristic::Sentiment(p) => tokens.iter().any(|k| k.polarity() == *p),
        Characteristic::Identity => tokens
            .iter()
            .any(|k| k.flags.contains(TokenFlags::IDENTITY)),
        Characteristic::Hateful => tokens.iter().any(|k| k.flags.contains(TokenFlags::HATEFUL)),
    }
}

struct Search<'s, 'r, 'a> {
    model: &'s MatchingModel<'r>,
    x: &'s InstanceView<'a>,
    cands: &'s [Vec<Cand>],
    mode: Mode,
    assign: Vec<usize>,
    root_scores: Vec<f64>,
    best: Option<(f64, Vec<usize>)>,
}

impl Search<'_, '_, '_> {
    fn current(&self) -> Vec<Cand> {
        self.assign
            .iter()
            .enumerate()
            .map(|(i, &c)| self.cands[i][c])
            .collect()
    }

    /// Tie-break order among equal scores: fewer cosine-only bindings
    /// first, then earliest spans.
    fn key(&self, assign: &[usize]) -> (usize, Vec<(usize, usize)>) {
        let picked = || assign.iter().enumerate().map(|(i, &c)| self.cands[i][c]);
        let loose = picked().filter(|c| !c.strict).count();
        (
            loose,
            picked().map(|c| (c.span.start, c.span.len())).collect(),
        )
    }

    fn dfs(&mut self, depth: usize, mut deficit: f64) {
        let bound = self.current();
        for (r, (node, ready)) in self.model.roots.iter().enumerate() {
            if *ready == depth {
                let s = self.model.eval(node, self.x, &bound, self.mode);
                self.root_scores[r] = s;
                deficit += 1.0 - s;
            }
        }
        let upper = 1.0 - deficit;
        let floor = match (self.mode, &self.best) {
            (Mode::Strict, _) => 1.0 - 1e-9,
            (Mode::Soft, Some((b, _))) => b - 1e-9,
            (Mode::Soft, None) => 1e-12,
        };
        if upper < floor {
            return;
        }
        if depth == self.model.slots.len() {
            let z = self
                .root_scores
                .iter()
                .fold(1.0, |acc, &s| soft_and(acc, s));
            let better = match &self.best {
                None => true,
                Some((b, a)) => z > *b || (z == *b && self.key(&self.assign) < self.key(a)),
            };
            if better {
                self.best = Some((z, self.assign.clone()));
            }
            return;
        }
        for ci in 0..self.cands[depth].len() {
            let span = self.cands[depth][ci].span;
            let clash = self.assign.iter().enumerate().any(|(j, &cj)| {
                self.model.separate[depth][j] && self.cands[j][cj].span.overlaps(&span)
            });
            if clash {
                continue;
            }
            self.assign.push(ci);
            self.dfs(depth + 1, deficit);
            self.assign.pop();
        }
    }
}

/// Executes one rule on one instance.
pub fn execute_rule(
    rule: &Rule,
    reference: &AnnotatedInstance,
    x: &AnnotatedInstance,
    mode: Mode,
    table: Option<&EmbeddingTable>,
    params: &MatchParams,
) -> Result<Option<MatchRecord>> {
    let model = MatchingModel::compile(rule, reference, table)?;
    let view = InstanceView::new(x, if mode == Mode::Soft { table } else { None })?;
    model.execute(&view, mode, params)
}

/// Runs every rule over `corpus` and keeps records with `z >= threshold`,
/// sorted by (instance id, rule id). Instances are processed in parallel.
pub fn generalize(
    rules: &[Rule],
    corpus: &Corpus,
    mode: Mode,
    threshold: f64,
    table: Option<&EmbeddingTable>,
    params: &MatchParams,
) -> Result<Vec<MatchRecord>> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Config(format!(
            "match threshold {threshold} outside [0, 1]"
        )));
    }
    if mode == Mode::Soft && table.is_none() {
        return Err(Error::Config(
            "soft matching needs an embedding table".into(),
        ));
    }
    let models = rules
        .iter()
        .map(|r| {
            let reference = corpus.get(&r.ref_instance).ok_or_else(|| {
                Error::Invalid(format!(
                    "rule {}: reference {:?} not in corpus",
                    r.id, r.ref_instance
                ))
            })?;
            MatchingModel::compile(r, reference, table)
        })
        .collect::<Result<Vec<_>>>()?;
    let table = if mode == Mode::Soft { table } else { None };
    let per_instance: Vec<Vec<MatchRecord>> = corpus
        .instances()
        .par_iter()
        .map(|inst| {
            let view = InstanceView::new(inst, table)?;
            let mut out = Vec::new();
            for m in &models {
                if let Some(rec) = m.execute(&view, mode, params)? {
                    if rec.z >= threshold {
                        out.push(rec);
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut all: Vec<MatchRecord> = per_instance.into_iter().flatten().collect();
    all.sort_by(|a, b| {
        a.instance_id
            .cmp(&b.instance_id)
            .then_with(|| a.rule_id.cmp(&b.rule_id))
    });
    Ok(all)
}
