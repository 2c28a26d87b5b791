//! Individuality and interaction units over a preprocessed instance.

use crate::corpus::{AnnotatedInstance, EmbeddingTable, Polarity, Span, Token, TokenFlags};
use crate::error::{Error, Result};
use crate::lang::Relation;
use crate::scalar::cosine;

use super::logic::interaction_soft;

const MODIFIER_LABELS: &[&str] = &[
    "acl", "advcl", "advmod", "amod", "appos", "compound", "det", "neg", "nmod", "nn", "npadvmod",
    "nummod", "obl", "poss", "predet", "prep", "quantmod", "relcl",
];
const SUBJECT_LABELS: &[&str] = &["agent", "csubj", "csubjpass", "expl", "nsubj", "nsubjpass"];
const CONTENT_POS: &[&str] = &["ADJ", "ADV", "NOUN", "PROPN", "VERB"];

fn base_label(label: &str) -> String {
    label.split(':').next().unwrap_or("").to_lowercase()
}

/// An instance with case-folded strings, dependency adjacency and (when
/// an embedding table is supplied) 64-bit token vectors.
#[derive(Debug, Clone)]
pub struct InstanceView<'a> {
    pub inst: &'a AnnotatedInstance,
    texts: Vec<String>,
    lemmas: Vec<String>,
    adj: Vec<Vec<usize>>,
    vectors: Option<Vec<Vec<f64>>>,
}

impl<'a> InstanceView<'a> {
    pub fn new(inst: &'a AnnotatedInstance, table: Option<&EmbeddingTable>) -> Result<Self> {
        let vectors = match table {
            Some(t) => Some(t.token_vectors::<f64>(inst)?),
            None => None,
        };
        Ok(InstanceView {
            inst,
            texts: inst.tokens.iter().map(|t| t.text.to_lowercase()).collect(),
            lemmas: inst.tokens.iter().map(|t| t.lemma.to_lowercase()).collect(),
            adj: inst.dep_adjacency(),
            vectors,
        })
    }

    pub fn len(&self) -> usize {
        self.inst.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inst.is_empty()
    }

    pub fn has_vectors(&self) -> bool {
        self.vectors.is_some()
    }

    pub(crate) fn tokens(&self, span: Span) -> &[Token] {
        &self.inst.tokens[span.indices()]
    }

    pub(crate) fn folded_texts(&self, span: Span) -> &[String] {
        &self.texts[span.indices()]
    }

    pub(crate) fn folded_lemmas(&self, span: Span) -> &[String] {
        &self.lemmas[span.indices()]
    }

    /// Whether the span's case-folded text or lemma sequence equals `words`.
    pub(crate) fn spells(&self, span: Span, words: &[String]) -> bool {
        self.folded_texts(span) == words || self.folded_lemmas(span) == words
    }

    /// Mean of the span's token vectors.
    pub(crate) fn span_vector(&self, span: Span) -> Option<Vec<f64>> {
        let rows = self.vectors.as_ref()?;
        let dim = rows.first()?.len();
        let mut acc = vec![0.0; dim];
        for i in span.indices() {
            for (a, v) in acc.iter_mut().zip(&rows[i]) {
                *a += v;
            }
        }
        let n = span.len() as f64;
        Some(acc.into_iter().map(|a| a / n).collect())
    }

    /// Shortest undirected dependency path between the spans.
    pub(crate) fn dep_distance(&self, a: Span, b: Span) -> Option<usize> {
        let mut dist = vec![usize::MAX; self.len()];
        let mut queue = std::collections::VecDeque::new();
        for i in a.indices() {
            dist[i] = 0;
            queue.push_back(i);
        }
        while let Some(u) = queue.pop_front() {
            if b.contains(u) {
                return Some(dist[u]);
            }
            for &v in &self.adj[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        None
    }

    /// Whether some token of `a` attaches to a token of `b` with a label
    /// in `labels`.
    fn attaches(&self, a: Span, b: Span, labels: &[&str]) -> bool {
        self.inst.deps.iter().any(|e| {
            a.contains(e.dep)
                && e.head.is_some_and(|h| b.contains(h))
                && labels.contains(&base_label(&e.label).as_str())
        })
    }
}

/// Semantic types of a reference span, in the order they are tried.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub(crate) struct SpanTypes {
    pub ner: Option<String>,
    pub polarity: Option<Polarity>,
    pub identity: bool,
    pub hateful: bool,
    /// Set only for a single content word with none of the types above.
    pub content_pos: Option<String>,
}

impl SpanTypes {
    pub fn of(tokens: &[Token]) -> Self {
        let ner = tokens.iter().find_map(|t| t.entity().map(str::to_string));
        let polarity = tokens
            .iter()
            .map(Token::polarity)
            .find(|p| *p != Polarity::Neutral);
        let identity = tokens
            .iter()
            .any(|t| t.flags.contains(TokenFlags::IDENTITY));
        let hateful = tokens.iter().any(|t| t.flags.contains(TokenFlags::HATEFUL));
        let untyped = ner.is_none() && polarity.is_none() && !identity && !hateful;
        let content_pos = match tokens {
            [t] if untyped && CONTENT_POS.contains(&t.pos.as_str()) => Some(t.pos.clone()),
            _ => None,
        };
        SpanTypes {
            ner,
            polarity,
            identity,
            hateful,
            content_pos,
        }
    }
}

/// First maximal run of tokens satisfying `pred`.
fn first_run(tokens: &[Token], pred: impl Fn(&Token) -> bool) -> Option<Span> {
    let start = tokens.iter().position(&pred)?;
    let len = tokens[start..].iter().take_while(|t| pred(t)).count();
    Some(Span::new(start, start + len))
}

/// Every occurrence of the reference span's folded text or lemma sequence.
pub(crate) fn exact_matches(x: &InstanceView, texts: &[String], lemmas: &[String]) -> Vec<Span> {
    let n = texts.len();
    if n == 0 || n > x.len() {
        return Vec::new();
    }
    (0..=x.len() - n)
        .map(|s| Span::new(s, s + n))
        .filter(|&sp| x.folded_texts(sp) == texts || x.folded_lemmas(sp) == lemmas)
        .collect()
}

/// First span of `x` sharing a semantic type with the reference span.
pub(crate) fn type_match(types: &SpanTypes, x: &AnnotatedInstance) -> Option<Span> {
    let toks = &x.tokens;
    if let Some(t) = &types.ner {
        if let Some(s) = first_run(toks, |k| k.entity() == Some(t.as_str())) {
            return Some(s);
        }
    }
    if let Some(p) = types.polarity {
        if let Some(i) = toks.iter().position(|k| k.polarity() == p) {
            return Some(Span::single(i));
        }
    }
    if types.identity {
        if let Some(s) = first_run(toks, |k| k.flags.contains(TokenFlags::IDENTITY)) {
            return Some(s);
        }
    }
    if types.hateful {
        if let Some(s) = first_run(toks, |k| k.flags.contains(TokenFlags::HATEFUL)) {
            return Some(s);
        }
    }
    if let Some(pos) = &types.content_pos {
        if let Some(i) = toks.iter().position(|k| &k.pos == pos) {
            return Some(Span::single(i));
        }
    }
    None
}

/// Strict candidates: every exact match, else the first type match.
pub(crate) fn strict_candidates(
    x: &InstanceView,
    texts: &[String],
    lemmas: &[String],
    types: &SpanTypes,
) -> Vec<Span> {
    let exact = exact_matches(x, texts, lemmas);
    if !exact.is_empty() {
        return exact;
    }
    type_match(types, x.inst).into_iter().collect()
}

/// Spans ranked by clipped cosine to `target`: single tokens and
/// contiguous spans up to `max_len`, filtered to `>= tau`, best `k` kept.
pub(crate) fn cosine_candidates(
    x: &InstanceView,
    target: &[f64],
    max_len: usize,
    k: usize,
    tau: f64,
) -> Result<Vec<(Span, f64)>> {
    if !x.has_vectors() {
        return Err(Error::Invalid(format!(
            "missing embeddings for {:?}",
            x.inst.id
        )));
    }
    let mut out = Vec::new();
    for len in 1..=max_len.min(x.len()) {
        for start in 0..=x.len() - len {
            let span = Span::new(start, start + len);
            let v = x.span_vector(span).expect("vectors present");
            let score = cosine(&v, target).max(0.0);
            if score >= tau {
                out.push((span, score));
            }
        }
    }
    sort_ranked(&mut out);
    out.truncate(k);
    Ok(out)
}

/// Descending score, ties by (start, length).
pub(crate) fn sort_ranked(list: &mut [(Span, f64)]) {
    list.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then(a.0.start.cmp(&b.0.start))
            .then(a.0.len().cmp(&b.0.len()))
    });
}

/// Words strictly between `a` and a later span `b`; `None` if `b` does
/// not start at or after the end of `a`.
fn gap(a: Span, b: Span) -> Option<usize> {
    b.start.checked_sub(a.end)
}

/// Reference distance for the positional relations: at most `k - 1` words
/// between the spans. `None` for `k = 0`, which nothing satisfies.
fn positional_bound(rel: Relation) -> Option<usize> {
    match rel {
        Relation::ImmediatelyBefore => Some(0),
        Relation::WithinBefore(k) | Relation::WithinAfter(k) => k.checked_sub(1),
        _ => None,
    }
}

/// Truth of `rel(a, b)` in `x`.
pub(crate) fn relation_holds(x: &InstanceView, rel: Relation, a: Span, b: Span) -> bool {
    match rel {
        Relation::ImmediatelyBefore | Relation::WithinBefore(_) => {
            matches!((gap(a, b), positional_bound(rel)), (Some(d), Some(k)) if d <= k)
        }
        Relation::WithinAfter(_) => {
            matches!((gap(b, a), positional_bound(rel)), (Some(d), Some(k)) if d <= k)
        }
        Relation::Modifies => x.attaches(a, b, MODIFIER_LABELS),
        Relation::SubjectOf => x.attaches(a, b, SUBJECT_LABELS),
        Relation::DependencyWithin(k) => x.dep_distance(a, b).is_some_and(|d| d <= k),
    }
}

/// Softened `rel(a, b)`: the soft distance score of the observed distance
/// against the relation's bound. Wrong order or disconnected spans score 0.
pub(crate) fn relation_soft(x: &InstanceView, rel: Relation, a: Span, b: Span) -> f64 {
    match rel {
        Relation::ImmediatelyBefore | Relation::WithinBefore(_) => {
            match (gap(a, b), positional_bound(rel)) {
                (Some(d), Some(k)) => interaction_soft(d, k),
                _ => 0.0,
            }
        }
        Relation::WithinAfter(_) => match (gap(b, a), positional_bound(rel)) {
            (Some(d), Some(k)) => interaction_soft(d, k),
            _ => 0.0,
        },
        Relation::Modifies | Relation::SubjectOf => {
            if relation_holds(x, rel, a, b) {
                1.0
            } else {
                x.dep_distance(a, b).map_or(0.0, |d| interaction_soft(d, 0))
            }
        }
        Relation::DependencyWithin(k) => {
            x.dep_distance(a, b).map_or(0.0, |d| interaction_soft(d, k))
        }
    }
}

/// Strict individuality: first exact lemma-sequence match of `q_ref` in
/// `x`, else the first span sharing a semantic type with it.
pub fn individuality_strict(
    q_ref: Span,
    x_ref: &AnnotatedInstance,
    x: &AnnotatedInstance,
) -> Option<Span> {
    let r = InstanceView::new(x_ref, None).ok()?;
    let v = InstanceView::new(x, None).ok()?;
    strict_candidates(
        &v,
        r.folded_texts(q_ref),
        r.folded_lemmas(q_ref),
        &SpanTypes::of(r.tokens(q_ref)),
    )
    .first()
    .copied()
}

/// Soft individuality: the strict result at score 1 plus the top `k`
/// spans by clipped cosine at or above `tau_cos`, best first.
pub fn individuality_soft(
    q_ref: Span,
    x_ref: &AnnotatedInstance,
    x: &AnnotatedInstance,
    table: &EmbeddingTable,
    k: usize,
    tau_cos: f64,
) -> Result<Vec<(Span, f64)>> {
    let r = InstanceView::new(x_ref, Some(table))?;
    let v = InstanceView::new(x, Some(table))?;
    let target = r.span_vector(q_ref).expect("vectors present");
    let mut out = cosine_candidates(&v, &target, q_ref.len() + 1, k, tau_cos)?;
    if let Some(s) = individuality_strict(q_ref, x_ref, x) {
        out.retain(|(sp, _)| *sp != s);
        out.push((s, 1.0));
    }
    sort_ranked(&mut out);
    Ok(out)
}

/// Strict interaction unit.
pub fn interaction_strict(rel: Relation, a: Span, b: Span, x: &AnnotatedInstance) -> bool {
    InstanceView::new(x, None).is_ok_and(|v| relation_holds(&v, rel, a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::DepEdge;

    fn sentence(words: &[&str]) -> AnnotatedInstance {
        AnnotatedInstance {
            id: "s".into(),
            tokens: words.iter().map(|w| Token::bare(w)).collect(),
            deps: Vec::new(),
            gold_label: None,
        }
    }

    #[test]
    fn positional_relations() {
        let x = sentence(&["a", "b", "c", "d"]);
        let v = InstanceView::new(&x, None).unwrap();
        let (a, b, d) = (Span::single(0), Span::single(1), Span::single(3));
        assert!(relation_holds(&v, Relation::ImmediatelyBefore, a, b));
        assert!(!relation_holds(&v, Relation::ImmediatelyBefore, b, a));
        assert!(!relation_holds(&v, Relation::ImmediatelyBefore, a, d));
        assert!(relation_holds(&v, Relation::WithinBefore(3), a, d));
        assert!(!relation_holds(&v, Relation::WithinBefore(2), a, d));
        assert!(relation_holds(&v, Relation::WithinAfter(3), d, a));
        assert!(!relation_holds(&v, Relation::WithinBefore(0), a, b));
        assert!(
            (relation_soft(&v, Relation::ImmediatelyBefore, a, Span::single(2)) - 0.75).abs()
                < 1e-12
        );
        assert_eq!(relation_soft(&v, Relation::ImmediatelyBefore, b, a), 0.0);
    }

    #[test]
    fn dependency_relations() {
        let mut x = sentence(&["failure", "in", "Sweden", "today"]);
        x.deps = vec![
            DepEdge {
                head: None,
                dep: 0,
                label: "ROOT".into(),
            },
            DepEdge {
                head: Some(0),
                dep: 1,
                label: "prep".into(),
            },
            DepEdge {
                head: Some(1),
                dep: 2,
                label: "pobj".into(),
            },
            DepEdge {
                head: Some(0),
                dep: 3,
                label: "npadvmod".into(),
            },
        ];
        let v = InstanceView::new(&x, None).unwrap();
        assert_eq!(v.dep_distance(Span::single(0), Span::single(2)), Some(2));
        assert!(relation_holds(
            &v,
            Relation::DependencyWithin(3),
            Span::single(0),
            Span::single(2)
        ));
        assert!(!relation_holds(
            &v,
            Relation::DependencyWithin(1),
            Span::single(0),
            Span::single(2)
        ));
        assert!(relation_holds(
            &v,
            Relation::Modifies,
            Span::single(3),
            Span::single(0)
        ));
        assert!(!relation_holds(
            &v,
            Relation::Modifies,
            Span::single(0),
            Span::single(3)
        ));
        assert!(
            (relation_soft(&v, Relation::Modifies, Span::single(2), Span::single(0)) - 0.0).abs()
                < 1e-12
        );
        assert!(
            (relation_soft(
                &v,
                Relation::DependencyWithin(1),
                Span::single(0),
                Span::single(2)
            ) - 0.9375)
                .abs()
                < 1e-12
        );
    }

    #[test]
    fn strict_individuality_prefers_exact_then_types() {
        let mut r = sentence(&["I", "like", "Sweden"]);
        r.tokens[2].ner = "GPE".into();
        let mut x = sentence(&["Norway", "is", "cold"]);
        x.tokens[0].ner = "GPE".into();
        assert_eq!(
            individuality_strict(Span::single(2), &r, &x),
            Some(Span::single(0))
        );
        let y = sentence(&["we", "like", "sweden"]);
        assert_eq!(
            individuality_strict(Span::single(2), &r, &y),
            Some(Span::single(2))
        );
        let mut neg = sentence(&["so", "distressing"]);
        neg.tokens[1].flags = TokenFlags::NEGATIVE;
        let neutral = sentence(&["a", "b", "c"]);
        assert_eq!(individuality_strict(Span::single(1), &neg, &neutral), None);
    }
}
