//! Annotated corpora, lexicons and embedding tables.
//!
//! Linguistic annotations (lemma, POS, NER, dependencies) are read from
//! line-delimited JSON records and never computed here. Lexicon flags are
//! the only annotation derived at load time.

mod embedding;
mod lexicon;

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use bitflags::bitflags;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use embedding::{phrase_vector, EmbeddingTable, WordVectors};
pub use lexicon::{LexiconSet, PhraseSet, Polarity};

bitflags! {
    /// Lexicon memberships of a token.
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
    pub struct TokenFlags: u8 {
        const POSITIVE = 0b0001;
        const NEGATIVE = 0b0010;
        const IDENTITY = 0b0100;
        const HATEFUL  = 0b1000;
    }
}

/// Half-open token range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn single(i: usize) -> Self {
        Span {
            start: i,
            end: i + 1,
        }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn contains(&self, i: usize) -> bool {
        self.start <= i && i < self.end
    }

    pub fn indices(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

impl From<(usize, usize)> for Span {
    fn from((start, end): (usize, usize)) -> Self {
        Span { start, end }
    }
}

impl From<Span> for (usize, usize) {
    fn from(s: Span) -> Self {
        (s.start, s.end)
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub lemma: String,
    pub pos: String,
    pub ner: String,
    #[serde(default)]
    pub flags: TokenFlags,
}

impl Token {
    /// Token with lemma = lowercased text and no POS/NER information.
    pub fn bare(text: &str) -> Self {
        Token {
            text: text.to_string(),
            lemma: text.to_lowercase(),
            pos: "X".to_string(),
            ner: NO_ENTITY.to_string(),
            flags: TokenFlags::empty(),
        }
    }

    pub fn entity(&self) -> Option<&str> {
        match self.ner.as_str() {
            "" | "O" | NO_ENTITY => None,
            other => Some(other),
        }
    }

    pub fn polarity(&self) -> Polarity {
        if self.flags.contains(TokenFlags::POSITIVE) {
            Polarity::Positive
        } else if self.flags.contains(TokenFlags::NEGATIVE) {
            Polarity::Negative
        } else {
            Polarity::Neutral
        }
    }
}

pub const NO_ENTITY: &str = "NONE";

/// Dependency arc. `head` is `None` for the root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepEdge {
    pub head: Option<usize>,
    pub dep: usize,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedInstance {
    pub id: String,
    pub tokens: Vec<Token>,
    pub deps: Vec<DepEdge>,
    pub gold_label: Option<usize>,
}

impl AnnotatedInstance {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn full_span(&self) -> Span {
        Span::new(0, self.tokens.len())
    }

    pub fn text(&self) -> String {
        self.tokens
            .iter()
            .map(|t| t.text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn span_text(&self, span: Span) -> String {
        self.tokens[span.indices()]
            .iter()
            .map(|t| t.text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Incoming arc of token `i`, if any.
    pub fn head_edge(&self, i: usize) -> Option<&DepEdge> {
        self.deps.iter().find(|e| e.dep == i)
    }

    /// Undirected adjacency lists of the dependency graph.
    pub fn dep_adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.tokens.len()];
        for e in &self.deps {
            if let Some(h) = e.head {
                adj[h].push(e.dep);
                adj[e.dep].push(h);
            }
        }
        adj
    }

    /// Shortest undirected dependency-path length between two spans
    /// (minimum over token pairs). `None` when disconnected.
    pub fn dep_distance(&self, a: Span, b: Span) -> Option<usize> {
        let adj = self.dep_adjacency();
        let mut dist = vec![usize::MAX; self.tokens.len()];
        let mut queue = std::collections::VecDeque::new();
        for i in a.indices() {
            dist[i] = 0;
            queue.push_back(i);
        }
        while let Some(u) = queue.pop_front() {
            if b.contains(u) {
                return Some(dist[u]);
            }
            for &v in &adj[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        None
    }

    /// Recomputes lexicon flags for every token.
    pub fn annotate(&mut self, lex: &LexiconSet) {
        for tok in &mut self.tokens {
            tok.flags = TokenFlags::empty();
            match lex.sentiment(&tok.text) {
                Some(Polarity::Positive) => tok.flags |= TokenFlags::POSITIVE,
                Some(Polarity::Negative) => tok.flags |= TokenFlags::NEGATIVE,
                _ => {}
            }
        }
        let folded: Vec<String> = self.tokens.iter().map(|t| t.text.to_lowercase()).collect();
        for span in lex.identity.occurrences(&folded) {
            for i in span.indices() {
                self.tokens[i].flags |= TokenFlags::IDENTITY;
            }
        }
        for span in lex.hateful.occurrences(&folded) {
            for i in span.indices() {
                self.tokens[i].flags |= TokenFlags::HATEFUL;
            }
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        let n = self.tokens.len();
        let mut has_head = vec![false; n];
        for e in &self.deps {
            if e.dep >= n {
                return Err(format!(
                    "dependent index {} out of range for {} tokens",
                    e.dep, n
                ));
            }
            if let Some(h) = e.head {
                if h >= n {
                    return Err(format!("head index {} out of range for {} tokens", h, n));
                }
            }
            if has_head[e.dep] {
                return Err(format!("token {} has more than one head", e.dep));
            }
            has_head[e.dep] = true;
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct RawToken {
    text: String,
    #[serde(default)]
    lemma: Option<String>,
    #[serde(default)]
    pos: Option<String>,
    #[serde(default)]
    ner: Option<String>,
}

#[derive(Deserialize)]
struct RawInstance {
    id: String,
    tokens: Vec<RawToken>,
    #[serde(default)]
    dep: Vec<(i64, i64, String)>,
    #[serde(default)]
    label: Option<usize>,
}

#[derive(Serialize)]
struct RawInstanceOut<'a> {
    id: &'a str,
    tokens: Vec<RawTokenOut<'a>>,
    dep: Vec<(i64, usize, &'a str)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<usize>,
}

#[derive(Serialize)]
struct RawTokenOut<'a> {
    text: &'a str,
    lemma: &'a str,
    pos: &'a str,
    ner: &'a str,
}

impl RawInstance {
    fn into_instance(self) -> std::result::Result<AnnotatedInstance, String> {
        let n = self.tokens.len() as i64;
        let mut deps = Vec::with_capacity(self.dep.len());
        for (head, dep, label) in self.dep {
            if head < -1 || head >= n {
                return Err(format!("invalid dep head index {head} for {n} tokens"));
            }
            if dep < 0 || dep >= n {
                return Err(format!("invalid dep dependent index {dep} for {n} tokens"));
            }
            deps.push(DepEdge {
                head: (head >= 0).then_some(head as usize),
                dep: dep as usize,
                label,
            });
        }
        let tokens = self
            .tokens
            .into_iter()
            .map(|t| Token {
                lemma: t.lemma.unwrap_or_else(|| t.text.to_lowercase()),
                pos: t.pos.unwrap_or_else(|| "X".into()),
                ner: t.ner.unwrap_or_else(|| NO_ENTITY.into()),
                text: t.text,
                flags: TokenFlags::empty(),
            })
            .collect();
        let inst = AnnotatedInstance {
            id: self.id,
            tokens,
            deps,
            gold_label: self.label,
        };
        inst.validate()?;
        Ok(inst)
    }
}

/// Id-indexed collection of instances; iteration follows file order.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Corpus {
    instances: Vec<AnnotatedInstance>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Corpus {
    pub fn from_instances(instances: Vec<AnnotatedInstance>) -> Result<Self> {
        let mut index = HashMap::with_capacity(instances.len());
        for (i, inst) in instances.iter().enumerate() {
            inst.validate().map_err(Error::Invalid)?;
            if index.insert(inst.id.clone(), i).is_some() {
                return Err(Error::Invalid(format!(
                    "duplicate instance id {:?}",
                    inst.id
                )));
            }
        }
        Ok(Corpus { instances, index })
    }

    /// Reads a line-delimited corpus file and applies lexicon flags.
    pub fn load(path: impl AsRef<Path>, lex: &LexiconSet) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path, lex)
    }

    pub fn parse(text: &str, path: &Path, lex: &LexiconSet) -> Result<Self> {
        let mut instances = Vec::new();
        let mut index = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let lineno = lineno + 1;
            if line.trim().is_empty() {
                continue;
            }
            let raw: RawInstance = serde_json::from_str(line)
                .map_err(|e| Error::format(path, lineno, format!("malformed record: {e}")))?;
            let mut inst = raw
                .into_instance()
                .map_err(|m| Error::format(path, lineno, m))?;
            inst.annotate(lex);
            if index.insert(inst.id.clone(), instances.len()).is_some() {
                return Err(Error::format(
                    path,
                    lineno,
                    format!("duplicate id {:?}", inst.id),
                ));
            }
            instances.push(inst);
        }
        Ok(Corpus { instances, index })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for inst in &self.instances {
            let out = RawInstanceOut {
                id: &inst.id,
                tokens: inst
                    .tokens
                    .iter()
                    .map(|t| RawTokenOut {
                        text: &t.text,
                        lemma: &t.lemma,
                        pos: &t.pos,
                        ner: &t.ner,
                    })
                    .collect(),
                dep: inst
                    .deps
                    .iter()
                    .map(|e| (e.head.map_or(-1, |h| h as i64), e.dep, e.label.as_str()))
                    .collect(),
                label: inst.gold_label,
            };
            let line = serde_json::to_string(&out).expect("instance serializes");
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn get(&self, id: &str) -> Option<&AnnotatedInstance> {
        self.index.get(id).map(|&i| &self.instances[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, AnnotatedInstance> {
        self.instances.iter()
    }

    pub fn instances(&self) -> &[AnnotatedInstance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.instances.iter().map(|i| i.len()).sum()
    }

    /// Recomputes all token flags against `lex`.
    pub fn annotate(&mut self, lex: &LexiconSet) {
        for inst in &mut self.instances {
            inst.annotate(lex);
        }
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a AnnotatedInstance;
    type IntoIter = std::slice::Iter<'a, AnnotatedInstance>;

    fn into_iter(self) -> Self::IntoIter {
        self.instances.iter()
    }
}
