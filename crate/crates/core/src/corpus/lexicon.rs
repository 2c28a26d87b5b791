use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Span;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
    Neutral,
}

impl Polarity {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_lowercase().as_str() {
            "positive" | "pos" => Some(Polarity::Positive),
            "negative" | "neg" => Some(Polarity::Negative),
            "neutral" | "neu" | "both" => Some(Polarity::Neutral),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
            Polarity::Neutral => "neutral",
        }
    }
}

/// Case-folded multiword phrase set.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PhraseSet {
    phrases: BTreeSet<Vec<String>>,
}

impl PhraseSet {
    pub fn insert(&mut self, phrase: &str) {
        let toks: Vec<String> = phrase.split_whitespace().map(str::to_lowercase).collect();
        if !toks.is_empty() {
            self.phrases.insert(toks);
        }
    }

    pub fn contains(&self, phrase: &str) -> bool {
        let toks: Vec<String> = phrase.split_whitespace().map(str::to_lowercase).collect();
        self.phrases.contains(&toks)
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vec<String>> {
        self.phrases.iter()
    }

    /// Every span of `folded` that equals some phrase (overlaps allowed).
    pub fn occurrences(&self, folded: &[String]) -> Vec<Span> {
        let mut out = Vec::new();
        for phrase in &self.phrases {
            let n = phrase.len();
            if n > folded.len() {
                continue;
            }
            for start in 0..=folded.len() - n {
                if folded[start..start + n] == phrase[..] {
                    out.push(Span::new(start, start + n));
                }
            }
        }
        out.sort();
        out
    }
}

/// Sentiment, identity-term and hateful-term lexicons.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LexiconSet {
    pub sentiment: BTreeMap<String, Polarity>,
    pub identity: PhraseSet,
    pub hateful: PhraseSet,
}

fn entries(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
}

impl LexiconSet {
    pub fn load(
        sentiment: impl AsRef<Path>,
        identity: impl AsRef<Path>,
        hateful: impl AsRef<Path>,
    ) -> Result<Self> {
        let read = |p: &Path| fs::read_to_string(p).map_err(|e| Error::io(p, e));
        let s = read(sentiment.as_ref())?;
        let i = read(identity.as_ref())?;
        let h = read(hateful.as_ref())?;
        Self::parse(&s, &i, &h, sentiment.as_ref())
    }

    pub fn from_strs(sentiment: &str, identity: &str, hateful: &str) -> Result<Self> {
        Self::parse(sentiment, identity, hateful, Path::new("<sentiment>"))
    }

    fn parse(sentiment: &str, identity: &str, hateful: &str, spath: &Path) -> Result<Self> {
        let mut lex = LexiconSet::default();
        for (lineno, line) in entries(sentiment) {
            let mut cols = line.split('\t');
            let word = cols.next().unwrap_or("").trim();
            let tag = cols
                .next()
                .ok_or_else(|| Error::format(spath, lineno, "missing polarity column"))?;
            let pol = Polarity::parse(tag).ok_or_else(|| {
                Error::format(
                    spath,
                    lineno,
                    format!("unknown polarity tag {:?}", tag.trim()),
                )
            })?;
            lex.sentiment.insert(word.to_lowercase(), pol);
        }
        for (_, line) in entries(identity) {
            lex.identity.insert(line.trim());
        }
        for (_, line) in entries(hateful) {
            lex.hateful.insert(line.trim());
        }
        Ok(lex)
    }

    /// Case-folded sentiment lookup.
    pub fn sentiment(&self, word: &str) -> Option<Polarity> {
        self.sentiment.get(&word.to_lowercase()).copied()
    }
}
