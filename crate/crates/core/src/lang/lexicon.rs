//! Surface-phrase to predicate-template mapping.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::corpus::Polarity;
use crate::error::{Error, Result};

use super::ast::Characteristic;

const BUILTIN: &str = include_str!("../../data/expl_lexicon.tsv");

/// Relation family named by a lexicon entry. `k` is fixed by the entry's
/// args column or captured from a `{k}` slot in the surface phrase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelTemplate {
    ImmediatelyBefore,
    ImmediatelyAfter,
    WithinBefore(Option<usize>),
    WithinAfter(Option<usize>),
    Within(Option<usize>),
    Modifies,
    ModifiedBy,
    SubjectOf,
    HasSubject,
    DepWithin(Option<usize>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Template {
    Char(Characteristic),
    Rel(RelTemplate),
    Filler,
    And,
    Or,
}

impl Template {
    fn parse(name: &str, args: &str) -> std::result::Result<Template, String> {
        let arg = args.trim();
        let k = || -> std::result::Result<Option<usize>, String> {
            if arg.is_empty() {
                Ok(None)
            } else {
                arg.parse()
                    .map(Some)
                    .map_err(|_| format!("bad distance argument {arg:?}"))
            }
        };
        let need = |what: &str| -> std::result::Result<String, String> {
            if arg.is_empty() {
                Err(format!("template {name} needs a {what} argument"))
            } else {
                Ok(arg.to_string())
            }
        };
        Ok(match name.trim() {
            "filler" => Template::Filler,
            "and" => Template::And,
            "or" => Template::Or,
            "ner" => Template::Char(Characteristic::Ner(need("type")?.to_uppercase())),
            "pos" => Template::Char(Characteristic::Pos(need("tag")?.to_uppercase())),
            "sentiment" => Template::Char(Characteristic::Sentiment(
                Polarity::parse(&need("polarity")?)
                    .ok_or_else(|| format!("unknown polarity {arg:?}"))?,
            )),
            "identity" => Template::Char(Characteristic::Identity),
            "hateful" => Template::Char(Characteristic::Hateful),
            "immediately_before" => Template::Rel(RelTemplate::ImmediatelyBefore),
            "immediately_after" => Template::Rel(RelTemplate::ImmediatelyAfter),
            "within_before" => Template::Rel(RelTemplate::WithinBefore(k()?)),
            "within_after" => Template::Rel(RelTemplate::WithinAfter(k()?)),
            "within" => Template::Rel(RelTemplate::Within(k()?)),
            "modifies" => Template::Rel(RelTemplate::Modifies),
            "modified_by" => Template::Rel(RelTemplate::ModifiedBy),
            "subject_of" => Template::Rel(RelTemplate::SubjectOf),
            "has_subject" => Template::Rel(RelTemplate::HasSubject),
            "dep_within" => Template::Rel(RelTemplate::DepWithin(k()?)),
            other => return Err(format!("unknown template {other:?}")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum PatTok {
    Word(String),
    Num,
}

#[derive(Debug, Clone)]
pub(crate) struct Entry {
    pub pattern: Vec<PatTok>,
    pub template: Template,
}

/// The phrase lexicon. Lookup is longest-match-first over word tokens.
#[derive(Debug, Clone, Default)]
pub struct ExplLexicon {
    entries: BTreeMap<String, Entry>,
}

pub(crate) fn number_word(w: &str) -> Option<usize> {
    const WORDS: [&str; 11] = [
        "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    ];
    if let Ok(n) = w.parse() {
        return Some(n);
    }
    WORDS.iter().position(|&x| x == w)
}

fn normalize(surface: &str) -> String {
    surface
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

impl ExplLexicon {
    /// The lexicon shipped with the crate.
    pub fn builtin() -> Self {
        let mut lex = ExplLexicon::default();
        lex.extend_from_str(BUILTIN, Path::new("<builtin lexicon>"))
            .expect("builtin lexicon is well formed");
        lex
    }

    /// Reads a lexicon file on its own (no builtin entries).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut lex = ExplLexicon::default();
        lex.extend_from_file(path)?;
        Ok(lex)
    }

    pub fn extend_from_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.extend_from_str(&text, path)
    }

    pub fn extend_from_str(&mut self, text: &str, path: &Path) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let mut cols = line.split('\t');
            let surface = cols.next().unwrap_or("");
            let name = cols.next().ok_or_else(|| {
                Error::format(path, lineno, "expected surface<TAB>template[<TAB>args]")
            })?;
            let args = cols.next().unwrap_or("");
            let template =
                Template::parse(name, args).map_err(|m| Error::format(path, lineno, m))?;
            self.insert(surface, template)
                .map_err(|m| Error::format(path, lineno, m))?;
        }
        Ok(())
    }

    /// Adds an entry. Re-adding an identical entry is a no-op; mapping an
    /// existing surface phrase to a different template is an error.
    pub fn insert(&mut self, surface: &str, template: Template) -> std::result::Result<(), String> {
        let key = normalize(surface);
        if key.is_empty() {
            return Err("empty surface phrase".into());
        }
        if let Some(old) = self.entries.get(&key) {
            if old.template == template {
                return Ok(());
            }
            return Err(format!(
                "conflicting entries for {key:?}: {:?} vs {:?}",
                old.template, template
            ));
        }
        let pattern = key
            .split(' ')
            .map(|w| {
                if w == "{k}" {
                    PatTok::Num
                } else {
                    PatTok::Word(w.to_string())
                }
            })
            .collect();
        self.entries.insert(key, Entry { pattern, template });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, surface: &str) -> Option<&Template> {
        self.entries.get(&normalize(surface)).map(|e| &e.template)
    }

    /// Longest entry matching `words[start..]`, with the number captured by
    /// a `{k}` slot. Returns (entry, tokens consumed, k).
    pub(crate) fn longest_match(
        &self,
        words: &[&str],
        start: usize,
    ) -> Option<(&Entry, usize, Option<usize>)> {
        let mut best: Option<(&Entry, usize, Option<usize>)> = None;
        for e in self.entries.values() {
            let n = e.pattern.len();
            if start + n > words.len() || best.is_some_and(|(_, m, _)| m >= n) {
                continue;
            }
            let mut k = None;
            let ok = e
                .pattern
                .iter()
                .zip(&words[start..start + n])
                .all(|(p, w)| match p {
                    PatTok::Word(s) => s == w,
                    PatTok::Num => match number_word(w) {
                        Some(v) => {
                            k = Some(v);
                            true
                        }
                        None => false,
                    },
                });
            if ok {
                best = Some((e, n, k));
            }
        }
        best
    }

    /// Closest surface phrase by edit distance, for diagnostics.
    pub fn suggest(&self, word: &str) -> Option<&str> {
        self.entries
            .keys()
            .filter(|k| !k.contains("{k}"))
            .map(|k| (strsim::levenshtein(k, word), k))
            .min()
            .filter(|(d, k)| *d <= (k.len().max(word.len()) / 2).max(2))
            .map(|(_, k)| k.as_str())
    }
}
