use std::fs;
use std::path::Path;

use crate::corpus::WordVectors;
use crate::error::{Error, Result};
use crate::refine::ModelState;
use crate::scalar::Scalar;

use super::metrics::Fprd;

pub const SLOT: &str = "{identity}";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub label: usize,
    /// Words before and after the identity slot.
    pub before: Vec<String>,
    pub after: Vec<String>,
}

/// Sentence templates with one identity slot, plus the identity terms
/// that fill it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    pub templates: Vec<Template>,
    pub terms: Vec<String>,
}

/// One filled template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateInstance {
    pub term: usize,
    pub label: usize,
    pub words: Vec<String>,
}

fn resolve_label(s: &str, classes: &[String]) -> Option<usize> {
    classes
        .iter()
        .position(|c| c.eq_ignore_ascii_case(s))
        .or_else(|| s.parse::<usize>().ok().filter(|&i| i < classes.len()))
}

impl TemplateSet {
    /// Parses `<label>\t<text with {identity}>` lines and one term per
    /// line. Labels are class names or indices; blank lines and `#`
    /// comments are skipped.
    pub fn parse(templates: &str, terms: &str, classes: &[String], path: &Path) -> Result<Self> {
        let mut out = Vec::new();
        for (i, line) in templates.lines().enumerate() {
            let line = line.trim_end();
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let (label, text) = line
                .split_once('\t')
                .ok_or_else(|| Error::format(path, i + 1, "expected <label><TAB><text>"))?;
            let label = resolve_label(label.trim(), classes)
                .ok_or_else(|| Error::format(path, i + 1, format!("unknown label {label:?}")))?;
            if text.matches(SLOT).count() != 1 {
                return Err(Error::format(
                    path,
                    i + 1,
                    format!("template must contain exactly one {SLOT}"),
                ));
            }
            let (before, after) = text.split_once(SLOT).expect("slot counted above");
            let words = |s: &str| s.split_whitespace().map(str::to_string).collect::<Vec<_>>();
            out.push(Template {
                label,
                before: words(before),
                after: words(after),
            });
        }
        let terms: Vec<String> = terms
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_string)
            .collect();
        if out.is_empty() || terms.is_empty() {
            return Err(Error::Invalid(
                "template set needs at least one template and one term".into(),
            ));
        }
        Ok(TemplateSet {
            templates: out,
            terms,
        })
    }

    pub fn load(
        templates: impl AsRef<Path>,
        terms: impl AsRef<Path>,
        classes: &[String],
    ) -> Result<Self> {
        let (tp, rp) = (templates.as_ref(), terms.as_ref());
        let t = fs::read_to_string(tp).map_err(|e| Error::io(tp, e))?;
        let r = fs::read_to_string(rp).map_err(|e| Error::io(rp, e))?;
        Self::parse(&t, &r, classes, tp)
    }

    /// Every template filled with every term, template-major.
    pub fn instantiate(&self) -> Vec<TemplateInstance> {
        let mut out = Vec::with_capacity(self.templates.len() * self.terms.len());
        for t in &self.templates {
            for (k, term) in self.terms.iter().enumerate() {
                let mut words = t.before.clone();
                words.extend(term.split_whitespace().map(str::to_string));
                words.extend(t.after.iter().cloned());
                out.push(TemplateInstance {
                    term: k,
                    label: t.label,
                    words,
                });
            }
        }
        out
    }

    /// FPRD of `model` over all instantiations.
    pub fn fprd<T: Scalar>(
        &self,
        model: &ModelState<T>,
        vectors: &WordVectors,
        positive: usize,
    ) -> Result<Fprd> {
        let mut items = Vec::new();
        for inst in self.instantiate() {
            let tokens = word_tokens::<T>(&inst.words, vectors);
            items.push((inst.term, inst.label, model.predict(&tokens)?));
        }
        Fprd::from_predictions(&self.terms, &items, positive)
    }
}

/// Word vectors of `words`, widened to `T`.
pub fn word_tokens<T: Scalar>(words: &[String], vectors: &WordVectors) -> Vec<Vec<T>> {
    words
        .iter()
        .map(|w| vectors.get(w).into_iter().map(T::of_f32).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instantiation_crosses_templates_and_terms() {
        let classes = vec!["non-hate".to_string(), "hate".to_string()];
        let set = TemplateSet::parse(
            "non-hate\ti am {identity}\nhate\t{identity} are vermin\n",
            "muslims\nblack people\n",
            &classes,
            Path::new("t"),
        )
        .unwrap();
        let all = set.instantiate();
        assert_eq!(all.len(), 4);
        assert_eq!(all[1].words, ["i", "am", "black", "people"]);
        assert_eq!(all[2].label, 1);
        assert!(TemplateSet::parse("0\tno slot\n", "a\n", &classes, Path::new("t")).is_err());
        assert!(TemplateSet::parse(
            "0\t{identity} {identity}\n",
            "a\n",
            &classes,
            Path::new("t")
        )
        .is_err());
    }
}
