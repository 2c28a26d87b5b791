use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{AnnotatedInstance, Corpus, Span};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const HEADER_TAG: &str = "EMB";
const HEADER_VERSION: &str = "v1";
const BASELINE_KEY: &str = "BASELINE";

/// Per-token vectors keyed by (instance id, token index), plus the
/// baseline vector used for padding/occlusion.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    rows: BTreeMap<String, Vec<Option<Vec<f32>>>>,
    baseline: Vec<f32>,
    missing_filled: usize,
}

impl EmbeddingTable {
    pub fn new(dim: usize, baseline: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invalid("embedding dim must be positive".into()));
        }
        if baseline.len() != dim {
            return Err(Error::Invalid(format!(
                "baseline has {} values, expected {dim}",
                baseline.len()
            )));
        }
        Ok(EmbeddingTable {
            dim,
            rows: BTreeMap::new(),
            baseline,
            missing_filled: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn baseline(&self) -> &[f32] {
        &self.baseline
    }

    pub fn baseline_as<T: Scalar>(&self) -> Vec<T> {
        self.baseline.iter().map(|&v| T::of_f32(v)).collect()
    }

    /// Number of rows replaced by the baseline during validation.
    pub fn missing_filled(&self) -> usize {
        self.missing_filled
    }

    pub fn row_count(&self) -> usize {
        self.rows.values().flatten().filter(|r| r.is_some()).count()
    }

    pub fn insert_instance(&mut self, id: &str, rows: Vec<Vec<f32>>) -> Result<()> {
        if let Some(bad) = rows.iter().position(|r| r.len() != self.dim) {
            return Err(Error::Invalid(format!(
                "instance {id:?} row {bad} has {} values, expected {}",
                rows[bad].len(),
                self.dim
            )));
        }
        self.rows
            .insert(id.to_string(), rows.into_iter().map(Some).collect());
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::format(path, 1, "empty embedding file"))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != HEADER_TAG || parts[1] != HEADER_VERSION {
            return Err(Error::format(path, 1, format!("bad header {header:?}")));
        }
        let dim: usize = parts[2]
            .parse()
            .map_err(|_| Error::format(path, 1, "header dim is not an integer"))?;
        let count: usize = parts[3]
            .parse()
            .map_err(|_| Error::format(path, 1, "header count is not an integer"))?;
        if dim == 0 {
            return Err(Error::format(path, 1, "header dim must be positive"));
        }

        let parse_floats = |lineno: usize, s: &str| -> Result<Vec<f32>> {
            let vals: std::result::Result<Vec<f32>, _> =
                s.split_whitespace().map(str::parse::<f32>).collect();
            let vals = vals.map_err(|e| Error::format(path, lineno, format!("bad float: {e}")))?;
            if vals.len() != dim {
                return Err(Error::format(
                    path,
                    lineno,
                    format!(
                        "row offset {}: {} values under dim={dim}",
                        lineno - 2,
                        vals.len()
                    ),
                ));
            }
            Ok(vals)
        };

        let mut rows: BTreeMap<String, Vec<Option<Vec<f32>>>> = BTreeMap::new();
        for _ in 0..count {
            let (lineno, line) = lines
                .next()
                .ok_or_else(|| Error::format(path, count + 1, "fewer rows than header count"))?;
            let mut cols = line.splitn(3, '\t');
            let (id, idx, vals) = match (cols.next(), cols.next(), cols.next()) {
                (Some(a), Some(b), Some(c)) => (a, b, c),
                _ => {
                    return Err(Error::format(
                        path,
                        lineno,
                        "expected id<TAB>index<TAB>values",
                    ))
                }
            };
            let idx: usize = idx
                .trim()
                .parse()
                .map_err(|_| Error::format(path, lineno, "token index is not an integer"))?;
            let vals = parse_floats(lineno, vals)?;
            let slots = rows.entry(id.to_string()).or_default();
            if slots.len() <= idx {
                slots.resize(idx + 1, None);
            }
            if slots[idx].is_some() {
                return Err(Error::format(
                    path,
                    lineno,
                    format!("duplicate row {id}:{idx}"),
                ));
            }
            slots[idx] = Some(vals);
        }
        let (lineno, line) = lines
            .next()
            .ok_or_else(|| Error::format(path, count + 2, "missing BASELINE line"))?;
        let baseline = match line.split_once('\t') {
            Some((BASELINE_KEY, vals)) => parse_floats(lineno, vals)?,
            _ => return Err(Error::format(path, lineno, "expected BASELINE<TAB>values")),
        };
        if let Some((lineno, extra)) = lines.find(|(_, l)| !l.trim().is_empty()) {
            return Err(Error::format(
                path,
                lineno,
                format!("trailing content {extra:?}"),
            ));
        }
        Ok(EmbeddingTable {
            dim,
            rows,
            baseline,
            missing_filled: 0,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(
            w,
            "{HEADER_TAG} {HEADER_VERSION} {} {}",
            self.dim,
            self.row_count()
        )
        .map_err(io)?;
        for (id, slots) in &self.rows {
            for (i, row) in slots.iter().enumerate() {
                if let Some(row) = row {
                    writeln!(w, "{id}\t{i}\t{}", render(row)).map_err(io)?;
                }
            }
        }
        writeln!(w, "{BASELINE_KEY}\t{}", render(&self.baseline)).map_err(io)?;
        w.flush().map_err(io)
    }

    /// Merges rows of another table with identical dim and baseline.
    pub fn merge(&mut self, other: EmbeddingTable) -> Result<()> {
        if other.dim != self.dim || other.baseline != self.baseline {
            return Err(Error::Invalid(
                "cannot merge embedding tables with different dim or baseline".into(),
            ));
        }
        for (id, slots) in other.rows {
            if self.rows.contains_key(&id) {
                return Err(Error::Invalid(format!(
                    "instance {id:?} present in two embedding tables"
                )));
            }
            self.rows.insert(id, slots);
        }
        Ok(())
    }

    /// Checks that every token of `corpus` has a row. With `allow_missing`
    /// absent rows become copies of the baseline and are counted.
    pub fn validate(&mut self, corpus: &Corpus, allow_missing: bool) -> Result<usize> {
        let mut filled = 0;
        for inst in corpus {
            let slots = self.rows.entry(inst.id.clone()).or_default();
            if slots.len() > inst.len() {
                return Err(Error::Invalid(format!(
                    "embedding rows for {:?} extend to index {} but the sentence has {} tokens",
                    inst.id,
                    slots.len() - 1,
                    inst.len()
                )));
            }
            slots.resize(inst.len(), None);
            for (i, slot) in slots.iter_mut().enumerate() {
                if slot.is_none() {
                    if !allow_missing {
                        return Err(Error::Invalid(format!(
                            "missing embedding row for {:?} token {i}",
                            inst.id
                        )));
                    }
                    *slot = Some(self.baseline.clone());
                    filled += 1;
                }
            }
        }
        if filled > 0 {
            log::warn!("{filled} embedding rows missing; baseline substituted");
        }
        self.missing_filled += filled;
        Ok(filled)
    }

    pub fn row(&self, id: &str, index: usize) -> Option<&[f32]> {
        self.rows.get(id)?.get(index)?.as_deref()
    }

    /// Token vectors of an instance widened to `T`.
    pub fn token_vectors<T: Scalar>(&self, inst: &AnnotatedInstance) -> Result<Vec<Vec<T>>> {
        (0..inst.len())
            .map(|i| {
                self.row(&inst.id, i)
                    .map(|r| r.iter().map(|&v| T::of_f32(v)).collect())
                    .ok_or_else(|| {
                        Error::Invalid(format!("missing embedding row for {:?} token {i}", inst.id))
                    })
            })
            .collect()
    }
}

fn render(v: &[f32]) -> String {
    v.iter()
        .map(|x| format!("{x}"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Mean of the token vectors in `span`.
pub fn phrase_vector<T: Scalar>(
    inst: &AnnotatedInstance,
    span: Span,
    table: &EmbeddingTable,
) -> Result<Vec<T>> {
    if span.is_empty() || span.end > inst.len() {
        return Err(Error::Invalid(format!(
            "span {span} is empty or outside {:?} ({} tokens)",
            inst.id,
            inst.len()
        )));
    }
    let mut acc = vec![T::zero(); table.dim()];
    for i in span.indices() {
        let row = table.row(&inst.id, i).ok_or_else(|| {
            Error::Invalid(format!("missing embedding row for {:?} token {i}", inst.id))
        })?;
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += T::of_f32(v);
        }
    }
    let n = T::of_usize(span.len());
    Ok(acc.into_iter().map(|a| a / n).collect())
}

/// Word-level vectors, used where text has no per-token rows (templates).
/// Unknown words get a deterministic vector derived from the word itself.
#[derive(Debug, Clone)]
pub struct WordVectors {
    dim: usize,
    words: HashMap<String, Vec<f32>>,
    seed: u64,
    scale: f32,
}

impl WordVectors {
    /// First occurrence (file order) of each case-folded word wins.
    pub fn from_corpora<'a>(
        corpora: impl IntoIterator<Item = &'a Corpus>,
        table: &EmbeddingTable,
        seed: u64,
    ) -> Self {
        let mut words = HashMap::new();
        let mut norm_sum = 0.0f64;
        let mut n = 0usize;
        for corpus in corpora {
            for inst in corpus {
                for (i, tok) in inst.tokens.iter().enumerate() {
                    if let Some(row) = table.row(&inst.id, i) {
                        let key = tok.text.to_lowercase();
                        if let std::collections::hash_map::Entry::Vacant(e) = words.entry(key) {
                            norm_sum += row
                                .iter()
                                .map(|&v| (v as f64) * (v as f64))
                                .sum::<f64>()
                                .sqrt();
                            n += 1;
                            e.insert(row.to_vec());
                        }
                    }
                }
            }
        }
        let dim = table.dim();
        let scale = if n > 0 {
            (norm_sum / n as f64 / (dim as f64).sqrt()) as f32
        } else {
            1.0
        };
        WordVectors {
            dim,
            words,
            seed,
            scale,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains_key(&word.to_lowercase())
    }

    pub fn get(&self, word: &str) -> Vec<f32> {
        let key = word.to_lowercase();
        if let Some(v) = self.words.get(&key) {
            return v.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(key.as_bytes()));
        (0..self.dim)
            .map(|_| {
                let z: f32 = StandardNormal.sample(&mut rng);
                z * self.scale
            })
            .collect()
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Token;

    fn corpus_12() -> Corpus {
        let mk = |id: &str, n: usize| AnnotatedInstance {
            id: id.into(),
            tokens: (0..n).map(|i| Token::bare(&format!("w{i}"))).collect(),
            deps: vec![],
            gold_label: None,
        };
        Corpus::from_instances(vec![mk("a", 5), mk("b", 4), mk("c", 3)]).unwrap()
    }

    fn table_text(skip: Option<(&str, usize)>) -> String {
        let mut lines = Vec::new();
        for (id, n) in [("a", 5), ("b", 4), ("c", 3)] {
            for i in 0..n {
                if skip == Some((id, i)) {
                    continue;
                }
                lines.push(format!("{id}\t{i}\t{} 0.5 -1 2", i as f32 * 0.25));
            }
        }
        format!(
            "EMB v1 4 {}\n{}\nBASELINE\t0 0 0 0\n",
            lines.len(),
            lines.join("\n")
        )
    }

    #[test]
    fn twelve_rows_validate_against_twelve_tokens() {
        let corpus = corpus_12();
        assert_eq!(corpus.token_count(), 12);
        let mut t = EmbeddingTable::parse(&table_text(None), Path::new("e")).unwrap();
        assert_eq!(t.row_count(), 12);
        assert_eq!(t.validate(&corpus, false).unwrap(), 0);
    }

    #[test]
    fn short_row_reports_offset() {
        let text = "EMB v1 4 2\na\t0\t1 2 3 4\na\t1\t1 2 3\nBASELINE\t0 0 0 0\n";
        let err = EmbeddingTable::parse(text, Path::new("e"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("e:3"), "{err}");
        assert!(err.contains("row offset 1"), "{err}");
    }

    #[test]
    fn missing_row_fallback() {
        let corpus = corpus_12();
        let text = table_text(Some(("b", 2)));
        let mut strict = EmbeddingTable::parse(&text, Path::new("e")).unwrap();
        assert!(strict.validate(&corpus, false).is_err());
        let mut lenient = EmbeddingTable::parse(&text, Path::new("e")).unwrap();
        assert_eq!(lenient.validate(&corpus, true).unwrap(), 1);
        assert_eq!(lenient.missing_filled(), 1);
        assert_eq!(lenient.row("b", 2).unwrap(), &[0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn round_trips_f32_bits_through_text() {
        let mut t = EmbeddingTable::new(3, vec![0.1, -0.0, 1e-30]).unwrap();
        t.insert_instance("x", vec![vec![std::f32::consts::PI, 1.0 / 3.0, -7.25e-12]])
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.emb");
        t.write(&p).unwrap();
        let back = EmbeddingTable::load(&p).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn phrase_vector_means() {
        let inst = AnnotatedInstance {
            id: "p".into(),
            tokens: vec![Token::bare("a"), Token::bare("b"), Token::bare("c")],
            deps: vec![],
            gold_label: None,
        };
        let mut t = EmbeddingTable::new(2, vec![0.0, 0.0]).unwrap();
        t.insert_instance("p", vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]])
            .unwrap();
        assert_eq!(
            phrase_vector::<f64>(&inst, Span::single(0), &t).unwrap(),
            vec![1.0, 0.0]
        );
        assert_eq!(
            phrase_vector::<f64>(&inst, Span::new(0, 2), &t).unwrap(),
            vec![0.5, 0.5]
        );
        assert_eq!(
            phrase_vector::<f64>(&inst, Span::new(1, 3), &t).unwrap(),
            vec![0.0, 1.0]
        );
        assert!(phrase_vector::<f64>(&inst, Span::new(1, 1), &t).is_err());
        assert!(phrase_vector::<f64>(&inst, Span::new(2, 4), &t).is_err());
    }

    #[test]
    fn word_vectors_are_stable_for_unknown_words() {
        let corpus = corpus_12();
        let mut t = EmbeddingTable::parse(&table_text(None), Path::new("e")).unwrap();
        t.validate(&corpus, false).unwrap();
        let wv = WordVectors::from_corpora([&corpus], &t, 7);
        assert_eq!(wv.get("W1"), t.row("a", 1).unwrap());
        assert_eq!(wv.get("zzz"), wv.get("ZZZ"));
        assert_ne!(wv.get("zzz"), wv.get("yyy"));
    }
}
