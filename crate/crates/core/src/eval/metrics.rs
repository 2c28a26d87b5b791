use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::matcher::MatchRecord;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct F1Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Binary precision, recall and F1 on `positive`. Every ratio with a zero
/// denominator is 0.
pub fn f1(predictions: &[usize], gold: &[usize], positive: usize) -> Result<F1Score> {
    if predictions.len() != gold.len() {
        return Err(Error::Invalid(format!(
            "{} predictions for {} gold labels",
            predictions.len(),
            gold.len()
        )));
    }
    let (mut tp, mut fp, mut fneg) = (0, 0, 0);
    for (&p, &g) in predictions.iter().zip(gold) {
        match (p == positive, g == positive) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(F1Score {
        precision,
        recall,
        f1,
    })
}

/// Sum of absolute gaps between per-term and overall false positive rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fprd {
    pub overall_fpr: f64,
    pub fprd: f64,
    pub per_term: BTreeMap<String, f64>,
}

impl Fprd {
    pub fn from_rates(overall_fpr: f64, per_term: BTreeMap<String, f64>) -> Self {
        let fprd = per_term.values().map(|r| (r - overall_fpr).abs()).sum();
        Fprd {
            overall_fpr,
            fprd,
            per_term,
        }
    }

    /// `items` are (term index, gold class, predicted class) triples.
    pub fn from_predictions(
        terms: &[String],
        items: &[(usize, usize, usize)],
        positive: usize,
    ) -> Result<Self> {
        let mut fp = vec![0usize; terms.len()];
        let mut neg = vec![0usize; terms.len()];
        for &(t, g, p) in items {
            if t >= terms.len() {
                return Err(Error::Invalid(format!("term index {t} out of range")));
            }
            if g != positive {
                neg[t] += 1;
                if p == positive {
                    fp[t] += 1;
                }
            }
        }
        let mut per_term = BTreeMap::new();
        for (t, term) in terms.iter().enumerate() {
            if neg[t] == 0 {
                return Err(Error::Invalid(format!(
                    "identity term {term:?} has no non-toxic instances"
                )));
            }
            per_term.insert(term.clone(), ratio(fp[t], neg[t]));
        }
        let overall = ratio(fp.iter().sum(), neg.iter().sum());
        Ok(Self::from_rates(overall, per_term))
    }
}

/// Fraction of records whose noisy label equals the instance's gold label.
pub fn matching_precision(records: &[MatchRecord], corpus: &Corpus) -> Result<f64> {
    if records.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0;
    for r in records {
        let inst = corpus.get(&r.instance_id).ok_or_else(|| {
            Error::Invalid(format!(
                "matched instance {:?} not in corpus",
                r.instance_id
            ))
        })?;
        let gold = inst.gold_label.ok_or_else(|| {
            Error::Invalid(format!("instance {:?} has no gold label", r.instance_id))
        })?;
        if gold == r.label {
            correct += 1;
        }
    }
    Ok(ratio(correct, records.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f1_hand_cases() {
        assert_eq!(f1(&[1, 0, 1], &[1, 0, 1], 1).unwrap().f1, 1.0);
        let s = f1(&[1, 1, 0], &[1, 0, 0], 1).unwrap();
        assert_eq!((s.precision, s.recall), (0.5, 1.0));
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(f1(&[0, 0], &[0, 0], 1).unwrap().f1, 0.0);
        assert!(f1(&[0], &[0, 1], 1).is_err());
    }

    #[test]
    fn fprd_hand_cases() {
        let rates = BTreeMap::from([("a".to_string(), 0.2), ("b".to_string(), 0.4)]);
        assert!((Fprd::from_rates(0.3, rates).fprd - 0.2).abs() < 1e-12);
        let same = BTreeMap::from([("a".to_string(), 0.25), ("b".to_string(), 0.25)]);
        assert_eq!(Fprd::from_rates(0.25, same).fprd, 0.0);
    }

    #[test]
    fn fprd_from_counts() {
        let terms = vec!["a".to_string(), "b".to_string()];
        // a: 1 of 5 non-toxic flagged, b: 2 of 5.
        let mut items = Vec::new();
        for i in 0..5 {
            items.push((0, 0, usize::from(i < 1)));
            items.push((1, 0, usize::from(i < 2)));
            items.push((0, 1, 1));
        }
        let f = Fprd::from_predictions(&terms, &items, 1).unwrap();
        assert!((f.overall_fpr - 0.3).abs() < 1e-12);
        assert!((f.fprd - 0.2).abs() < 1e-12);
        assert!(Fprd::from_predictions(&terms, &[(0, 0, 0)], 1).is_err());
    }
}
