use std::collections::BTreeSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::MatchRecord;
use crate::error::{Error, Result};

/// Writes records as line-delimited JSON.
pub fn write_matches(path: impl AsRef<Path>, records: &[MatchRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Invalid(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_matches(path: impl AsRef<Path>) -> Result<Vec<MatchRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::format(path, i + 1, format!("malformed match record: {e}")))
        })
        .collect()
}

/// Counts mirroring a strict/soft/balanced comparison, plus a histogram
/// of soft confidences over ten equal-width bins of [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchSummary {
    pub strict: usize,
    pub soft: usize,
    pub balanced: usize,
    pub strict_instances: usize,
    pub soft_instances: usize,
    pub z_histogram: Vec<usize>,
    /// Every strict (instance, rule) pair also appears in the soft output
    /// with z = 1.
    pub soft_contains_strict: bool,
}

impl MatchSummary {
    pub fn new(strict: &[MatchRecord], soft: &[MatchRecord], balanced: usize) -> Self {
        let mut z_histogram = vec![0; 10];
        for r in soft {
            let bin = ((r.z * 10.0).floor() as usize).min(9);
            z_histogram[bin] += 1;
        }
        let soft_full: BTreeSet<(&str, &str)> = soft
            .iter()
            .filter(|r| r.z == 1.0)
            .map(|r| (r.instance_id.as_str(), r.rule_id.as_str()))
            .collect();
        let instances = |rs: &[MatchRecord]| {
            rs.iter()
                .map(|r| r.instance_id.as_str())
                .collect::<BTreeSet<_>>()
                .len()
        };
        MatchSummary {
            strict: strict.len(),
            soft: soft.len(),
            balanced,
            strict_instances: instances(strict),
            soft_instances: instances(soft),
            z_histogram,
            soft_contains_strict: strict
                .iter()
                .all(|r| soft_full.contains(&(r.instance_id.as_str(), r.rule_id.as_str()))),
        }
    }
}
