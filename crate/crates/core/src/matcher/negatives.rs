use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::MatchRecord;
use crate::corpus::Corpus;
use crate::error::{Error, Result};

/// Rule id carried by sampled negative records.
pub const NEGATIVE_RULE_ID: &str = "negative-sample";

/// Samples `n` distinct instances not matched by any rule, uniformly
/// without replacement, and labels them `negative_class`. Output follows
/// corpus order.
pub fn balance_negatives(
    corpus: &Corpus,
    matched: &[MatchRecord],
    n: usize,
    negative_class: usize,
    seed: u64,
) -> Result<Vec<MatchRecord>> {
    let hit: BTreeSet<&str> = matched.iter().map(|r| r.instance_id.as_str()).collect();
    let pool: Vec<usize> = corpus
        .iter()
        .enumerate()
        .filter(|(_, x)| !hit.contains(x.id.as_str()))
        .map(|(i, _)| i)
        .collect();
    if n > pool.len() {
        return Err(Error::Invalid(format!(
            "requested {n} negative samples but only {} instances are unmatched",
            pool.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, pool.len(), n)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    picked.sort_unstable();
    Ok(picked
        .into_iter()
        .map(|i| MatchRecord {
            instance_id: corpus.instances()[i].id.clone(),
            rule_id: NEGATIVE_RULE_ID.to_string(),
            label: negative_class,
            z: 1.0,
            bindings: Default::default(),
            advice: Vec::new(),
        })
        .collect())
}
