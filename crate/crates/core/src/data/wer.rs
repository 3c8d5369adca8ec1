use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::record::Record;
use crate::error::{Error, Result};

/// Levenshtein distance with unit costs divided by the reference length.
pub fn wer<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    let mut prev: Vec<usize> = (0..=hypothesis.len()).collect();
    let mut cur = vec![0; hypothesis.len() + 1];
    for (i, r) in reference.iter().enumerate() {
        cur[0] = i + 1;
        for (j, h) in hypothesis.iter().enumerate() {
            let sub = prev[j] + usize::from(r != h);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[hypothesis.len()] as f64 / reference.len() as f64)
}

/// Reference words of a record's speech and the recognizer's guess at them.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transcript {
    pub id: u64,
    pub reference: Vec<u32>,
    pub hypothesis: Vec<u32>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FilterOutcome {
    pub kept: Vec<Record>,
    /// `(record id, wer)` of every discarded record, in corpus order.
    pub rejected: Vec<(u64, f64)>,
    /// Records whose WER could not be computed; they are dropped and reported.
    pub errors: Vec<(u64, String)>,
}

/// Keeps a record iff its transcript WER is strictly below `threshold`.
/// Records without a transcript pass through unchanged.
pub fn filter_corpus(
    records: &[Record],
    transcripts: &BTreeMap<u64, Transcript>,
    threshold: f64,
) -> Result<FilterOutcome> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::contract(format!(
            "filter threshold must lie in (0, 1], got {threshold}"
        )));
    }
    let mut out = FilterOutcome::default();
    for r in records {
        let Some(t) = transcripts.get(&r.id) else {
            out.kept.push(r.clone());
            continue;
        };
        match wer(&t.reference, &t.hypothesis) {
            Ok(w) if w < threshold => out.kept.push(r.clone()),
            Ok(w) => out.rejected.push((r.id, w)),
            Err(e) => out.errors.push((r.id, e.to_string())),
        }
    }
    Ok(out)
}

/// CSV log `record_id,wer` with a header line.
pub fn rejection_csv(rejected: &[(u64, f64)]) -> String {
    let mut s = String::from("record_id,wer\n");
    for (id, w) in rejected {
        s.push_str(&format!("{id},{w}\n"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_sequences_have_zero_error() {
        assert_eq!(wer(&[1, 2, 3], &[1, 2, 3]).unwrap(), 0.0);
    }

    #[test]
    fn one_substitution_in_five_is_exactly_a_fifth() {
        assert_eq!(
            wer(&['a', 'b', 'c', 'd', 'e'], &['a', 'b', 'x', 'd', 'e']).unwrap(),
            0.2
        );
    }

    #[test]
    fn empty_hypothesis_costs_one_deletion_per_word() {
        assert_eq!(wer(&[1, 2, 3, 4], &[]).unwrap(), 1.0);
        assert!(matches!(wer::<u32>(&[], &[1]), Err(Error::EmptyReference)));
    }

    #[test]
    fn insertions_can_push_wer_above_one() {
        assert_eq!(wer(&[1], &[1, 2, 3]).unwrap(), 2.0);
    }
}
