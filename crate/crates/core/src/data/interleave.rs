use super::language::Paired;
use super::record::{AlignmentPair, Chunk, Record, RecordKind};
use crate::error::{Error, Result};
use crate::model::Modality;
use crate::numerics::Rng;

/// Cuts the text of `paired` into chunks of `min..=max` words and renders
/// each chunk as text or speech by a fair coin. Records with two or more
/// chunks always contain both modalities: if every coin lands the same way,
/// one uniformly chosen chunk is flipped. Adjacent chunks of the same
/// modality are kept as separate chunks.
pub fn chunk_interleave(id: u64, paired: &Paired, min: usize, max: usize, rng: &mut Rng) -> Result<Record> {
    if min == 0 || min > max {
        return Err(Error::contract(format!("invalid chunk length range {min}..={max}")));
    }
    if paired.text.is_empty() {
        return Err(Error::contract("cannot interleave an empty sample"));
    }
    let n = paired.text.len();
    let mut bounds = Vec::new();
    let mut start = 0;
    while start < n {
        let len = rng.range_inclusive(min, max);
        let end = (start + len).min(n);
        bounds.push((start, end));
        start = end;
    }
    let mut modes: Vec<Modality> = bounds
        .iter()
        .map(|_| {
            if rng.bernoulli(0.5) {
                Modality::Speech
            } else {
                Modality::Text
            }
        })
        .collect();
    if modes.len() > 1 && modes.iter().all(|&m| m == modes[0]) {
        let i = rng.below(modes.len());
        modes[i] = modes[i].other();
    }

    let mut chunks = Vec::with_capacity(bounds.len());
    let mut pairs = Vec::new();
    let mut speech_pos = 0;
    for (&(a, b), &m) in bounds.iter().zip(&modes) {
        let ids = match m {
            Modality::Text => paired.text[a..b].to_vec(),
            Modality::Speech => {
                let mut ids = Vec::new();
                for p in &paired.pairs[a..b] {
                    let span = &paired.speech[p.speech_range()];
                    pairs.push(AlignmentPair::new(p.text, (speech_pos, speech_pos + span.len())));
                    speech_pos += span.len();
                    ids.extend_from_slice(span);
                }
                ids
            }
        };
        chunks.push(Chunk { m, ids });
    }
    Ok(Record {
        id,
        kind: RecordKind::Interleaved,
        chunks,
        pairs,
    })
}

/// Chunk lengths in words, in order, recovered from a record built by
/// [`chunk_interleave`].
pub fn chunk_word_counts(record: &Record) -> Vec<usize> {
    let mut pairs = record.pairs.iter();
    record
        .chunks
        .iter()
        .map(|c| match c.m {
            Modality::Text => c.ids.len(),
            Modality::Speech => {
                let mut covered = 0;
                let mut words = 0;
                while covered < c.ids.len() {
                    let p = pairs.next().expect("speech chunk without alignment pairs");
                    covered += p.speech.1 - p.speech.0;
                    words += 1;
                }
                words
            }
        })
        .collect()
}
