use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Modality, Sequence, Token, BOS, EOS, FIRST_CONTENT_ID, MODE_SWITCH};

/// Half-open index ranges `[start, end)` tying text tokens to speech tokens.
///
/// The text span indexes the record's logical word sequence (every word,
/// whichever modality it is rendered in); the speech span indexes the
/// concatenation of the record's speech chunks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[[usize; 2]; 2]", into = "[[usize; 2]; 2]")]
pub struct AlignmentPair {
    pub text: (usize, usize),
    pub speech: (usize, usize),
}

impl AlignmentPair {
    pub fn new(text: (usize, usize), speech: (usize, usize)) -> Self {
        AlignmentPair { text, speech }
    }

    pub fn text_range(&self) -> std::ops::Range<usize> {
        self.text.0..self.text.1
    }

    pub fn speech_range(&self) -> std::ops::Range<usize> {
        self.speech.0..self.speech.1
    }
}

impl From<[[usize; 2]; 2]> for AlignmentPair {
    fn from([[t0, t1], [s0, s1]]: [[usize; 2]; 2]) -> Self {
        AlignmentPair::new((t0, t1), (s0, s1))
    }
}

impl From<AlignmentPair> for [[usize; 2]; 2] {
    fn from(p: AlignmentPair) -> Self {
        [[p.text.0, p.text.1], [p.speech.0, p.speech.1]]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    Interleaved,
    Unsup,
    Sft,
    /// Plain text, used for base pretraining and the Stage-2 text mix.
    Text,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Chunk {
    pub m: Modality,
    pub ids: Vec<u32>,
}

/// One corpus unit: modality-tagged chunks of content ids plus alignments.
///
/// Chunks hold content ids only; BOS, MODE_SWITCH and EOS are added when the
/// record is turned into a training sequence. SFT records have exactly two
/// chunks, the question and the answer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub id: u64,
    pub kind: RecordKind,
    pub chunks: Vec<Chunk>,
    pub pairs: Vec<AlignmentPair>,
}

impl Record {
    pub fn speech_len(&self) -> usize {
        self.chunks
            .iter()
            .filter(|c| c.m == Modality::Speech)
            .map(|c| c.ids.len())
            .sum()
    }

    /// Concatenated ids of every chunk in `m`.
    pub fn stream(&self, m: Modality) -> Vec<u32> {
        self.chunks
            .iter()
            .filter(|c| c.m == m)
            .flat_map(|c| c.ids.iter().copied())
            .collect()
    }

    pub fn has(&self, m: Modality) -> bool {
        self.chunks.iter().any(|c| c.m == m)
    }

    pub fn validate(&self, text_vocab: Option<usize>, speech_vocab: Option<usize>) -> Result<()> {
        let fail = |msg: String| Err(Error::contract(format!("record {}: {msg}", self.id)));
        if self.chunks.is_empty() || self.chunks.iter().any(|c| c.ids.is_empty()) {
            return fail("chunks must be present and nonempty".into());
        }
        for c in &self.chunks {
            let limit = match c.m {
                Modality::Text => text_vocab,
                Modality::Speech => speech_vocab,
            };
            if let Some(&bad) = c
                .ids
                .iter()
                .find(|&&id| id < FIRST_CONTENT_ID || limit.is_some_and(|l| id as usize >= l))
            {
                return fail(format!("{} id {bad} is reserved or out of range", c.m.as_str()));
            }
        }
        match self.kind {
            RecordKind::Unsup if self.has(Modality::Text) || !self.pairs.is_empty() => {
                return fail("unsupervised records hold speech only and no pairs".into())
            }
            RecordKind::Text if self.has(Modality::Speech) || !self.pairs.is_empty() => {
                return fail("text records hold text only and no pairs".into())
            }
            RecordKind::Sft if self.chunks.len() != 2 => {
                return fail("sft records have a question and an answer chunk".into())
            }
            RecordKind::Interleaved
                if self.chunks.len() > 1 && !(self.has(Modality::Text) && self.has(Modality::Speech)) =>
            {
                return fail("interleaved records must contain both modalities".into())
            }
            _ => {}
        }
        let speech_len = self.speech_len();
        let mut prev: Option<&AlignmentPair> = None;
        for p in &self.pairs {
            if p.text.0 >= p.text.1 || p.speech.0 >= p.speech.1 || p.speech.1 > speech_len {
                return fail(format!(
                    "pair {:?} is empty or outside the record",
                    <[[usize; 2]; 2]>::from(*p)
                ));
            }
            if let Some(q) = prev {
                if p.text.0 < q.text.1 || p.speech.0 < q.speech.1 {
                    return fail("pairs must be ordered and non-overlapping".into());
                }
            }
            prev = Some(p);
        }
        Ok(())
    }

    /// Tokens of the training sequence: BOS in the first chunk's modality,
    /// MODE_SWITCH (in the outgoing modality) at every modality change, EOS
    /// in the final modality. Also returns the index where the final chunk
    /// begins its contribution, counting its MODE_SWITCH.
    fn tokens_with_answer_start(&self) -> (Vec<Token>, usize) {
        let first = self.chunks[0].m;
        let mut toks = vec![Token::new(first, BOS)];
        let mut current = first;
        let mut last_start = 0;
        for c in &self.chunks {
            last_start = toks.len();
            if c.m != current {
                toks.push(Token::new(current, MODE_SWITCH));
                current = c.m;
            }
            toks.extend(c.ids.iter().map(|&id| Token::new(c.m, id)));
        }
        toks.push(Token::new(current, EOS));
        (toks, last_start)
    }

    pub fn tokens(&self) -> Vec<Token> {
        self.tokens_with_answer_start().0
    }

    /// Training sequence of at most `max_len` tokens. SFT records supervise
    /// only the positions predicting the answer (its MODE_SWITCH, content and EOS).
    pub fn to_sequence(&self, max_len: usize) -> Result<Sequence> {
        let (toks, answer_start) = self.tokens_with_answer_start();
        let n = toks.len();
        let seq = if self.kind == RecordKind::Sft {
            let mask = (0..n).map(|p| p + 1 < n && p + 1 >= answer_start).collect();
            Sequence::new(toks, mask)?
        } else {
            Sequence::fully_supervised(toks)?
        };
        seq.truncated(max_len)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(kind: RecordKind, chunks: &[(Modality, &[u32])]) -> Record {
        Record {
            id: 1,
            kind,
            chunks: chunks
                .iter()
                .map(|(m, ids)| Chunk {
                    m: *m,
                    ids: ids.to_vec(),
                })
                .collect(),
            pairs: vec![],
        }
    }

    #[test]
    fn interleaved_tokens_mark_every_modality_change() {
        use Modality::*;
        let r = rec(
            RecordKind::Interleaved,
            &[(Text, &[5, 6]), (Speech, &[9]), (Text, &[7])],
        );
        let toks = r.tokens();
        let expect = vec![
            Token::text(BOS),
            Token::text(5),
            Token::text(6),
            Token::text(MODE_SWITCH),
            Token::speech(9),
            Token::speech(MODE_SWITCH),
            Token::text(7),
            Token::text(EOS),
        ];
        assert_eq!(toks, expect);
    }

    #[test]
    fn sft_sequences_supervise_only_the_answer() {
        use Modality::*;
        let r = rec(RecordKind::Sft, &[(Speech, &[4, 5]), (Text, &[8, 9])]);
        let seq = r.to_sequence(100).unwrap();
        // BOS 4 5 SW 8 9 EOS: targets SW, 8, 9, EOS are supervised.
        assert_eq!(seq.loss_mask(), &[false, false, true, true, true, true, false]);
    }

    #[test]
    fn pairs_serialize_as_nested_arrays() {
        let p = AlignmentPair::new((0, 1), (2, 5));
        assert_eq!(serde_json::to_string(&p).unwrap(), "[[0,1],[2,5]]");
    }

    #[test]
    fn validation_catches_broken_records() {
        use Modality::*;
        assert!(rec(RecordKind::Unsup, &[(Text, &[4])]).validate(None, None).is_err());
        assert!(rec(RecordKind::Interleaved, &[(Text, &[4]), (Text, &[5])])
            .validate(None, None)
            .is_err());
        assert!(rec(RecordKind::Text, &[(Text, &[1])]).validate(None, None).is_err());
        let mut r = rec(RecordKind::Interleaved, &[(Text, &[4]), (Speech, &[5, 6])]);
        r.pairs = vec![AlignmentPair::new((1, 2), (0, 3))];
        assert!(r.validate(None, None).is_err());
        r.pairs = vec![AlignmentPair::new((1, 2), (0, 2))];
        assert!(r.validate(Some(10), Some(10)).is_ok());
    }
}
