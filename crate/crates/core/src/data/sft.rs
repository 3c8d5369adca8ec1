use serde::{Deserialize, Serialize};

use super::language::Language;
use super::record::{AlignmentPair, Chunk, Record, RecordKind};
use super::wer::Transcript;
use crate::error::{Error, Result};
use crate::model::{Modality, Token, BOS, EOS};
use crate::numerics::Rng;

/// Input and output modality of an SFT pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SftConfig {
    #[serde(rename = "s2s")]
    S2S,
    #[serde(rename = "s2t")]
    S2T,
    #[serde(rename = "t2s")]
    T2S,
    #[serde(rename = "t2t")]
    T2T,
}

impl SftConfig {
    pub const ALL: [SftConfig; 4] = [SftConfig::S2S, SftConfig::S2T, SftConfig::T2S, SftConfig::T2T];

    pub fn question(self) -> Modality {
        match self {
            SftConfig::S2S | SftConfig::S2T => Modality::Speech,
            SftConfig::T2S | SftConfig::T2T => Modality::Text,
        }
    }

    pub fn answer(self) -> Modality {
        match self {
            SftConfig::S2S | SftConfig::T2S => Modality::Speech,
            SftConfig::S2T | SftConfig::T2T => Modality::Text,
        }
    }
}

/// Sampling weights of the four configurations, in `SftConfig::ALL` order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SftMix {
    pub s2s: f64,
    pub s2t: f64,
    pub t2s: f64,
    pub t2t: f64,
}

impl Default for SftMix {
    fn default() -> Self {
        SftMix {
            s2s: 0.25,
            s2t: 0.25,
            t2s: 0.25,
            t2t: 0.25,
        }
    }
}

impl SftMix {
    pub fn weights(&self) -> [f64; 4] {
        [self.s2s, self.s2t, self.t2s, self.t2t]
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.weights();
        if w.iter().any(|&x| !(x >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::contract(format!(
                "sft mix weights must be nonnegative and sum to 1, got {w:?}"
            )));
        }
        Ok(())
    }
}

/// Question/answer content in text words; the answer continues the question's chain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Content {
    pub id: u64,
    pub question: Vec<u32>,
    pub answer: Vec<u32>,
}

pub fn content_pool(
    lang: &Language,
    first_id: u64,
    n: usize,
    question_len: usize,
    answer_len: usize,
    seed: u64,
) -> Vec<Content> {
    (0..n as u64)
        .map(|k| {
            let id = first_id + k;
            let mut rng = Rng::derive(seed, id);
            let question = lang.sample_text(question_len, None, &mut rng);
            let answer = lang.sample_text(answer_len, question.last().copied(), &mut rng);
            Content { id, question, answer }
        })
        .collect()
}

/// One rendered SFT example.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SftPair {
    pub content_id: u64,
    pub config: SftConfig,
    /// BOS-prefixed question.
    pub question: Vec<Token>,
    /// EOS-terminated answer.
    pub answer: Vec<Token>,
    /// Alignment of the speech sides, indexed like record pairs.
    pub pairs: Vec<AlignmentPair>,
    /// Reference words of the speech sides and their simulated recognition.
    pub transcript: Option<Transcript>,
}

impl SftPair {
    /// Renders `content` in `config`, speech sides with substitution noise `noise`.
    pub fn render(lang: &Language, content: &Content, config: SftConfig, noise: f64, rng: &mut Rng) -> SftPair {
        let mut pairs = Vec::new();
        let mut reference = Vec::new();
        let mut hypothesis = Vec::new();
        let mut speech_pos = 0;
        let mut side = |words: &[u32], word_offset: usize, m: Modality, rng: &mut Rng| -> Vec<u32> {
            match m {
                Modality::Text => words.to_vec(),
                Modality::Speech => {
                    let (speech, ps) = lang.render_speech(words, noise, rng);
                    for p in ps {
                        let span = &speech[p.speech_range()];
                        hypothesis.push(lang.decode_nearest(span));
                        pairs.push(AlignmentPair::new(
                            (p.text.0 + word_offset, p.text.1 + word_offset),
                            (p.speech.0 + speech_pos, p.speech.1 + speech_pos),
                        ));
                    }
                    speech_pos += speech.len();
                    reference.extend_from_slice(words);
                    speech
                }
            }
        };
        let q = side(&content.question, 0, config.question(), rng);
        let a = side(&content.answer, content.question.len(), config.answer(), rng);
        let mut question = vec![Token::new(config.question(), BOS)];
        question.extend(q.iter().map(|&id| Token::new(config.question(), id)));
        let mut answer: Vec<Token> = a.iter().map(|&id| Token::new(config.answer(), id)).collect();
        answer.push(Token::new(config.answer(), EOS));
        let transcript = (!reference.is_empty()).then_some(Transcript {
            id: content.id,
            reference,
            hypothesis,
        });
        SftPair {
            content_id: content.id,
            config,
            question,
            answer,
            pairs,
            transcript,
        }
    }

    /// Corpus record with id `content_id`; reserved tokens are dropped.
    pub fn to_record(&self) -> Record {
        let strip = |toks: &[Token], m: Modality| Chunk {
            m,
            ids: toks.iter().filter(|t| !t.is_reserved()).map(|t| t.id).collect(),
        };
        Record {
            id: self.content_id,
            kind: RecordKind::Sft,
            chunks: vec![
                strip(&self.question, self.config.question()),
                strip(&self.answer, self.config.answer()),
            ],
            pairs: self.pairs.clone(),
        }
    }
}

/// One pair per content item, its configuration drawn from `mix`.
pub fn build_sft(lang: &Language, pool: &[Content], mix: &SftMix, noise: f64, rng: &mut Rng) -> Result<Vec<SftPair>> {
    mix.validate()?;
    let weights = mix.weights();
    Ok(pool
        .iter()
        .map(|c| {
            let config = SftConfig::ALL[rng.categorical(&weights)];
            SftPair::render(lang, c, config, noise, rng)
        })
        .collect())
}
