use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::record::AlignmentPair;
use crate::error::{Error, Result};
use crate::model::FIRST_CONTENT_ID;
use crate::numerics::Rng;

pub const MIN_EXPANSION: usize = 2;
pub const MAX_EXPANSION: usize = 4;

/// Parameters of the synthetic paired language.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub text_vocab: usize,
    pub speech_vocab: usize,
    pub markov_order: usize,
    /// Softmax temperature of the transition logits; lower is more predictable.
    pub temperature: f64,
    /// Per-speech-token substitution probability.
    pub noise_prob: f64,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            text_vocab: 256,
            speech_vocab: 512,
            markov_order: 1,
            temperature: 0.5,
            noise_prob: 0.02,
            seed: 0,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.markov_order != 1 {
            return Err(Error::contract(format!(
                "only markov_order 1 is supported, got {}",
                self.markov_order
            )));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::contract(format!(
                "transition temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(0.0..1.0).contains(&self.noise_prob) {
            return Err(Error::contract(format!(
                "noise_prob must lie in [0, 1), got {}",
                self.noise_prob
            )));
        }
        if self.text_vocab <= FIRST_CONTENT_ID as usize + 1 || self.speech_vocab <= FIRST_CONTENT_ID as usize + 1 {
            return Err(Error::contract("both vocabularies need at least two content ids"));
        }
        let words = self.text_vocab - FIRST_CONTENT_ID as usize;
        let units = (self.speech_vocab - FIRST_CONTENT_ID as usize) as f64;
        let codes = units.powi(MIN_EXPANSION as i32) + units.powi(3) + units.powi(MAX_EXPANSION as i32);
        if (words as f64) > codes / 4.0 {
            return Err(Error::contract("speech vocabulary too small for an injective codebook"));
        }
        Ok(())
    }

    pub fn content_words(&self) -> usize {
        self.text_vocab - FIRST_CONTENT_ID as usize
    }
}

/// A sampled Markov language over text ids and its speech codebook.
#[derive(Clone, Debug, PartialEq)]
pub struct Language {
    pub spec: CorpusSpec,
    /// Row `a` is the next-word distribution after content word `a`, indexed
    /// by content word (text id minus the reserved prefix).
    pub transitions: Vec<Vec<f64>>,
    /// Speech expansion of every text id; empty for reserved ids.
    pub codebook: Vec<Vec<u32>>,
    inverse: HashMap<Vec<u32>, u32>,
}

/// Text tokens, their speech rendering, and one alignment pair per text token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Paired {
    pub text: Vec<u32>,
    pub speech: Vec<u32>,
    pub pairs: Vec<AlignmentPair>,
}

/// Draws a transition table and codebook for `spec`.
pub fn gen_language(spec: &CorpusSpec, rng: &mut Rng) -> Result<Language> {
    spec.validate()?;
    let words = spec.content_words();
    let transitions = (0..words)
        .map(|_| {
            let logits: Vec<f64> = (0..words).map(|_| rng.normal() / spec.temperature).collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let z: f64 = exp.iter().sum();
            exp.into_iter().map(|e| e / z).collect()
        })
        .collect();
    let units = spec.speech_vocab - FIRST_CONTENT_ID as usize;
    let mut codebook = vec![Vec::new(); FIRST_CONTENT_ID as usize];
    let mut inverse = HashMap::new();
    for id in FIRST_CONTENT_ID..spec.text_vocab as u32 {
        loop {
            let len = rng.range_inclusive(MIN_EXPANSION, MAX_EXPANSION);
            let code: Vec<u32> = (0..len).map(|_| FIRST_CONTENT_ID + rng.below(units) as u32).collect();
            if !inverse.contains_key(&code) {
                inverse.insert(code.clone(), id);
                codebook.push(code);
                break;
            }
        }
    }
    Ok(Language {
        spec: *spec,
        transitions,
        codebook,
        inverse,
    })
}

impl Language {
    /// The language determined by `spec.seed`.
    pub fn from_spec(spec: &CorpusSpec) -> Result<Self> {
        gen_language(spec, &mut Rng::new(spec.seed))
    }

    pub fn words(&self) -> usize {
        self.transitions.len()
    }

    /// Next-word probability `P(next | prev)` over text ids.
    pub fn transition(&self, prev: u32, next: u32) -> f64 {
        let f = FIRST_CONTENT_ID;
        self.transitions[(prev - f) as usize][(next - f) as usize]
    }

    /// Samples the word following `prev`, or a uniform first word.
    pub fn next_word(&self, prev: Option<u32>, rng: &mut Rng) -> u32 {
        let i = match prev {
            Some(p) => rng.categorical(&self.transitions[(p - FIRST_CONTENT_ID) as usize]),
            None => rng.below(self.words()),
        };
        FIRST_CONTENT_ID + i as u32
    }

    /// `length` words continuing after `prev` (uniform start when `None`).
    pub fn sample_text(&self, length: usize, prev: Option<u32>, rng: &mut Rng) -> Vec<u32> {
        let mut out = Vec::with_capacity(length);
        let mut last = prev;
        for _ in 0..length {
            let w = self.next_word(last, rng);
            out.push(w);
            last = Some(w);
        }
        out
    }

    /// Speech rendering of `text`, substituting each speech token with a
    /// uniformly drawn different content id with probability `noise`.
    pub fn render_speech(&self, text: &[u32], noise: f64, rng: &mut Rng) -> (Vec<u32>, Vec<AlignmentPair>) {
        let units = self.spec.speech_vocab - FIRST_CONTENT_ID as usize;
        let mut speech = Vec::new();
        let mut pairs = Vec::with_capacity(text.len());
        for (i, &w) in text.iter().enumerate() {
            let start = speech.len();
            for &s in &self.codebook[w as usize] {
                if noise > 0.0 && rng.bernoulli(noise) {
                    let shift = 1 + rng.below(units - 1) as u32;
                    let off = (s - FIRST_CONTENT_ID + shift) % units as u32;
                    speech.push(FIRST_CONTENT_ID + off);
                } else {
                    speech.push(s);
                }
            }
            pairs.push(AlignmentPair::new((i, i + 1), (start, speech.len())));
        }
        (speech, pairs)
    }

    /// Exact inverse of the codebook.
    pub fn decode_exact(&self, span: &[u32]) -> Option<u32> {
        self.inverse.get(span).copied()
    }

    /// Nearest codebook word to `span`: Hamming distance over the common
    /// prefix plus the length difference; the lowest text id wins ties.
    pub fn decode_nearest(&self, span: &[u32]) -> u32 {
        if let Some(w) = self.decode_exact(span) {
            return w;
        }
        let mut best = (usize::MAX, FIRST_CONTENT_ID);
        for (id, code) in self.codebook.iter().enumerate().skip(FIRST_CONTENT_ID as usize) {
            let d = code.iter().zip(span).filter(|(a, b)| a != b).count() + code.len().abs_diff(span.len());
            if d < best.0 {
                best = (d, id as u32);
            }
        }
        best.1
    }
}

/// A Markov text of `length` words with its (noisy) speech rendering.
pub fn sample_paired(lang: &Language, length: usize, rng: &mut Rng) -> Result<Paired> {
    if length == 0 {
        return Err(Error::contract("paired sample needs at least one word"));
    }
    let text = lang.sample_text(length, None, rng);
    let (speech, pairs) = lang.render_speech(&text, lang.spec.noise_prob, rng);
    Ok(Paired { text, speech, pairs })
}
