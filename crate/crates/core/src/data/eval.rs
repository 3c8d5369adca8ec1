use serde::{Deserialize, Serialize};

use super::language::Language;
use crate::error::{Error, Result};
use crate::model::{Modality, Token, BOS, FIRST_CONTENT_ID};
use crate::numerics::Rng;

/// Attempts at drawing a distractor whose rendering matches the true length.
const DISTRACTOR_TRIES: usize = 64;

/// A ranked-continuation item. All three id lists are in modality `m`; the
/// prefix starts with BOS.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalItem {
    pub m: Modality,
    pub prefix: Vec<u32>,
    pub truth: Vec<u32>,
    pub distractor: Vec<u32>,
}

impl EvalItem {
    pub fn prefix_tokens(&self) -> Vec<Token> {
        self.prefix.iter().map(|&id| Token::new(self.m, id)).collect()
    }

    pub fn continuation_tokens(&self, distractor: bool) -> Vec<Token> {
        let ids = if distractor { &self.distractor } else { &self.truth };
        ids.iter().map(|&id| Token::new(self.m, id)).collect()
    }
}

fn render(lang: &Language, m: Modality, words: &[u32], rng: &mut Rng) -> Vec<u32> {
    match m {
        Modality::Text => words.to_vec(),
        Modality::Speech => lang.render_speech(words, lang.spec.noise_prob, rng).0,
    }
}

/// A Markov text of `prefix_words + cont_words` words split into prefix and
/// true continuation. The distractor continues the chain from a different,
/// uniformly chosen word, so it is fluent on its own but a poor fit for the
/// prefix. Speech distractors are redrawn until their rendering has the true
/// continuation's length; failing that, both are cut to the shorter one.
pub fn gen_eval_item(
    lang: &Language,
    m: Modality,
    prefix_words: usize,
    cont_words: usize,
    rng: &mut Rng,
) -> Result<EvalItem> {
    if prefix_words == 0 || cont_words == 0 {
        return Err(Error::contract("eval items need a nonempty prefix and continuation"));
    }
    if lang.words() < 2 {
        return Err(Error::contract("distractors need at least two content words"));
    }
    let words = lang.sample_text(prefix_words + cont_words, None, rng);
    let (pw, tw) = words.split_at(prefix_words);
    let last = pw[prefix_words - 1];
    let mut prefix = vec![BOS];
    prefix.extend(render(lang, m, pw, rng));
    let truth = render(lang, m, tw, rng);

    let mut best: Option<Vec<u32>> = None;
    for _ in 0..DISTRACTOR_TRIES {
        let mut other = FIRST_CONTENT_ID + rng.below(lang.words() - 1) as u32;
        if other >= last {
            other += 1;
        }
        let dw = lang.sample_text(cont_words, Some(other), rng);
        if dw == tw {
            continue;
        }
        let d = render(lang, m, &dw, rng);
        if d.len() == truth.len() {
            best = Some(d);
            break;
        }
        if best.is_none() {
            best = Some(d);
        }
    }
    let mut distractor = best.unwrap_or_else(|| truth.clone());
    let mut truth = truth;
    let n = truth.len().min(distractor.len());
    truth.truncate(n);
    distractor.truncate(n);
    Ok(EvalItem {
        m,
        prefix,
        truth,
        distractor,
    })
}
