use super::lm::{Heads, LanguageModel};
use super::token::{Modality, Token, EOS, MODE_SWITCH};
use crate::error::{Error, Result};
use crate::numerics::{Rng, Scalar};

/// Which heads generation may sample from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GenMode {
    TextOnly,
    SpeechOnly,
    /// Starts in the prompt's last modality and flips whenever MODE_SWITCH is emitted.
    Interleaved,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Decoding {
    Argmax,
    /// `top_k == 0` keeps the whole vocabulary.
    Sample {
        temperature: f64,
        top_k: usize,
    },
}

/// Continues `prompt` by up to `max_new` tokens and returns the new tokens.
/// Stops after emitting EOS or when the context is full.
pub fn generate<F, M>(
    model: &M,
    prompt: &[Token],
    mode: GenMode,
    max_new: usize,
    decoding: Decoding,
    rng: &mut Rng,
) -> Result<Vec<Token>>
where
    F: Scalar,
    M: LanguageModel<F> + ?Sized,
{
    match prompt.first() {
        Some(t) if t.id == super::token::BOS => {}
        _ => return Err(Error::contract("prompt must start with BOS")),
    }
    if let Decoding::Sample { temperature, .. } = decoding {
        if !(temperature > 0.0) {
            return Err(Error::contract(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
    }
    let mut active = match mode {
        GenMode::TextOnly => Modality::Text,
        GenMode::SpeechOnly => Modality::Speech,
        GenMode::Interleaved => prompt[prompt.len() - 1].modality,
    };
    let mut seq = prompt.to_vec();
    let mut out = Vec::new();
    while out.len() < max_new && seq.len() < model.max_seq() {
        let logits = model.logits(&seq, Heads::only(active))?;
        let m = logits
            .get(active)
            .ok_or_else(|| Error::contract(format!("model produced no {} logits", active.as_str())))?;
        let row: Vec<f64> = m.row(m.rows() - 1).iter().map(|x| x.as_f64()).collect();
        let id = pick(&row, decoding, rng) as u32;
        let tok = Token::new(active, id);
        seq.push(tok);
        out.push(tok);
        if id == EOS {
            break;
        }
        if id == MODE_SWITCH && mode == GenMode::Interleaved {
            active = active.other();
        }
    }
    Ok(out)
}

fn pick(row: &[f64], decoding: Decoding, rng: &mut Rng) -> usize {
    match decoding {
        Decoding::Argmax => argmax(row),
        Decoding::Sample { temperature, top_k } => {
            let mut order: Vec<usize> = (0..row.len()).collect();
            if top_k > 0 && top_k < row.len() {
                order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
                order.truncate(top_k);
                order.sort_unstable();
            }
            let max = order.iter().map(|&i| row[i]).fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = order.iter().map(|&i| ((row[i] - max) / temperature).exp()).collect();
            order[rng.categorical(&weights)]
        }
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}
