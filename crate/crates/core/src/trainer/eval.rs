use crate::data::{EvalItem, Record};
use crate::error::{Error, Result};
use crate::model::{Heads, LanguageModel, Modality, Token};
use crate::numerics::{Matrix, Scalar};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankedAccuracy {
    pub accuracy: f64,
    pub scored: usize,
    /// Items skipped for mismatched or empty continuations.
    pub skipped: usize,
}

/// Mean log-probability of `ids` where `ids[j]` is predicted by logits row
/// `first_row + j`. Rows are normalized on their own.
pub fn continuation_logprob<F: Scalar>(logits: &Matrix<F>, first_row: usize, ids: &[u32]) -> Result<f64> {
    if ids.is_empty() {
        return Err(Error::contract("empty continuation"));
    }
    if first_row + ids.len() > logits.rows() {
        return Err(Error::contract("continuation runs past the logits"));
    }
    let mut total = 0.0;
    for (j, &id) in ids.iter().enumerate() {
        let row: Vec<f64> = logits.row(first_row + j).iter().map(|x| x.as_f64()).collect();
        let id = id as usize;
        if id >= row.len() {
            return Err(Error::contract(format!("id {id} outside a {}-way head", row.len())));
        }
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        total += row[id] - lse;
    }
    Ok(total / ids.len() as f64)
}

/// 1 when the true ending scores higher, 0 when lower, 0.5 on a tie.
pub fn rank_outcome(truth: f64, distractor: f64) -> f64 {
    if truth > distractor {
        1.0
    } else if truth < distractor {
        0.0
    } else {
        0.5
    }
}

fn score<M: LanguageModel + ?Sized>(model: &M, item: &EvalItem, distractor: bool) -> Result<f64> {
    let mut tokens = item.prefix_tokens();
    let start = tokens.len();
    tokens.extend(item.continuation_tokens(distractor));
    let logits = model.logits(&tokens, Heads::only(item.m))?;
    let m = logits
        .get(item.m)
        .ok_or_else(|| Error::contract(format!("model has no {} head", item.m.as_str())))?;
    let ids = if distractor { &item.distractor } else { &item.truth };
    continuation_logprob(m, start - 1, ids)
}

/// Fraction of items whose true continuation has the higher mean per-token
/// log-probability.
pub fn eval_ranked<M: LanguageModel + ?Sized>(model: &M, items: &[EvalItem]) -> Result<RankedAccuracy> {
    let (mut total, mut scored, mut skipped) = (0.0, 0, 0);
    for item in items {
        if item.truth.is_empty() || item.truth.len() != item.distractor.len() {
            skipped += 1;
            continue;
        }
        total += rank_outcome(score(model, item, false)?, score(model, item, true)?);
        scored += 1;
    }
    if scored == 0 {
        return Err(Error::contract("no scorable evaluation items"));
    }
    Ok(RankedAccuracy {
        accuracy: total / scored as f64,
        scored,
        skipped,
    })
}

fn text_tokens(r: &Record, max_seq: usize) -> Result<Vec<Token>> {
    let tokens = r.tokens();
    if tokens.iter().any(|t| t.modality != Modality::Text) {
        return Err(Error::contract(format!("probe {} holds speech", r.id)));
    }
    Ok(tokens.into_iter().take(max_seq).collect())
}

fn text_logits<M: LanguageModel + ?Sized>(model: &M, tokens: &[Token]) -> Result<Matrix<f32>> {
    let logits = model.logits(tokens, Heads::TEXT)?;
    let m = logits
        .get(Modality::Text)
        .ok_or_else(|| Error::contract("model has no text head"))?;
    Ok(m.cast())
}

fn nll_sum(logits: &Matrix<f32>, tokens: &[Token]) -> Result<f64> {
    let ids: Vec<u32> = tokens[1..].iter().map(|t| t.id).collect();
    Ok(-continuation_logprob(logits, 0, &ids)? * ids.len() as f64)
}

/// Text perplexity over every next-token prediction of the probes.
pub fn text_perplexity<M: LanguageModel + ?Sized>(model: &M, probes: &[Record]) -> Result<f64> {
    let (mut nll, mut count) = (0.0, 0usize);
    for r in probes {
        let tokens = text_tokens(r, model.max_seq())?;
        if tokens.len() < 2 {
            continue;
        }
        nll += nll_sum(&text_logits(model, &tokens)?, &tokens)?;
        count += tokens.len() - 1;
    }
    if count == 0 {
        return Err(Error::contract("probes contain no predictions"));
    }
    Ok((nll / count as f64).exp())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Preservation {
    pub max_abs_logit_diff: f64,
    pub ppl_model: f64,
    pub ppl_base: f64,
}

/// Compares the text logits of `model` with those of `base` on every probe.
pub fn eval_preservation<M, B>(model: &M, base: &B, probes: &[Record]) -> Result<Preservation>
where
    M: LanguageModel + ?Sized,
    B: LanguageModel + ?Sized,
{
    if model.text_vocab() != base.text_vocab() || model.max_seq() != base.max_seq() {
        return Err(Error::contract(format!(
            "models disagree on text vocabulary or context ({} / {} vs {} / {})",
            model.text_vocab(),
            model.max_seq(),
            base.text_vocab(),
            base.max_seq()
        )));
    }
    let mut max_diff = 0.0f64;
    for r in probes {
        let tokens = text_tokens(r, model.max_seq())?;
        let a = text_logits(model, &tokens)?;
        let b = text_logits(base, &tokens)?;
        max_diff = max_diff.max(a.max_abs_diff(&b)?.as_f64());
    }
    Ok(Preservation {
        max_abs_logit_diff: max_diff,
        ppl_model: text_perplexity(model, probes)?,
        ppl_base: text_perplexity(base, probes)?,
    })
}
