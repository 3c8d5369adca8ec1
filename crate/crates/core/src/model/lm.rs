use super::batch::Sequence;
use super::token::{Modality, Token};
use crate::error::{Error, Result};
use crate::numerics::{Gradients, Matrix, ParamStore, Scalar, Tape, Var};

/// Which output heads a forward pass evaluates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Heads {
    pub text: bool,
    pub speech: bool,
}

impl Heads {
    pub const NONE: Heads = Heads {
        text: false,
        speech: false,
    };
    pub const TEXT: Heads = Heads {
        text: true,
        speech: false,
    };
    pub const SPEECH: Heads = Heads {
        text: false,
        speech: true,
    };
    pub const BOTH: Heads = Heads {
        text: true,
        speech: true,
    };

    pub fn only(m: Modality) -> Heads {
        match m {
            Modality::Text => Heads::TEXT,
            Modality::Speech => Heads::SPEECH,
        }
    }
}

/// Next-token logits per modality, each over that modality's own vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalityLogits<F = f32> {
    pub text: Option<Matrix<F>>,
    pub speech: Option<Matrix<F>>,
}

impl<F: Scalar> ModalityLogits<F> {
    pub fn get(&self, m: Modality) -> Option<&Matrix<F>> {
        match m {
            Modality::Text => self.text.as_ref(),
            Modality::Speech => self.speech.as_ref(),
        }
    }
}

/// Loss contributions of one sequence.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    /// `scale · (Σ text CE + Σ speech CE)`, or `None` when nothing is supervised.
    pub loss: Option<Var>,
    pub text_sum: f64,
    pub text_count: usize,
    pub speech_sum: f64,
    pub speech_count: usize,
}

/// A next-token model over text and speech tokens.
pub trait LanguageModel<F: Scalar = f32> {
    fn params(&self) -> &ParamStore<F>;

    fn params_mut(&mut self) -> &mut ParamStore<F>;

    fn text_vocab(&self) -> usize;

    fn speech_vocab(&self) -> usize;

    fn max_seq(&self) -> usize;

    /// Builds the supervised cross-entropy of `seq` on `tape`, scaled by `scale`.
    fn loss_terms<'s>(&'s self, tape: &mut Tape<'s, F>, seq: &Sequence, scale: F) -> Result<LossTerms>;

    /// Logits for every position of `tokens`, for the requested heads only.
    fn logits(&self, tokens: &[Token], heads: Heads) -> Result<ModalityLogits<F>>;
}

/// Mean loss over every supervised position of a batch.
#[derive(Clone, Debug)]
pub struct BatchLoss<F = f32> {
    pub loss: f64,
    pub text_loss: Option<f64>,
    pub speech_loss: Option<f64>,
    pub positions: usize,
    pub grads: Gradients<F>,
}

/// Mean cross-entropy over all supervised positions of `batch` and, when
/// `with_grads` is set, its gradients for every trainable tensor.
///
/// Sequences are processed one tape at a time and their gradients summed in
/// batch order, which keeps the result independent of scheduling.
pub fn batch_loss<F, M>(model: &M, batch: &[Sequence], with_grads: bool) -> Result<BatchLoss<F>>
where
    F: Scalar,
    M: LanguageModel<F> + ?Sized,
{
    let positions: usize = batch.iter().map(Sequence::supervised_positions).sum();
    if positions == 0 {
        return Err(Error::NoSupervisedPositions);
    }
    let scale = F::of(1.0 / positions as f64);
    let mut grads = Gradients::default();
    let (mut loss, mut ts, mut tc, mut ss, mut sc) = (0.0, 0.0, 0usize, 0.0, 0usize);
    for seq in batch {
        if seq.supervised_positions() == 0 {
            continue;
        }
        let mut tape = Tape::new(model.params());
        let terms = model.loss_terms(&mut tape, seq, scale)?;
        let Some(l) = terms.loss else { continue };
        loss += tape.value(l).item()?.as_f64();
        ts += terms.text_sum;
        tc += terms.text_count;
        ss += terms.speech_sum;
        sc += terms.speech_count;
        if with_grads {
            grads.merge(tape.backward(l)?)?;
        }
    }
    Ok(BatchLoss {
        loss,
        text_loss: (tc > 0).then(|| ts / tc as f64),
        speech_loss: (sc > 0).then(|| ss / sc as f64),
        positions,
        grads,
    })
}

/// Adds per-head cross-entropy terms for logits already on the tape.
/// `logits` maps a modality to its logits variable and the offset of that
/// modality's ids within the variable's columns.
pub(crate) fn head_losses<F: Scalar>(
    tape: &mut Tape<'_, F>,
    seq: &Sequence,
    scale: F,
    logits: impl Fn(Modality) -> Option<(Var, usize)>,
) -> Result<LossTerms> {
    let mut terms = LossTerms {
        loss: None,
        text_sum: 0.0,
        text_count: 0,
        speech_sum: 0.0,
        speech_count: 0,
    };
    for m in [Modality::Text, Modality::Speech] {
        let targets = seq.head_targets(m);
        let count = targets.iter().filter(|t| t.is_some()).count();
        if count == 0 {
            continue;
        }
        let (var, offset) = logits(m)
            .ok_or_else(|| Error::contract(format!("sequence supervises {} targets the model lacks", m.as_str())))?;
        let targets: Vec<Option<usize>> = targets.iter().map(|t| t.map(|id| id + offset)).collect();
        let sum = tape.cross_entropy_scaled(var, &targets, F::one())?;
        let value = tape.value(sum).item()?.as_f64();
        match m {
            Modality::Text => {
                terms.text_sum = value;
                terms.text_count = count;
            }
            Modality::Speech => {
                terms.speech_sum = value;
                terms.speech_count = count;
            }
        }
        let scaled = tape.scale(sum, scale)?;
        terms.loss = Some(match terms.loss {
            Some(prev) => tape.add(prev, scaled)?,
            None => scaled,
        });
    }
    Ok(terms)
}

/// Splits tokens into per-table row ids; `offset` shifts speech ids into a
/// merged table when one is used.
pub(crate) fn embedding_ids(tokens: &[Token], modality: Modality, offset: usize) -> Vec<Option<usize>> {
    tokens
        .iter()
        .map(|t| (t.modality == modality).then_some(t.id as usize + offset))
        .collect()
}

pub(crate) fn check_tokens(tokens: &[Token], text_vocab: usize, speech_vocab: usize, max_seq: usize) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::contract("empty token sequence"));
    }
    if tokens.len() > max_seq {
        return Err(Error::contract(format!(
            "sequence of {} tokens exceeds max_seq {max_seq}",
            tokens.len()
        )));
    }
    for t in tokens {
        let limit = match t.modality {
            Modality::Text => text_vocab,
            Modality::Speech => speech_vocab,
        };
        if t.id as usize >= limit {
            return Err(Error::contract(format!(
                "{} token id {} out of range (vocab {limit})",
                t.modality.as_str(),
                t.id
            )));
        }
    }
    Ok(())
}
