use super::batch::Sequence;
use super::blocks::{
    embed, fresh_value, insert_from, BlockParams, HeadParams, ValueSource, BLOCK_TENSORS, HEAD_TENSORS,
};
use super::checkpoint::Checkpoint;
use super::config::{ArchConfig, ModelConfig};
use super::lm::{check_tokens, embedding_ids, head_losses, Heads, LanguageModel, LossTerms, ModalityLogits};
use super::plain::PlainTransformer;
use super::token::{Modality, Token};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, ParamGroup, ParamId, ParamStore, Rng, Scalar, Tape, Var};

/// Shared trunk forking into a text branch and a speech branch.
#[derive(Clone, Debug)]
pub struct SplitTransformer<F: Scalar = f32> {
    config: ModelConfig,
    store: ParamStore<F>,
    text_embed: ParamId,
    speech_embed: ParamId,
    pos_embed: ParamId,
    shared: Vec<BlockParams>,
    text_branch: Vec<BlockParams>,
    speech_branch: Vec<BlockParams>,
    text_head: HeadParams,
    speech_head: HeadParams,
}

/// Tape handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct SplitForward {
    /// Embedding output followed by the output of every shared block.
    pub trunk_states: Vec<Var>,
    pub text_branch_input: Option<Var>,
    pub speech_branch_input: Option<Var>,
    pub text_logits: Option<Var>,
    pub speech_logits: Option<Var>,
}

impl<F: Scalar> SplitTransformer<F> {
    /// A randomly initialized split model.
    pub fn new(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        Self::assemble(config, &mut |name, r, c| Ok(fresh_value(name, r, c, rng)))
    }

    pub(crate) fn assemble(config: ModelConfig, source: &mut ValueSource<'_, F>) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let (text, speech) = (ParamGroup::TextBackbone, ParamGroup::SpeechNew);
        let mut store = ParamStore::new();
        let text_embed = insert_from(&mut store, source, "text_embed", text, (config.text_vocab, d))?;
        let speech_embed = insert_from(&mut store, source, "speech_embed", speech, (config.speech_vocab, d))?;
        let pos_embed = insert_from(&mut store, source, "pos_embed", text, (config.max_seq, d))?;
        let mut stack = |store: &mut ParamStore<F>, prefix: &str, group, n| {
            (0..n)
                .map(|i| BlockParams::insert(store, source, &format!("{prefix}.{i}"), group, d, config.d_ff))
                .collect::<Result<Vec<_>>>()
        };
        let shared = stack(&mut store, "shared", text, config.n_shared)?;
        let text_branch = stack(&mut store, "text_branch", text, config.n_branch)?;
        let speech_branch = stack(&mut store, "speech_branch", speech, config.n_branch)?;
        let text_head = HeadParams::insert(&mut store, source, "text_head", text, d, config.text_vocab)?;
        let speech_head = HeadParams::insert(&mut store, source, "speech_head", speech, d, config.speech_vocab)?;
        Ok(SplitTransformer {
            config,
            store,
            text_embed,
            speech_embed,
            pos_embed,
            shared,
            text_branch,
            speech_branch,
            text_head,
            speech_head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Runs the trunk and the branches selected by `heads`. Both branches
    /// start from the very same trunk output.
    pub fn forward(&self, tape: &mut Tape<'_, F>, tokens: &[Token], heads: Heads) -> Result<SplitForward> {
        let cfg = &self.config;
        check_tokens(tokens, cfg.text_vocab, cfg.speech_vocab, cfg.max_seq)?;
        let tables = [
            (self.text_embed, embedding_ids(tokens, Modality::Text, 0)),
            (self.speech_embed, embedding_ids(tokens, Modality::Speech, 0)),
        ];
        let mut x = embed(tape, &tables, self.pos_embed, tokens.len())?;
        let mut trunk_states = vec![x];
        for b in &self.shared {
            x = b.forward(tape, x, cfg.n_heads)?;
            trunk_states.push(x);
        }
        let fork = x;
        let mut out = SplitForward {
            trunk_states,
            text_branch_input: None,
            speech_branch_input: None,
            text_logits: None,
            speech_logits: None,
        };
        if heads.text {
            out.text_branch_input = Some(fork);
            out.text_logits = Some(branch(tape, fork, &self.text_branch, &self.text_head, cfg.n_heads)?);
        }
        if heads.speech {
            out.speech_branch_input = Some(fork);
            out.speech_logits = Some(branch(tape, fork, &self.speech_branch, &self.speech_head, cfg.n_heads)?);
        }
        Ok(out)
    }

    /// Hidden states after the embedding and after every shared block.
    pub fn trunk_states(&self, tokens: &[Token]) -> Result<Vec<Matrix<F>>> {
        let mut tape = Tape::new(&self.store);
        let fwd = self.forward(&mut tape, tokens, Heads::NONE)?;
        Ok(fwd.trunk_states.iter().map(|&v| tape.value(v).clone()).collect())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::from_store(ArchConfig::Split(self.config), &self.store)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let ArchConfig::Split(config) = ck.arch else {
            return Err(Error::contract("checkpoint holds a plain model, expected a split one"));
        };
        let model = Self::assemble(config, &mut |name, _, _| ck.take(name))?;
        ck.check_all_used(&model.store)?;
        Ok(model)
    }
}

fn branch<F: Scalar>(
    tape: &mut Tape<'_, F>,
    input: Var,
    blocks: &[BlockParams],
    head: &HeadParams,
    n_heads: usize,
) -> Result<Var> {
    let mut x = input;
    for b in blocks {
        x = b.forward(tape, x, n_heads)?;
    }
    head.forward(tape, x)
}

/// Grows a split model from a plain text model with `n_shared + n_branch`
/// blocks. The first `n_shared` blocks become the trunk; the remaining ones
/// become the text branch and are copied verbatim into the speech branch.
/// Speech embeddings and the speech head are freshly drawn from `rng`.
pub fn build_split_model<F: Scalar>(
    base: &PlainTransformer<F>,
    config: ModelConfig,
    rng: &mut Rng,
) -> Result<SplitTransformer<F>> {
    config.validate()?;
    let bc = base.config();
    if base.is_merged() {
        return Err(Error::contract("base model must be text-only"));
    }
    if bc.n_layers != config.depth() {
        return Err(Error::contract(format!(
            "base has {} blocks, split needs n_shared + n_branch = {}",
            bc.n_layers,
            config.depth()
        )));
    }
    if (bc.d_model, bc.n_heads, bc.d_ff, bc.text_vocab, bc.max_seq)
        != (
            config.d_model,
            config.n_heads,
            config.d_ff,
            config.text_vocab,
            config.max_seq,
        )
    {
        return Err(Error::contract(format!(
            "base dimensions {bc:?} do not match split config {config:?}"
        )));
    }
    let base_store = base.params();
    let n_shared = config.n_shared;
    SplitTransformer::assemble(config, &mut |name, r, c| {
        let source_name = match name.split_once('.') {
            Some(("shared", rest)) => format!("blocks.{rest}"),
            Some(("text_branch" | "speech_branch", rest)) => {
                let (i, tensor) = rest
                    .split_once('.')
                    .ok_or_else(|| Error::contract(format!("malformed tensor name {name}")))?;
                let i: usize = i
                    .parse()
                    .map_err(|_| Error::contract(format!("malformed tensor name {name}")))?;
                format!("blocks.{}.{tensor}", n_shared + i)
            }
            Some(("speech_head", _)) => return Ok(fresh_value(name, r, c, rng)),
            _ if name == "speech_embed" => return Ok(fresh_value(name, r, c, rng)),
            _ => name.to_string(),
        };
        Ok(base_store.by_name(&source_name)?.value.clone())
    })
}

impl<F: Scalar> LanguageModel<F> for SplitTransformer<F> {
    fn params(&self) -> &ParamStore<F> {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.store
    }

    fn text_vocab(&self) -> usize {
        self.config.text_vocab
    }

    fn speech_vocab(&self) -> usize {
        self.config.speech_vocab
    }

    fn max_seq(&self) -> usize {
        self.config.max_seq
    }

    fn loss_terms<'s>(&'s self, tape: &mut Tape<'s, F>, seq: &Sequence, scale: F) -> Result<LossTerms> {
        let needs = |m| seq.head_targets(m).iter().any(Option::is_some);
        let heads = Heads {
            text: needs(Modality::Text),
            speech: needs(Modality::Speech),
        };
        let fwd = self.forward(tape, seq.tokens(), heads)?;
        head_losses(tape, seq, scale, |m| {
            match m {
                Modality::Text => fwd.text_logits,
                Modality::Speech => fwd.speech_logits,
            }
            .map(|v| (v, 0))
        })
    }

    fn logits(&self, tokens: &[Token], heads: Heads) -> Result<ModalityLogits<F>> {
        let mut tape = Tape::new(&self.store);
        let fwd = self.forward(&mut tape, tokens, heads)?;
        Ok(ModalityLogits {
            text: fwd.text_logits.map(|v| tape.value(v).clone()),
            speech: fwd.speech_logits.map(|v| tape.value(v).clone()),
        })
    }
}

/// Names of every tensor in one branch or head, for tests and freeze plans.
pub fn branch_tensor_names(prefix: &str, n: usize) -> Vec<String> {
    (0..n)
        .flat_map(|i| BLOCK_TENSORS.iter().map(move |t| format!("{prefix}.{i}.{t}")))
        .collect()
}

pub fn head_tensor_names(prefix: &str) -> Vec<String> {
    HEAD_TENSORS.iter().map(|t| format!("{prefix}.{t}")).collect()
}
