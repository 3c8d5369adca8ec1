use super::batch::Sequence;
use super::blocks::{embed, fresh_value, normal_matrix, BlockParams, HeadParams, ValueSource, INIT_STD};
use super::checkpoint::Checkpoint;
use super::config::{ArchConfig, PlainConfig};
use super::lm::{check_tokens, head_losses, Heads, LanguageModel, LossTerms, ModalityLogits};
use super::token::{Modality, Token};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, ParamGroup, ParamId, ParamStore, Rng, Scalar, Tape, Var};

/// A single-stack transformer: the text base model, or, with a speech
/// vocabulary, the merged-vocabulary model used by the no-split ablation.
///
/// In the merged form speech id `s` lives at row/column `text_vocab + s` of
/// the shared embedding table and head.
#[derive(Clone, Debug)]
pub struct PlainTransformer<F: Scalar = f32> {
    config: PlainConfig,
    store: ParamStore<F>,
    embed: ParamId,
    pos_embed: ParamId,
    blocks: Vec<BlockParams>,
    head: HeadParams,
}

impl<F: Scalar> PlainTransformer<F> {
    pub fn new(config: PlainConfig, rng: &mut Rng) -> Result<Self> {
        Self::assemble(config, &mut |name, r, c| Ok(fresh_value(name, r, c, rng)))
    }

    pub(crate) fn assemble(config: PlainConfig, source: &mut ValueSource<'_, F>) -> Result<Self> {
        config.validate()?;
        let (d, group) = (config.d_model, ParamGroup::TextBackbone);
        let mut store = ParamStore::new();
        let embed = super::blocks::insert_from(&mut store, source, "text_embed", group, (config.vocab(), d))?;
        let pos_embed = super::blocks::insert_from(&mut store, source, "pos_embed", group, (config.max_seq, d))?;
        let blocks = (0..config.n_layers)
            .map(|i| BlockParams::insert(&mut store, source, &format!("blocks.{i}"), group, d, config.d_ff))
            .collect::<Result<Vec<_>>>()?;
        let head = HeadParams::insert(&mut store, source, "text_head", group, d, config.vocab())?;
        Ok(PlainTransformer {
            config,
            store,
            embed,
            pos_embed,
            blocks,
            head,
        })
    }

    pub fn config(&self) -> &PlainConfig {
        &self.config
    }

    pub fn is_merged(&self) -> bool {
        self.config.speech_vocab > 0
    }

    /// Appends `speech_vocab` freshly initialized rows to the embedding table
    /// and columns to the head, turning a text model into a merged one. Text
    /// rows and columns are untouched, so text logits are unchanged.
    pub fn with_speech_vocab(&self, speech_vocab: usize, rng: &mut Rng) -> Result<Self> {
        if self.is_merged() {
            return Err(Error::contract("model already has a speech vocabulary"));
        }
        let config = PlainConfig {
            speech_vocab,
            ..self.config
        };
        config.validate()?;
        let d = config.d_model;
        let new_rows: Matrix<F> = normal_matrix(speech_vocab, d, INIT_STD, rng);
        let new_cols: Matrix<F> = normal_matrix(d, speech_vocab, INIT_STD, rng);
        Self::assemble(config, &mut |name, _, _| {
            let old = &self.store.by_name(name)?.value;
            Ok(match name {
                "text_embed" => {
                    let mut data = old.data().to_vec();
                    data.extend_from_slice(new_rows.data());
                    Matrix::from_vec(old.rows() + speech_vocab, d, data)?
                }
                "text_head.w" => {
                    let tv = old.cols();
                    Matrix::from_fn(d, tv + speech_vocab, |r, c| {
                        if c < tv {
                            old.get(r, c)
                        } else {
                            new_cols.get(r, c - tv)
                        }
                    })
                }
                _ => old.clone(),
            })
        })
    }

    /// Final-layer logits over the merged vocabulary.
    pub fn forward(&self, tape: &mut Tape<'_, F>, tokens: &[Token]) -> Result<Var> {
        check_tokens(
            tokens,
            self.config.text_vocab,
            self.config.speech_vocab,
            self.config.max_seq,
        )?;
        let tables = [(
            self.embed,
            tokens
                .iter()
                .map(|t| {
                    Some(match t.modality {
                        Modality::Text => t.id as usize,
                        Modality::Speech => self.config.text_vocab + t.id as usize,
                    })
                })
                .collect(),
        )];
        let mut x = embed(tape, &tables, self.pos_embed, tokens.len())?;
        for b in &self.blocks {
            x = b.forward(tape, x, self.config.n_heads)?;
        }
        self.head.forward(tape, x)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::from_store(ArchConfig::Plain(self.config), &self.store)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let ArchConfig::Plain(config) = ck.arch else {
            return Err(Error::contract("checkpoint holds a split model, expected a plain one"));
        };
        let model = Self::assemble(config, &mut |name, _, _| ck.take(name))?;
        ck.check_all_used(&model.store)?;
        Ok(model)
    }
}

impl<F: Scalar> LanguageModel<F> for PlainTransformer<F> {
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
        let logits = self.forward(tape, seq.tokens())?;
        let merged = self.is_merged();
        let tv = self.config.text_vocab;
        head_losses(tape, seq, scale, |m| match m {
            Modality::Text => Some((logits, 0)),
            Modality::Speech => merged.then_some((logits, tv)),
        })
    }

    fn logits(&self, tokens: &[Token], heads: Heads) -> Result<ModalityLogits<F>> {
        let mut tape = Tape::new(&self.store);
        let logits = self.forward(&mut tape, tokens)?;
        let full = tape.value(logits);
        let tv = self.config.text_vocab;
        if heads.speech && !self.is_merged() {
            return Err(Error::contract("text-only model has no speech logits"));
        }
        Ok(ModalityLogits {
            text: heads.text.then(|| {
                if self.is_merged() {
                    full.slice_cols(0, tv)
                } else {
                    full.clone()
                }
            }),
            speech: heads.speech.then(|| full.slice_cols(tv, full.cols())),
        })
    }
}
