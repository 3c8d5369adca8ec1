//! Split and plain transformers, generation and checkpoints.

mod batch;
mod blocks;
mod checkpoint;
mod config;
mod generate;
mod lm;
mod plain;
mod split;
mod token;

use std::path::Path;

pub use batch::Sequence;
pub use checkpoint::Checkpoint;
pub use config::{ArchConfig, ModelConfig, PlainConfig};
pub use generate::{argmax, generate, Decoding, GenMode};
pub use lm::{batch_loss, BatchLoss, Heads, LanguageModel, LossTerms, ModalityLogits};
pub use plain::PlainTransformer;
pub use split::{branch_tensor_names, build_split_model, head_tensor_names, SplitForward, SplitTransformer};
pub use token::{tokens, Modality, Token, BOS, EOS, FIRST_CONTENT_ID, MODE_SWITCH};

use crate::error::Result;
use crate::numerics::{ParamStore, Tape};

/// Either model kind, as loaded from a checkpoint.
#[derive(Clone, Debug)]
pub enum AnyModel {
    Split(SplitTransformer),
    Plain(PlainTransformer),
}

impl AnyModel {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        Ok(match ck.arch {
            ArchConfig::Split(_) => AnyModel::Split(SplitTransformer::from_checkpoint(ck)?),
            ArchConfig::Plain(_) => AnyModel::Plain(PlainTransformer::from_checkpoint(ck)?),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        AnyModel::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        match self {
            AnyModel::Split(m) => m.to_checkpoint(),
            AnyModel::Plain(m) => m.to_checkpoint(),
        }
    }

    pub fn arch(&self) -> ArchConfig {
        match self {
            AnyModel::Split(m) => ArchConfig::Split(*m.config()),
            AnyModel::Plain(m) => ArchConfig::Plain(*m.config()),
        }
    }

    fn inner(&self) -> &dyn LanguageModel {
        match self {
            AnyModel::Split(m) => m,
            AnyModel::Plain(m) => m,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn LanguageModel {
        match self {
            AnyModel::Split(m) => m,
            AnyModel::Plain(m) => m,
        }
    }
}

impl LanguageModel for AnyModel {
    fn params(&self) -> &ParamStore {
        self.inner().params()
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        self.inner_mut().params_mut()
    }

    fn text_vocab(&self) -> usize {
        self.inner().text_vocab()
    }

    fn speech_vocab(&self) -> usize {
        self.inner().speech_vocab()
    }

    fn max_seq(&self) -> usize {
        self.inner().max_seq()
    }

    fn loss_terms<'s>(&'s self, tape: &mut Tape<'s>, seq: &Sequence, scale: f32) -> Result<LossTerms> {
        self.inner().loss_terms(tape, seq, scale)
    }

    fn logits(&self, tokens: &[Token], heads: Heads) -> Result<ModalityLogits> {
        self.inner().logits(tokens, heads)
    }
}
