use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of a split transformer: `n_shared` trunk blocks followed by two
/// parallel stacks of `n_branch` blocks, one per modality.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub n_shared: usize,
    pub n_branch: usize,
    pub text_vocab: usize,
    pub speech_vocab: usize,
    pub max_seq: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 128,
            n_heads: 4,
            d_ff: 512,
            n_shared: 8,
            n_branch: 2,
            text_vocab: 256,
            speech_vocab: 512,
            max_seq: 512,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        check_common(self.d_model, self.n_heads, self.d_ff, self.max_seq)?;
        if self.n_shared == 0 {
            return Err(Error::contract("n_shared must be at least 1"));
        }
        if self.n_branch == 0 {
            return Err(Error::contract("n_branch must be at least 1"));
        }
        if self.text_vocab < 4 || self.speech_vocab < 4 {
            return Err(Error::contract(
                "both vocabularies need at least 4 ids (3 are reserved)",
            ));
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.n_shared + self.n_branch
    }

    /// The plain text model a split model of this shape is grown from.
    pub fn base(&self) -> PlainConfig {
        PlainConfig {
            d_model: self.d_model,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            n_layers: self.depth(),
            text_vocab: self.text_vocab,
            speech_vocab: 0,
            max_seq: self.max_seq,
        }
    }
}

/// A single-stack transformer. With `speech_vocab > 0` speech ids are
/// appended after the text ids in one merged vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlainConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub n_layers: usize,
    pub text_vocab: usize,
    pub speech_vocab: usize,
    pub max_seq: usize,
}

impl PlainConfig {
    pub fn validate(&self) -> Result<()> {
        check_common(self.d_model, self.n_heads, self.d_ff, self.max_seq)?;
        if self.n_layers == 0 {
            return Err(Error::contract("n_layers must be at least 1"));
        }
        if self.text_vocab < 4 || (self.speech_vocab != 0 && self.speech_vocab < 4) {
            return Err(Error::contract("vocabularies need at least 4 ids"));
        }
        Ok(())
    }

    pub fn vocab(&self) -> usize {
        self.text_vocab + self.speech_vocab
    }
}

fn check_common(d_model: usize, n_heads: usize, d_ff: usize, max_seq: usize) -> Result<()> {
    if d_model == 0 || d_ff == 0 || max_seq == 0 {
        return Err(Error::contract("d_model, d_ff and max_seq must be positive"));
    }
    if n_heads == 0 || !d_model.is_multiple_of(n_heads) {
        return Err(Error::contract(format!(
            "n_heads ({n_heads}) must divide d_model ({d_model})"
        )));
    }
    Ok(())
}

/// Configuration stored in a checkpoint header.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArchConfig {
    Split(ModelConfig),
    Plain(PlainConfig),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_branch_depth_is_rejected() {
        let cfg = ModelConfig {
            n_branch: 0,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn heads_must_divide_width() {
        let cfg = ModelConfig {
            n_heads: 3,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(ModelConfig::default().validate().is_ok());
    }

    #[test]
    fn tiny_vocab_is_rejected() {
        let cfg = ModelConfig {
            speech_vocab: 3,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
