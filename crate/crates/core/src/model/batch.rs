use super::token::{Modality, Token};
use crate::error::{Error, Result};

/// One training sequence with its supervision masks.
///
/// Position `p` predicts token `p + 1`; its target modality is therefore the
/// modality of the next token, and the final position has none.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sequence {
    tokens: Vec<Token>,
    targets: Vec<Option<Modality>>,
    loss_mask: Vec<bool>,
}

impl Sequence {
    /// Supervises every position that has a next token.
    pub fn fully_supervised(tokens: Vec<Token>) -> Result<Self> {
        let n = tokens.len();
        let mask = (0..n).map(|p| p + 1 < n).collect();
        Sequence::new(tokens, mask)
    }

    pub fn new(tokens: Vec<Token>, loss_mask: Vec<bool>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::contract("empty sequence"));
        }
        if loss_mask.len() != tokens.len() {
            return Err(Error::contract(format!(
                "loss mask has {} entries for {} tokens",
                loss_mask.len(),
                tokens.len()
            )));
        }
        if loss_mask[tokens.len() - 1] {
            return Err(Error::contract("final position has no target to supervise"));
        }
        let targets = (0..tokens.len())
            .map(|p| tokens.get(p + 1).map(|t| t.modality))
            .collect();
        Ok(Sequence {
            tokens,
            targets,
            loss_mask,
        })
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn target_modality(&self, p: usize) -> Option<Modality> {
        self.targets[p]
    }

    pub fn loss_mask(&self) -> &[bool] {
        &self.loss_mask
    }

    pub fn supervised_positions(&self) -> usize {
        self.loss_mask.iter().filter(|&&m| m).count()
    }

    /// Target ids for one head: `Some(id)` where the position is supervised
    /// and the next token has `modality`.
    pub fn head_targets(&self, modality: Modality) -> Vec<Option<usize>> {
        (0..self.tokens.len())
            .map(|p| (self.loss_mask[p] && self.targets[p] == Some(modality)).then(|| self.tokens[p + 1].id as usize))
            .collect()
    }

    /// Keeps the first `max_len` tokens.
    pub fn truncated(&self, max_len: usize) -> Result<Self> {
        if self.tokens.len() <= max_len {
            return Ok(self.clone());
        }
        let tokens = self.tokens[..max_len].to_vec();
        let mut mask = self.loss_mask[..max_len].to_vec();
        mask[max_len - 1] = false;
        Sequence::new(tokens, mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn target_modality_is_that_of_the_next_token() {
        let seq = Sequence::fully_supervised(vec![Token::text(0), Token::text(5), Token::speech(7)]).unwrap();
        assert_eq!(seq.target_modality(0), Some(Modality::Text));
        assert_eq!(seq.target_modality(1), Some(Modality::Speech));
        assert_eq!(seq.target_modality(2), None);
        assert_eq!(seq.head_targets(Modality::Speech), vec![None, Some(7), None]);
    }

    #[test]
    fn masks_must_match_and_skip_the_final_position() {
        let toks = vec![Token::text(0), Token::text(3)];
        assert!(Sequence::new(toks.clone(), vec![true]).is_err());
        assert!(Sequence::new(toks.clone(), vec![true, true]).is_err());
        assert!(Sequence::new(toks, vec![true, false]).is_ok());
    }

    #[test]
    fn truncation_clears_the_new_final_position() {
        let seq = Sequence::fully_supervised((0..6).map(|i| Token::text(i + 3)).collect()).unwrap();
        let t = seq.truncated(4).unwrap();
        assert_eq!(t.len(), 4);
        assert_eq!(t.supervised_positions(), 3);
    }
}
