use serde::{Deserialize, Serialize};

pub const BOS: u32 = 0;
pub const MODE_SWITCH: u32 = 1;
pub const EOS: u32 = 2;
/// First id that carries content; ids below it are reserved in both vocabularies.
pub const FIRST_CONTENT_ID: u32 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "t")]
    Text,
    #[serde(rename = "s")]
    Speech,
}

impl Modality {
    pub fn other(self) -> Modality {
        match self {
            Modality::Text => Modality::Speech,
            Modality::Speech => Modality::Text,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Speech => "speech",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Token {
    pub modality: Modality,
    pub id: u32,
}

impl Token {
    pub const fn text(id: u32) -> Token {
        Token {
            modality: Modality::Text,
            id,
        }
    }

    pub const fn speech(id: u32) -> Token {
        Token {
            modality: Modality::Speech,
            id,
        }
    }

    pub const fn new(modality: Modality, id: u32) -> Token {
        Token { modality, id }
    }

    pub fn is_reserved(&self) -> bool {
        self.id < FIRST_CONTENT_ID
    }
}

pub fn tokens(modality: Modality, ids: &[u32]) -> Vec<Token> {
    ids.iter().map(|&id| Token::new(modality, id)).collect()
}
