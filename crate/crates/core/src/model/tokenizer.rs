//! Word-level tokenizer with punctuation splitting.
//!
//! Text is split on whitespace into chunks; each chunk is split further into
//! runs of alphanumeric characters and single other characters. Pieces after
//! the first in a chunk carry a `##` glue prefix, so detokenization is the
//! exact inverse for text with single spaces between chunks. Chunks equal to
//! a special token (`[MD]`, `[EG]`, ...) stay whole.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const EOS: &str = "[EOS]";
pub const MD: &str = "[MD]";
pub const EG: &str = "[EG]";
pub const SPECIALS: [&str; 5] = [PAD, UNK, EOS, MD, EG];

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
pub const MD_ID: u32 = 3;
pub const EG_ID: u32 = 4;

const GLUE: &str = "##";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TokenizeError {
    #[error("input is {len} tokens, over the cap of {cap}")]
    TooLong { len: usize, cap: usize },
    #[error("vocabulary is malformed: {0}")]
    BadVocab(String),
}

/// Splits text into tokens (strings).
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        if SPECIALS.contains(&chunk) {
            out.push(chunk.to_string());
            continue;
        }
        let mut first = true;
        let mut word = String::new();
        let mut push = |piece: &str, first: &mut bool| {
            if *first {
                out.push(piece.to_string());
                *first = false;
            } else {
                out.push(format!("{GLUE}{piece}"));
            }
        };
        for c in chunk.chars() {
            if c.is_alphanumeric() {
                word.push(c);
            } else {
                if !word.is_empty() {
                    push(&word, &mut first);
                    word.clear();
                }
                push(c.encode_utf8(&mut [0; 4]), &mut first);
            }
        }
        if !word.is_empty() {
            push(&word, &mut first);
        }
    }
    out
}

/// Inverse of [`tokenize`] on whitespace-normalized text.
pub fn detokenize<'a>(tokens: impl IntoIterator<Item = &'a str>) -> String {
    let mut out = String::new();
    for t in tokens {
        match t.strip_prefix(GLUE).filter(|rest| !rest.is_empty()) {
            Some(rest) if !out.is_empty() => out.push_str(rest),
            _ => {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(t);
            }
        }
    }
    out
}

/// Dense token-id mapping with the five specials at ids 0..5.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocab {
    /// Vocabulary over every token of `texts`, in first-seen order after the
    /// specials.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v = Self::from_tokens(SPECIALS.iter().map(|s| s.to_string()).collect()).expect("specials are valid");
        for text in texts {
            for t in tokenize(text) {
                if !v.ids.contains_key(&t) {
                    v.ids.insert(t.clone(), v.tokens.len() as u32);
                    v.tokens.push(t);
                }
            }
        }
        v
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, TokenizeError> {
        if tokens.len() < SPECIALS.len() || tokens[..SPECIALS.len()] != SPECIALS {
            return Err(TokenizeError::BadVocab("special tokens must lead in canonical order".into()));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(TokenizeError::BadVocab(format!("token {t:?} appears twice")));
            }
        }
        Ok(Self { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens.get(id as usize).map(String::as_str).unwrap_or(UNK)
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    /// Prompt tokens followed by sentence tokens.
    pub fn encode_input(&self, prompt: &str, input: &str, cap: usize) -> Result<Vec<u32>, TokenizeError> {
        let mut ids = self.encode(prompt);
        ids.extend(self.encode(input));
        if ids.len() > cap {
            return Err(TokenizeError::TooLong { len: ids.len(), cap });
        }
        Ok(ids)
    }

    /// Target tokens followed by `[EOS]`.
    pub fn encode_target(&self, target: &str, cap: usize) -> Result<Vec<u32>, TokenizeError> {
        let mut ids = self.encode(target);
        ids.push(EOS_ID);
        if ids.len() > cap {
            return Err(TokenizeError::TooLong { len: ids.len(), cap });
        }
        Ok(ids)
    }

    /// Detokenizes ids, stopping at the first `[EOS]` and skipping padding.
    pub fn decode(&self, ids: &[u32]) -> String {
        detokenize(
            ids.iter()
                .take_while(|&&i| i != EOS_ID)
                .filter(|&&i| i != PAD_ID)
                .map(|&i| self.token(i)),
        )
    }
}

impl Serialize for Vocab {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.tokens.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocab {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Self::from_tokens(Vec::<String>::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_punctuation_with_glue() {
        assert_eq!(
            tokenize("J.K. Rowling is person, writer."),
            vec!["J", "##.", "##K", "##.", "Rowling", "is", "person", "##,", "writer", "##."]
        );
        assert_eq!(tokenize("[EG] person: {actor}"), vec!["[EG]", "person", "##:", "{", "##actor", "##}"]);
    }

    #[test]
    fn round_trip_on_normalized_text() {
        for text in [
            "J.K. Rowling is person, writer.",
            "[EG] GPE: {state, country}; date",
            "a ## b ### c",
            "Zürich's 3.5-km (long) \"walk\"!",
            "",
        ] {
            assert_eq!(detokenize(tokenize(text).iter().map(String::as_str)), text);
        }
    }

    #[test]
    fn specials_and_unknowns() {
        let v = Vocab::build(["Bob runs."]);
        let ids = v.encode_input("[EG] person", "Bob runs.", 256).unwrap();
        assert_eq!(ids[0], EG_ID);
        assert_eq!(ids[1], UNK_ID);
        assert_eq!(ids.len(), 5);
        assert!(matches!(v.encode_input("a b c", "", 2), Err(TokenizeError::TooLong { len: 3, cap: 2 })));
        assert_eq!(v.decode(&[v.id("Bob"), v.id("runs"), v.id("##."), EOS_ID, v.id("Bob")]), "Bob runs.");
    }

    #[test]
    fn vocab_serializes_as_token_list() {
        let v = Vocab::build(["x y"]);
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(json, r#"["[PAD]","[UNK]","[EOS]","[MD]","[EG]","x","y"]"#);
        let back: Vocab = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
        assert!(serde_json::from_str::<Vocab>(r#"["x"]"#).is_err());
    }
}
