//! Deterministic invertible pseudo codec pairing each text token with a
//! fixed tuple of speech codebook tokens.
//!
//! The table is a seeded random injective assignment, so the speech→text
//! direction has no arithmetic shortcut but is exactly learnable. Only
//! `(group_size, seed)` is persisted; the table is rebuilt from the layout.

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vocab::{TokenId, VocabError, VocabLayout};

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("token {id} at position {position} is not a text token")]
    NotTextToken { position: usize, id: u32 },
    #[error("token {id} at position {position} is not a speech token")]
    NotSpeechToken { position: usize, id: u32 },
    #[error("speech length {len} is not divisible by group size {group_size}")]
    BadLength { len: usize, group_size: usize },
    #[error("speech group starting at position {position} is not in the codec table")]
    UnknownTuple { position: usize },
    #[error("cannot build injective table: {text} text tokens need more than {capacity} tuples")]
    TableExhausted { text: usize, capacity: u128 },
    #[error("group size must be at least 1")]
    ZeroGroupSize,
    #[error(transparent)]
    Vocab(#[from] VocabError),
}

/// Persisted codec parameters; see [`CodecMap::from_config`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodecConfig {
    pub group_size: usize,
    pub seed: u64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            group_size: 2,
            seed: 0,
        }
    }
}

/// Injective map text-index → tuple of `group_size` speech code indices.
#[derive(Debug, Clone)]
pub struct CodecMap {
    layout: VocabLayout,
    group_size: usize,
    seed: u64,
    groups: Vec<Vec<u32>>,
    reverse: HashMap<Vec<u32>, u32>,
}

impl CodecMap {
    pub fn new(layout: &VocabLayout, group_size: usize, seed: u64) -> Result<Self, CodecError> {
        if group_size == 0 {
            return Err(CodecError::ZeroGroupSize);
        }
        let text = layout.text_vocab_size;
        let capacity = (layout.speech_codebook_size as u128)
            .checked_pow(group_size as u32)
            .unwrap_or(u128::MAX);
        if (text as u128) > capacity {
            return Err(CodecError::TableExhausted { text, capacity });
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut groups = Vec::with_capacity(text);
        let mut reverse = HashMap::with_capacity(text);
        for index in 0..text {
            // Rejection sampling keeps the table injective.
            loop {
                let tuple: Vec<u32> = (0..group_size)
                    .map(|_| rng.random_range(0..layout.speech_codebook_size as u32))
                    .collect();
                if !reverse.contains_key(&tuple) {
                    reverse.insert(tuple.clone(), index as u32);
                    groups.push(tuple);
                    break;
                }
            }
        }
        Ok(CodecMap {
            layout: layout.clone(),
            group_size,
            seed,
            groups,
            reverse,
        })
    }

    pub fn from_config(layout: &VocabLayout, config: CodecConfig) -> Result<Self, CodecError> {
        CodecMap::new(layout, config.group_size, config.seed)
    }

    pub fn config(&self) -> CodecConfig {
        CodecConfig {
            group_size: self.group_size,
            seed: self.seed,
        }
    }

    pub fn layout(&self) -> &VocabLayout {
        &self.layout
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    /// Speech code tuple assigned to a text index (for tests and tooling).
    pub fn group_codes(&self, text_index: usize) -> &[u32] {
        &self.groups[text_index]
    }

    /// Text index for a speech code tuple, if the tuple is in the table image.
    pub fn lookup_group(&self, codes: &[u32]) -> Option<u32> {
        self.reverse.get(codes).copied()
    }

    /// Expands text tokens into speech tokens, `group_size` per input token.
    pub fn encode_speech(&self, text: &[TokenId]) -> Result<Vec<TokenId>, CodecError> {
        let mut out = Vec::with_capacity(text.len() * self.group_size);
        for (position, &tok) in text.iter().enumerate() {
            if !self.layout.is_text(tok) {
                return Err(CodecError::NotTextToken {
                    position,
                    id: tok.0,
                });
            }
            for &code in &self.groups[tok.0 as usize] {
                out.push(self.layout.speech_token(code as usize));
            }
        }
        Ok(out)
    }

    /// Inverse of [`encode_speech`](Self::encode_speech).
    pub fn decode_speech(&self, speech: &[TokenId]) -> Result<Vec<TokenId>, CodecError> {
        if !speech.len().is_multiple_of(self.group_size) {
            return Err(CodecError::BadLength {
                len: speech.len(),
                group_size: self.group_size,
            });
        }
        let mut out = Vec::with_capacity(speech.len() / self.group_size);
        let mut codes = Vec::with_capacity(self.group_size);
        for (g, chunk) in speech.chunks(self.group_size).enumerate() {
            codes.clear();
            for (i, &tok) in chunk.iter().enumerate() {
                match self.layout.classify_token(tok)? {
                    crate::vocab::TokenClass::Speech(code) => codes.push(code),
                    _ => {
                        return Err(CodecError::NotSpeechToken {
                            position: g * self.group_size + i,
                            id: tok.0,
                        })
                    }
                }
            }
            let index = self
                .reverse
                .get(&codes)
                .ok_or(CodecError::UnknownTuple {
                    position: g * self.group_size,
                })?;
            out.push(self.layout.text_token(*index as usize));
        }
        Ok(out)
    }
}
