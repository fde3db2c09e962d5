//! Unified token space shared by every stage of the pipeline.
//!
//! Token ids form three contiguous, disjoint ranges: text tokens occupy
//! `[0, text_vocab_size)`, speech codebook tokens occupy
//! `[text_vocab_size, text_vocab_size + speech_codebook_size)`, and special
//! tokens sit above both. Keeping specials on top means a plain range check
//! is enough to tell content from format tokens.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Names of the special tokens every layout must declare.
pub mod special {
    pub const ASR: &str = "ASR";
    pub const TTS: &str = "TTS";
    pub const SOS: &str = "SOS";
    pub const EOS: &str = "EOS";
    pub const SOT: &str = "SOT";
    pub const EOT: &str = "EOT";
    pub const SILENT_TEXT: &str = "SILENT_TEXT";
    pub const SILENT_SPEECH: &str = "SILENT_SPEECH";
    pub const NOISE: &str = "NOISE";
    pub const PAD: &str = "PAD";

    /// Required specials, in the canonical order used by the default layout.
    pub const REQUIRED: [&str; 10] = [
        ASR,
        TTS,
        SOS,
        EOS,
        SOT,
        EOT,
        SILENT_TEXT,
        SILENT_SPEECH,
        NOISE,
        PAD,
    ];

    /// Framing specials: task ids and sentence delimiters. These carry
    /// sequence structure rather than stream content, unlike the silent and
    /// noise tokens which stand in for content slots.
    pub const FRAMING: [&str; 7] = [ASR, TTS, SOS, EOS, SOT, EOT, PAD];
}

/// A token id in the unified vocabulary.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl std::fmt::Display for TokenId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u32> for TokenId {
    fn from(v: u32) -> Self {
        TokenId(v)
    }
}

/// Classification of a token id into one of the three ranges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenClass {
    /// Text token; payload is the index within the text range.
    Text(u32),
    /// Speech token; payload is the codebook index.
    Speech(u32),
    /// Special token; payload is its declared name.
    Special(String),
}

/// Stream a flattened-sequence position belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelTag {
    #[serde(rename = "US")]
    UserSpeech,
    #[serde(rename = "UT")]
    UserText,
    #[serde(rename = "AS")]
    AssistantSpeech,
    #[serde(rename = "AT")]
    AssistantText,
    #[serde(rename = "C")]
    Control,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VocabError {
    #[error("token id {id} out of range (vocabulary size {total})")]
    OutOfRange { id: u32, total: usize },
    #[error("unknown special token `{0}`")]
    UnknownSpecial(String),
    #[error("special token `{0}` declared more than once")]
    DuplicateSpecial(String),
    #[error("required special token `{0}` missing")]
    MissingSpecial(String),
    #[error("character {ch:?} at position {position} has no text token (text vocab size {size})")]
    UnencodableChar {
        ch: char,
        position: usize,
        size: usize,
    },
}

/// Partitioned token space: text ids, then speech ids, then specials.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabLayout {
    pub text_vocab_size: usize,
    pub speech_codebook_size: usize,
    pub special_names: Vec<String>,
}

impl Default for VocabLayout {
    fn default() -> Self {
        VocabLayout {
            text_vocab_size: 256,
            speech_codebook_size: 4096,
            special_names: special::REQUIRED.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl VocabLayout {
    pub fn new(
        text_vocab_size: usize,
        speech_codebook_size: usize,
        special_names: Vec<String>,
    ) -> Result<Self, VocabError> {
        let layout = VocabLayout {
            text_vocab_size,
            speech_codebook_size,
            special_names,
        };
        layout.validate()?;
        Ok(layout)
    }

    /// Default-sized layout (256 text, 4096 speech, required specials only).
    pub fn with_text_size(text_vocab_size: usize) -> Self {
        VocabLayout {
            text_vocab_size,
            ..Default::default()
        }
    }

    /// Checks the special-name invariants. Layouts deserialized from disk
    /// must be validated before use.
    pub fn validate(&self) -> Result<(), VocabError> {
        for (i, name) in self.special_names.iter().enumerate() {
            if self.special_names[..i].contains(name) {
                return Err(VocabError::DuplicateSpecial(name.clone()));
            }
        }
        for required in special::REQUIRED {
            if !self.special_names.iter().any(|n| n == required) {
                return Err(VocabError::MissingSpecial(required.to_string()));
            }
        }
        Ok(())
    }

    pub fn total_size(&self) -> usize {
        self.text_vocab_size + self.speech_codebook_size + self.special_names.len()
    }

    fn speech_base(&self) -> usize {
        self.text_vocab_size
    }

    fn special_base(&self) -> usize {
        self.text_vocab_size + self.speech_codebook_size
    }

    pub fn classify_token(&self, id: TokenId) -> Result<TokenClass, VocabError> {
        let v = id.0 as usize;
        if v < self.speech_base() {
            Ok(TokenClass::Text(id.0))
        } else if v < self.special_base() {
            Ok(TokenClass::Speech((v - self.speech_base()) as u32))
        } else if v < self.total_size() {
            Ok(TokenClass::Special(
                self.special_names[v - self.special_base()].clone(),
            ))
        } else {
            Err(VocabError::OutOfRange {
                id: id.0,
                total: self.total_size(),
            })
        }
    }

    pub fn special_id(&self, name: &str) -> Result<TokenId, VocabError> {
        self.special_names
            .iter()
            .position(|n| n == name)
            .map(|i| TokenId((self.special_base() + i) as u32))
            .ok_or_else(|| VocabError::UnknownSpecial(name.to_string()))
    }

    pub fn is_text(&self, id: TokenId) -> bool {
        (id.0 as usize) < self.speech_base()
    }

    pub fn is_speech(&self, id: TokenId) -> bool {
        let v = id.0 as usize;
        v >= self.speech_base() && v < self.special_base()
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        let v = id.0 as usize;
        v >= self.special_base() && v < self.total_size()
    }

    /// Borrowed special name, if `id` is a declared special.
    pub fn special_name(&self, id: TokenId) -> Option<&str> {
        let v = id.0 as usize;
        if v >= self.special_base() && v < self.total_size() {
            Some(&self.special_names[v - self.special_base()])
        } else {
            None
        }
    }

    /// Token id for the `index`-th text token. Panics if out of range.
    pub fn text_token(&self, index: usize) -> TokenId {
        assert!(index < self.text_vocab_size, "text index out of range");
        TokenId(index as u32)
    }

    /// Token id for the `code`-th speech token. Panics if out of range.
    pub fn speech_token(&self, code: usize) -> TokenId {
        assert!(code < self.speech_codebook_size, "speech code out of range");
        TokenId((self.speech_base() + code) as u32)
    }

    fn required(&self, name: &str) -> TokenId {
        self.special_id(name)
            .expect("layout validated: required special present")
    }

    pub fn asr(&self) -> TokenId {
        self.required(special::ASR)
    }
    pub fn tts(&self) -> TokenId {
        self.required(special::TTS)
    }
    pub fn sos(&self) -> TokenId {
        self.required(special::SOS)
    }
    pub fn eos(&self) -> TokenId {
        self.required(special::EOS)
    }
    pub fn sot(&self) -> TokenId {
        self.required(special::SOT)
    }
    pub fn eot(&self) -> TokenId {
        self.required(special::EOT)
    }
    pub fn silent_text(&self) -> TokenId {
        self.required(special::SILENT_TEXT)
    }
    pub fn silent_speech(&self) -> TokenId {
        self.required(special::SILENT_SPEECH)
    }
    pub fn noise(&self) -> TokenId {
        self.required(special::NOISE)
    }
    pub fn pad(&self) -> TokenId {
        self.required(special::PAD)
    }

    /// True for task-id and delimiter specials ([ASR], [SOS], ... and PAD);
    /// false for silent/noise tokens and all content tokens.
    pub fn is_framing(&self, id: TokenId) -> bool {
        match self.special_name(id) {
            Some(name) => special::FRAMING.contains(&name),
            None => false,
        }
    }

    /// All text token ids, ascending.
    pub fn text_ids(&self) -> Vec<TokenId> {
        (0..self.text_vocab_size as u32).map(TokenId).collect()
    }

    /// All speech token ids, ascending.
    pub fn speech_ids(&self) -> Vec<TokenId> {
        let base = self.speech_base() as u32;
        (0..self.speech_codebook_size as u32)
            .map(|c| TokenId(base + c))
            .collect()
    }

    /// Maps a string to text tokens by code point. Fails on characters
    /// outside the text range.
    pub fn encode_text(&self, s: &str) -> Result<Vec<TokenId>, VocabError> {
        s.chars()
            .enumerate()
            .map(|(position, ch)| {
                let cp = ch as usize;
                if cp < self.text_vocab_size {
                    Ok(TokenId(cp as u32))
                } else {
                    Err(VocabError::UnencodableChar {
                        ch,
                        position,
                        size: self.text_vocab_size,
                    })
                }
            })
            .collect()
    }

    /// Inverse of [`encode_text`](Self::encode_text); non-text tokens are an error.
    pub fn decode_text(&self, tokens: &[TokenId]) -> Result<String, VocabError> {
        tokens
            .iter()
            .map(|&t| {
                if self.is_text(t) {
                    Ok(char::from_u32(t.0).unwrap_or('\u{FFFD}'))
                } else {
                    Err(VocabError::OutOfRange {
                        id: t.0,
                        total: self.text_vocab_size,
                    })
                }
            })
            .collect()
    }

    /// Stable fingerprint of the layout, used to reject model/vocab mismatches.
    pub fn fingerprint(&self) -> String {
        // FNV-1a over a canonical rendering; stability matters, not strength.
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        eat(self.text_vocab_size.to_string().as_bytes());
        eat(b"|");
        eat(self.speech_codebook_size.to_string().as_bytes());
        for name in &self.special_names {
            eat(b"|");
            eat(name.as_bytes());
        }
        format!("{h:016x}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> VocabLayout {
        VocabLayout::with_text_size(256)
    }

    #[test]
    fn classify_range_bounds() {
        let l = layout();
        assert_eq!(l.classify_token(TokenId(0)).unwrap(), TokenClass::Text(0));
        assert_eq!(
            l.classify_token(TokenId(256)).unwrap(),
            TokenClass::Speech(0)
        );
        assert_eq!(
            l.classify_token(TokenId(4352)).unwrap(),
            TokenClass::Special("ASR".into())
        );
    }

    #[test]
    fn classify_out_of_range() {
        let l = layout();
        let total = l.total_size();
        assert_eq!(
            l.classify_token(TokenId(total as u32)),
            Err(VocabError::OutOfRange {
                id: total as u32,
                total
            })
        );
    }

    #[test]
    fn special_id_arithmetic() {
        let l = layout();
        assert_eq!(l.special_id("ASR").unwrap(), TokenId(4352));
        assert_eq!(l.special_id("TTS").unwrap(), TokenId(4353));
        assert_eq!(
            l.special_id("FOO"),
            Err(VocabError::UnknownSpecial("FOO".into()))
        );
    }

    #[test]
    fn special_roundtrip_all_names() {
        let l = layout();
        for name in &l.special_names {
            let id = l.special_id(name).unwrap();
            assert_eq!(
                l.classify_token(id).unwrap(),
                TokenClass::Special(name.clone())
            );
        }
    }

    #[test]
    fn ranges_partition_small_layout() {
        let l = VocabLayout::new(
            4,
            8,
            special::REQUIRED.iter().map(|s| s.to_string()).collect(),
        )
        .unwrap();
        let (mut text, mut speech, mut spec) = (0, 0, 0);
        for id in 0..l.total_size() as u32 {
            match l.classify_token(TokenId(id)).unwrap() {
                TokenClass::Text(i) => {
                    assert_eq!(i, id);
                    text += 1;
                }
                TokenClass::Speech(c) => {
                    assert_eq!(c, id - 4);
                    speech += 1;
                }
                TokenClass::Special(_) => spec += 1,
            }
        }
        assert_eq!((text, speech, spec), (4, 8, 10));
    }

    #[test]
    fn missing_and_duplicate_specials_rejected() {
        let mut names: Vec<String> = special::REQUIRED.iter().map(|s| s.to_string()).collect();
        names.pop();
        assert_eq!(
            VocabLayout::new(4, 4, names.clone()).unwrap_err(),
            VocabError::MissingSpecial("PAD".into())
        );
        names.push("PAD".into());
        names.push("ASR".into());
        assert_eq!(
            VocabLayout::new(4, 4, names).unwrap_err(),
            VocabError::DuplicateSpecial("ASR".into())
        );
    }

    #[test]
    fn text_encode_decode() {
        let l = layout();
        let toks = l.encode_text("hi there").unwrap();
        assert_eq!(l.decode_text(&toks).unwrap(), "hi there");
        match l.encode_text("漢") {
            Err(VocabError::UnencodableChar { ch: '漢', .. }) => {}
            other => panic!("expected UnencodableChar, got {other:?}"),
        }
    }

    #[test]
    fn fingerprint_changes_with_layout() {
        let a = layout().fingerprint();
        let b = VocabLayout::with_text_size(30).fingerprint();
        assert_ne!(a, b);
        assert_eq!(a, layout().fingerprint());
    }
}
