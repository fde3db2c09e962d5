//! The four flattened sequence formats and their inverses.
//!
//! ASR/TTS alignment samples bracket each payload with task-id and
//! sentence delimiters. The half-duplex format concatenates the four
//! per-turn streams in speaker order. The chunked full-duplex formats
//! interleave fixed-size chunks: user speech, assistant text (three-stream
//! only), assistant speech, repeating until both lanes and all scheduled
//! assistant text are exhausted. Every sample carries a per-position
//! channel tag and a loss mask.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::Speaker;
use crate::simulate::DialogueTimeline;
use crate::vocab::{ChannelTag, TokenId, VocabLayout};

#[derive(Debug, Error)]
pub enum FlattenError {
    #[error("token {id} at position {position} is not a {expected} token")]
    ClassMismatch {
        position: usize,
        expected: &'static str,
        id: u32,
    },
    #[error("exchange list is empty")]
    EmptyExchanges,
    #[error("invalid chunk config: {0}")]
    BadChunkConfig(String),
    #[error("malformed sample at position {position}: {reason}")]
    Malformed { position: usize, reason: String },
    #[error("bad timeline: {0}")]
    BadTimeline(String),
}

fn malformed(position: usize, reason: impl Into<String>) -> FlattenError {
    FlattenError::Malformed {
        position,
        reason: reason.into(),
    }
}

/// Chunk sizes for the interleaved full-duplex formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChunkConfig {
    pub text_chunk: usize,
    pub speech_chunk: usize,
}

impl Default for ChunkConfig {
    fn default() -> Self {
        ChunkConfig {
            text_chunk: 2,
            speech_chunk: 10,
        }
    }
}

impl ChunkConfig {
    pub fn validate(&self) -> Result<(), FlattenError> {
        if self.text_chunk == 0 || self.speech_chunk == 0 {
            return Err(FlattenError::BadChunkConfig(
                "chunk sizes must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SampleFormat {
    #[serde(rename = "asr")]
    AsrAlign,
    #[serde(rename = "tts")]
    TtsAlign,
    #[serde(rename = "4stream")]
    FourStream,
    #[serde(rename = "3stream")]
    ThreeStream,
    #[serde(rename = "2stream")]
    TwoStream,
}

impl std::str::FromStr for SampleFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "asr" => Ok(SampleFormat::AsrAlign),
            "tts" => Ok(SampleFormat::TtsAlign),
            "4stream" => Ok(SampleFormat::FourStream),
            "3stream" => Ok(SampleFormat::ThreeStream),
            "2stream" => Ok(SampleFormat::TwoStream),
            other => Err(format!(
                "unknown format `{other}` (expected asr|tts|4stream|3stream|2stream)"
            )),
        }
    }
}

mod mask_bits {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(mask: &[bool], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(mask.iter().map(|&b| b as u8))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<bool>, D::Error> {
        let bits = Vec::<u8>::deserialize(d)?;
        bits.into_iter()
            .map(|b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(serde::de::Error::custom(format!(
                    "mask entry must be 0 or 1, got {other}"
                ))),
            })
            .collect()
    }
}

/// Universal training/inference record: one token sequence plus per-position
/// channel tags and loss mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlattenedSample {
    pub format: SampleFormat,
    pub tokens: Vec<TokenId>,
    pub channels: Vec<ChannelTag>,
    #[serde(with = "mask_bits")]
    pub mask: Vec<bool>,
}

impl FlattenedSample {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Length agreement and the control-positions-are-specials invariant.
    pub fn validate(&self, layout: &VocabLayout) -> Result<(), FlattenError> {
        if self.channels.len() != self.tokens.len() || self.mask.len() != self.tokens.len() {
            return Err(FlattenError::BadTimeline(
                "tokens/channels/mask lengths differ".into(),
            ));
        }
        for (p, (&tok, &ch)) in self.tokens.iter().zip(&self.channels).enumerate() {
            if ch == ChannelTag::Control && !layout.is_special(tok) {
                return Err(malformed(p, "control position holds a non-special token"));
            }
        }
        Ok(())
    }
}

/// One half-duplex exchange: the four per-turn streams.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Exchange {
    pub user_speech: Vec<TokenId>,
    pub user_text: Vec<TokenId>,
    pub assistant_text: Vec<TokenId>,
    pub assistant_speech: Vec<TokenId>,
}

/// Streams recovered from a flattened sample.
#[derive(Debug, Clone, PartialEq)]
pub enum Unflattened {
    AsrAlign {
        speech: Vec<TokenId>,
        text: Vec<TokenId>,
    },
    TtsAlign {
        text: Vec<TokenId>,
        speech: Vec<TokenId>,
    },
    FourStream { exchanges: Vec<Exchange> },
    ThreeStream {
        user_lane: Vec<TokenId>,
        assistant_text: Vec<TokenId>,
        assistant_lane: Vec<TokenId>,
    },
    TwoStream {
        user_lane: Vec<TokenId>,
        assistant_lane: Vec<TokenId>,
    },
}

fn check_all_speech(
    layout: &VocabLayout,
    tokens: &[TokenId],
) -> Result<(), FlattenError> {
    for (position, &t) in tokens.iter().enumerate() {
        if !layout.is_speech(t) {
            return Err(FlattenError::ClassMismatch {
                position,
                expected: "speech",
                id: t.0,
            });
        }
    }
    Ok(())
}

fn check_all_text(layout: &VocabLayout, tokens: &[TokenId]) -> Result<(), FlattenError> {
    for (position, &t) in tokens.iter().enumerate() {
        if !layout.is_text(t) {
            return Err(FlattenError::ClassMismatch {
                position,
                expected: "text",
                id: t.0,
            });
        }
    }
    Ok(())
}

struct SampleBuilder {
    tokens: Vec<TokenId>,
    channels: Vec<ChannelTag>,
    mask: Vec<bool>,
}

impl SampleBuilder {
    fn new() -> Self {
        SampleBuilder {
            tokens: Vec::new(),
            channels: Vec::new(),
            mask: Vec::new(),
        }
    }

    fn push(&mut self, token: TokenId, channel: ChannelTag, mask: bool) {
        self.tokens.push(token);
        self.channels.push(channel);
        self.mask.push(mask);
    }

    fn extend(&mut self, tokens: &[TokenId], channel: ChannelTag, mask: bool) {
        for &t in tokens {
            self.push(t, channel, mask);
        }
    }

    fn finish(self, format: SampleFormat) -> FlattenedSample {
        FlattenedSample {
            format,
            tokens: self.tokens,
            channels: self.channels,
            mask: self.mask,
        }
    }
}

/// `[ASR][SOS] speech [EOS][SOT] text [EOT]`; only the transcript (from
/// `[SOT]` onward) contributes to the loss.
pub fn build_asr_sample(
    layout: &VocabLayout,
    speech: &[TokenId],
    text: &[TokenId],
) -> Result<FlattenedSample, FlattenError> {
    check_all_speech(layout, speech)?;
    check_all_text(layout, text)?;
    let mut b = SampleBuilder::new();
    b.push(layout.asr(), ChannelTag::Control, false);
    b.push(layout.sos(), ChannelTag::Control, false);
    b.extend(speech, ChannelTag::UserSpeech, false);
    b.push(layout.eos(), ChannelTag::Control, false);
    b.push(layout.sot(), ChannelTag::Control, true);
    b.extend(text, ChannelTag::AssistantText, true);
    b.push(layout.eot(), ChannelTag::Control, true);
    Ok(b.finish(SampleFormat::AsrAlign))
}

/// `[TTS][SOT] text [EOT][SOS] speech [EOS]`; mirror image of the ASR
/// sample, masked from `[SOS]` onward.
pub fn build_tts_sample(
    layout: &VocabLayout,
    text: &[TokenId],
    speech: &[TokenId],
) -> Result<FlattenedSample, FlattenError> {
    check_all_text(layout, text)?;
    check_all_speech(layout, speech)?;
    let mut b = SampleBuilder::new();
    b.push(layout.tts(), ChannelTag::Control, false);
    b.push(layout.sot(), ChannelTag::Control, false);
    b.extend(text, ChannelTag::UserText, false);
    b.push(layout.eot(), ChannelTag::Control, false);
    b.push(layout.sos(), ChannelTag::Control, true);
    b.extend(speech, ChannelTag::AssistantSpeech, true);
    b.push(layout.eos(), ChannelTag::Control, true);
    Ok(b.finish(SampleFormat::TtsAlign))
}

/// Concatenates exchanges as user speech, user text, assistant text,
/// assistant speech, each segment bracketed by its delimiters. User-channel
/// content is loss-masked.
pub fn flatten_half_duplex(
    layout: &VocabLayout,
    exchanges: &[Exchange],
) -> Result<FlattenedSample, FlattenError> {
    if exchanges.is_empty() {
        return Err(FlattenError::EmptyExchanges);
    }
    let mut b = SampleBuilder::new();
    for ex in exchanges {
        check_all_speech(layout, &ex.user_speech)?;
        check_all_text(layout, &ex.user_text)?;
        check_all_text(layout, &ex.assistant_text)?;
        check_all_speech(layout, &ex.assistant_speech)?;

        b.push(layout.sos(), ChannelTag::Control, true);
        b.extend(&ex.user_speech, ChannelTag::UserSpeech, false);
        b.push(layout.eos(), ChannelTag::Control, true);
        b.push(layout.sot(), ChannelTag::Control, true);
        b.extend(&ex.user_text, ChannelTag::UserText, false);
        b.push(layout.eot(), ChannelTag::Control, true);
        b.push(layout.sot(), ChannelTag::Control, true);
        b.extend(&ex.assistant_text, ChannelTag::AssistantText, true);
        b.push(layout.eot(), ChannelTag::Control, true);
        b.push(layout.sos(), ChannelTag::Control, true);
        b.extend(&ex.assistant_speech, ChannelTag::AssistantSpeech, true);
        b.push(layout.eos(), ChannelTag::Control, true);
    }
    Ok(b.finish(SampleFormat::FourStream))
}

/// Assistant-turn text queued for chunked emission.
struct TextSchedule {
    entries: Vec<(usize, VecDeque<TokenId>)>,
    head: usize,
}

impl TextSchedule {
    fn from_timeline(timeline: &DialogueTimeline, speech_chunk: usize) -> Self {
        let entries = timeline
            .turn_texts
            .iter()
            .filter(|t| t.speaker == Speaker::Assistant && !t.text.is_empty())
            .map(|t| (t.start_slot / speech_chunk, t.text.iter().copied().collect()))
            .collect();
        TextSchedule { entries, head: 0 }
    }

    fn remaining(&mut self) -> bool {
        while self.head < self.entries.len() && self.entries[self.head].1.is_empty() {
            self.head += 1;
        }
        self.head < self.entries.len()
    }

    /// Next text token whose turn is active by chunk `n`. Turns release in
    /// order; a turn's text never starts before the chunk containing its
    /// first speech slot.
    fn pop(&mut self, n: usize) -> Option<TokenId> {
        if self.remaining() && self.entries[self.head].0 <= n {
            self.entries[self.head].1.pop_front()
        } else {
            None
        }
    }
}

fn lane_token(lane: &[TokenId], slot: usize, silent: TokenId) -> TokenId {
    lane.get(slot).copied().unwrap_or(silent)
}

/// Interleaves chunks of user speech, assistant text, assistant speech.
/// Lanes are tail-padded with silence to a chunk multiple and extended with
/// silent chunks until every scheduled assistant text token has been
/// emitted, so the text stream carries the turns in full.
pub fn flatten_three_stream(
    layout: &VocabLayout,
    timeline: &DialogueTimeline,
    cfg: &ChunkConfig,
) -> Result<FlattenedSample, FlattenError> {
    cfg.validate()?;
    timeline
        .validate(layout)
        .map_err(|e| FlattenError::BadTimeline(e.to_string()))?;
    let silent_speech = layout.silent_speech();
    let silent_text = layout.silent_text();
    let s = cfg.speech_chunk;
    let lane_chunks = timeline.user_lane.len().div_ceil(s);
    let mut schedule = TextSchedule::from_timeline(timeline, s);

    let mut b = SampleBuilder::new();
    let mut n = 0;
    while n < lane_chunks || schedule.remaining() {
        for i in 0..s {
            let tok = lane_token(&timeline.user_lane, n * s + i, silent_speech);
            b.push(tok, ChannelTag::UserSpeech, false);
        }
        for _ in 0..cfg.text_chunk {
            let tok = schedule.pop(n).unwrap_or(silent_text);
            b.push(tok, ChannelTag::AssistantText, true);
        }
        for i in 0..s {
            let tok = lane_token(&timeline.assistant_lane, n * s + i, silent_speech);
            b.push(tok, ChannelTag::AssistantSpeech, true);
        }
        n += 1;
    }
    Ok(b.finish(SampleFormat::ThreeStream))
}

/// Speech-only variant: chunks of user speech then assistant speech.
pub fn flatten_two_stream(
    layout: &VocabLayout,
    timeline: &DialogueTimeline,
    cfg: &ChunkConfig,
) -> Result<FlattenedSample, FlattenError> {
    cfg.validate()?;
    timeline
        .validate(layout)
        .map_err(|e| FlattenError::BadTimeline(e.to_string()))?;
    let silent_speech = layout.silent_speech();
    let s = cfg.speech_chunk;
    let lane_chunks = timeline.user_lane.len().div_ceil(s);

    let mut b = SampleBuilder::new();
    for n in 0..lane_chunks {
        for i in 0..s {
            let tok = lane_token(&timeline.user_lane, n * s + i, silent_speech);
            b.push(tok, ChannelTag::UserSpeech, false);
        }
        for i in 0..s {
            let tok = lane_token(&timeline.assistant_lane, n * s + i, silent_speech);
            b.push(tok, ChannelTag::AssistantSpeech, true);
        }
    }
    Ok(b.finish(SampleFormat::TwoStream))
}

/// Pairs each user turn with the following assistant turn, slicing speech
/// from the lanes, for half-duplex flattening.
pub fn timeline_to_exchanges(timeline: &DialogueTimeline) -> Result<Vec<Exchange>, FlattenError> {
    let mut exchanges = Vec::new();
    for pair in timeline.turn_texts.chunks(2) {
        let user = &pair[0];
        if user.speaker != Speaker::User {
            return Err(FlattenError::BadTimeline(
                "turn records do not alternate user/assistant".into(),
            ));
        }
        let mut ex = Exchange {
            user_speech: timeline.user_lane[user.start_slot..user.end_slot].to_vec(),
            user_text: user.text.clone(),
            ..Default::default()
        };
        if let Some(assistant) = pair.get(1) {
            if assistant.speaker != Speaker::Assistant {
                return Err(FlattenError::BadTimeline(
                    "turn records do not alternate user/assistant".into(),
                ));
            }
            ex.assistant_text = assistant.text.clone();
            ex.assistant_speech =
                timeline.assistant_lane[assistant.start_slot..assistant.end_slot].to_vec();
        }
        exchanges.push(ex);
    }
    if exchanges.is_empty() {
        return Err(FlattenError::EmptyExchanges);
    }
    Ok(exchanges)
}

/// Loss mask from first principles: user-channel positions are masked out
/// for the dialogue formats; alignment samples mask everything before the
/// output-side opening delimiter.
pub fn build_loss_mask(layout: &VocabLayout, sample: &FlattenedSample) -> Vec<bool> {
    match sample.format {
        SampleFormat::AsrAlign => mask_from_delimiter(sample, layout.sot()),
        SampleFormat::TtsAlign => mask_from_delimiter(sample, layout.sos()),
        SampleFormat::FourStream | SampleFormat::ThreeStream | SampleFormat::TwoStream => sample
            .channels
            .iter()
            .map(|c| !matches!(c, ChannelTag::UserSpeech | ChannelTag::UserText))
            .collect(),
    }
}

fn mask_from_delimiter(sample: &FlattenedSample, delim: TokenId) -> Vec<bool> {
    let start = sample
        .tokens
        .iter()
        .position(|&t| t == delim)
        .unwrap_or(sample.tokens.len());
    (0..sample.tokens.len()).map(|p| p >= start).collect()
}

struct Cursor<'a> {
    sample: &'a FlattenedSample,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn expect_delim(&mut self, delim: TokenId, name: &str) -> Result<(), FlattenError> {
        match self.sample.tokens.get(self.pos) {
            Some(&t) if t == delim && self.sample.channels[self.pos] == ChannelTag::Control => {
                self.pos += 1;
                Ok(())
            }
            Some(_) => Err(malformed(self.pos, format!("expected [{name}]"))),
            None => Err(malformed(self.pos, format!("truncated before [{name}]"))),
        }
    }

    /// Collects content tokens until `until`, enforcing class and channel.
    fn content_until(
        &mut self,
        until: TokenId,
        channel: ChannelTag,
        is_content: impl Fn(TokenId) -> bool,
        expected: &str,
    ) -> Result<Vec<TokenId>, FlattenError> {
        let mut out = Vec::new();
        loop {
            match self.sample.tokens.get(self.pos) {
                Some(&t) if t == until => return Ok(out),
                Some(&t) => {
                    if !is_content(t) {
                        return Err(malformed(
                            self.pos,
                            format!("expected a {expected} token in this segment"),
                        ));
                    }
                    if self.sample.channels[self.pos] != channel {
                        return Err(malformed(self.pos, "channel tag disagrees with segment"));
                    }
                    out.push(t);
                    self.pos += 1;
                }
                None => return Err(malformed(self.pos, "truncated segment")),
            }
        }
    }

    fn at_end(&self) -> bool {
        self.pos >= self.sample.tokens.len()
    }
}

/// Inverse of the flatten operations, validating structure as it goes.
/// For the chunked formats the chunk sizes are inferred from the channel
/// pattern of the first chunk and enforced over the whole sample.
pub fn unflatten(
    layout: &VocabLayout,
    sample: &FlattenedSample,
) -> Result<Unflattened, FlattenError> {
    sample.validate(layout)?;
    if sample.is_empty() {
        return Err(malformed(0, "empty sample"));
    }
    match sample.format {
        SampleFormat::AsrAlign => {
            let mut c = Cursor { sample, pos: 0 };
            c.expect_delim(layout.asr(), "ASR")?;
            c.expect_delim(layout.sos(), "SOS")?;
            let speech = c.content_until(
                layout.eos(),
                ChannelTag::UserSpeech,
                |t| layout.is_speech(t),
                "speech",
            )?;
            c.expect_delim(layout.eos(), "EOS")?;
            c.expect_delim(layout.sot(), "SOT")?;
            let text = c.content_until(
                layout.eot(),
                ChannelTag::AssistantText,
                |t| layout.is_text(t),
                "text",
            )?;
            c.expect_delim(layout.eot(), "EOT")?;
            if !c.at_end() {
                return Err(malformed(c.pos, "trailing tokens after [EOT]"));
            }
            Ok(Unflattened::AsrAlign { speech, text })
        }
        SampleFormat::TtsAlign => {
            let mut c = Cursor { sample, pos: 0 };
            c.expect_delim(layout.tts(), "TTS")?;
            c.expect_delim(layout.sot(), "SOT")?;
            let text = c.content_until(
                layout.eot(),
                ChannelTag::UserText,
                |t| layout.is_text(t),
                "text",
            )?;
            c.expect_delim(layout.eot(), "EOT")?;
            c.expect_delim(layout.sos(), "SOS")?;
            let speech = c.content_until(
                layout.eos(),
                ChannelTag::AssistantSpeech,
                |t| layout.is_speech(t),
                "speech",
            )?;
            c.expect_delim(layout.eos(), "EOS")?;
            if !c.at_end() {
                return Err(malformed(c.pos, "trailing tokens after [EOS]"));
            }
            Ok(Unflattened::TtsAlign { text, speech })
        }
        SampleFormat::FourStream => {
            let mut c = Cursor { sample, pos: 0 };
            let mut exchanges = Vec::new();
            while !c.at_end() {
                c.expect_delim(layout.sos(), "SOS")?;
                let user_speech = c.content_until(
                    layout.eos(),
                    ChannelTag::UserSpeech,
                    |t| layout.is_speech(t),
                    "speech",
                )?;
                c.expect_delim(layout.eos(), "EOS")?;
                c.expect_delim(layout.sot(), "SOT")?;
                let user_text = c.content_until(
                    layout.eot(),
                    ChannelTag::UserText,
                    |t| layout.is_text(t),
                    "text",
                )?;
                c.expect_delim(layout.eot(), "EOT")?;
                c.expect_delim(layout.sot(), "SOT")?;
                let assistant_text = c.content_until(
                    layout.eot(),
                    ChannelTag::AssistantText,
                    |t| layout.is_text(t),
                    "text",
                )?;
                c.expect_delim(layout.eot(), "EOT")?;
                c.expect_delim(layout.sos(), "SOS")?;
                let assistant_speech = c.content_until(
                    layout.eos(),
                    ChannelTag::AssistantSpeech,
                    |t| layout.is_speech(t),
                    "speech",
                )?;
                c.expect_delim(layout.eos(), "EOS")?;
                exchanges.push(Exchange {
                    user_speech,
                    user_text,
                    assistant_text,
                    assistant_speech,
                });
            }
            Ok(Unflattened::FourStream { exchanges })
        }
        SampleFormat::ThreeStream => {
            let (s, t) = infer_chunks(sample)?;
            let period = 2 * s + t;
            let mut user_lane = Vec::new();
            let mut assistant_text = Vec::new();
            let mut assistant_lane = Vec::new();
            for (p, (&tok, &ch)) in sample.tokens.iter().zip(&sample.channels).enumerate() {
                let r = p % period;
                let (want, lane): (ChannelTag, &mut Vec<TokenId>) = if r < s {
                    (ChannelTag::UserSpeech, &mut user_lane)
                } else if r < s + t {
                    (ChannelTag::AssistantText, &mut assistant_text)
                } else {
                    (ChannelTag::AssistantSpeech, &mut assistant_lane)
                };
                if ch != want {
                    return Err(malformed(p, "channel breaks the chunk schedule"));
                }
                check_slot_class(layout, tok, want, p)?;
                lane.push(tok);
            }
            Ok(Unflattened::ThreeStream {
                user_lane,
                assistant_text,
                assistant_lane,
            })
        }
        SampleFormat::TwoStream => {
            let s = sample
                .channels
                .iter()
                .take_while(|&&c| c == ChannelTag::UserSpeech)
                .count();
            if s == 0 {
                return Err(malformed(0, "expected a user speech chunk"));
            }
            let period = 2 * s;
            if !sample.len().is_multiple_of(period) {
                return Err(malformed(
                    sample.len() / period * period,
                    "truncated chunk",
                ));
            }
            let mut user_lane = Vec::new();
            let mut assistant_lane = Vec::new();
            for (p, (&tok, &ch)) in sample.tokens.iter().zip(&sample.channels).enumerate() {
                let (want, lane) = if p % period < s {
                    (ChannelTag::UserSpeech, &mut user_lane)
                } else {
                    (ChannelTag::AssistantSpeech, &mut assistant_lane)
                };
                if ch != want {
                    return Err(malformed(p, "channel breaks the chunk schedule"));
                }
                check_slot_class(layout, tok, want, p)?;
                lane.push(tok);
            }
            Ok(Unflattened::TwoStream {
                user_lane,
                assistant_lane,
            })
        }
    }
}

fn infer_chunks(sample: &FlattenedSample) -> Result<(usize, usize), FlattenError> {
    let s = sample
        .channels
        .iter()
        .take_while(|&&c| c == ChannelTag::UserSpeech)
        .count();
    if s == 0 {
        return Err(malformed(0, "expected a user speech chunk"));
    }
    let t = sample.channels[s..]
        .iter()
        .take_while(|&&c| c == ChannelTag::AssistantText)
        .count();
    if t == 0 {
        return Err(malformed(s, "expected an assistant text chunk"));
    }
    let period = 2 * s + t;
    if !sample.len().is_multiple_of(period) {
        return Err(malformed(
            sample.len() / period * period,
            "truncated chunk",
        ));
    }
    Ok((s, t))
}

fn check_slot_class(
    layout: &VocabLayout,
    tok: TokenId,
    channel: ChannelTag,
    position: usize,
) -> Result<(), FlattenError> {
    let ok = match channel {
        ChannelTag::UserSpeech => {
            layout.is_speech(tok) || tok == layout.silent_speech() || tok == layout.noise()
        }
        ChannelTag::AssistantSpeech => layout.is_speech(tok) || tok == layout.silent_speech(),
        ChannelTag::AssistantText => layout.is_text(tok) || tok == layout.silent_text(),
        ChannelTag::UserText => layout.is_text(tok),
        ChannelTag::Control => layout.is_special(tok),
    };
    if ok {
        Ok(())
    } else {
        Err(malformed(
            position,
            "wrong token class for its scheduled channel slot",
        ))
    }
}
