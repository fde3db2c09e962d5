//! Chunked streaming duplex inference.
//!
//! A session consumes the user speech stream one chunk at a time and
//! autoregressively fills in the assistant text and speech chunks, keeping
//! its running context a valid three-stream (or two-stream) prefix. The
//! first assistant tokens are emitted after exactly one user speech chunk.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flatten::{build_loss_mask, ChunkConfig, FlattenError, FlattenedSample, SampleFormat};
use crate::predictor::{sample_next_with, Predictor, PredictorError};
use crate::vocab::{ChannelTag, TokenId, VocabLayout};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("session is in phase {phase:?}, cannot accept a user chunk")]
    WrongPhase { phase: Phase },
    #[error("user chunk length {got}, expected {expected}")]
    BadChunkLength { expected: usize, got: usize },
    #[error("token {id} at chunk position {position} is not speech, silence, or noise")]
    IllegalTokenClass { position: usize, id: u32 },
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Flatten(#[from] FlattenError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DuplexMode {
    #[serde(rename = "3stream")]
    ThreeStream,
    #[serde(rename = "2stream")]
    TwoStream,
}

impl std::str::FromStr for DuplexMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "3stream" => Ok(DuplexMode::ThreeStream),
            "2stream" => Ok(DuplexMode::TwoStream),
            other => Err(format!("unknown mode `{other}` (expected 3stream|2stream)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    AwaitUserChunk,
    EmitText,
    EmitSpeech,
}

/// Assistant output for one chunk cycle. `text` is empty in two-stream mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkOutput {
    pub text: Vec<TokenId>,
    pub speech: Vec<TokenId>,
}

/// Stateful streaming session. One session is single-threaded; distinct
/// sessions are independent. Owns its model handle; pass a reference when
/// the model lives elsewhere.
pub struct DuplexSession<P: Predictor> {
    model: P,
    layout: VocabLayout,
    cfg: ChunkConfig,
    mode: DuplexMode,
    temperature: f64,
    rng: ChaCha8Rng,
    tokens: Vec<TokenId>,
    channels: Vec<ChannelTag>,
    phase: Phase,
    chunks_fed: usize,
    text_legal: Vec<TokenId>,
    speech_legal: Vec<TokenId>,
}

impl<P: Predictor> DuplexSession<P> {
    pub fn new(
        model: P,
        layout: &VocabLayout,
        cfg: ChunkConfig,
        mode: DuplexMode,
        temperature: f64,
        seed: u64,
    ) -> Result<Self, EngineError> {
        cfg.validate()?;
        let mut text_legal = layout.text_ids();
        text_legal.push(layout.silent_text());
        let mut speech_legal = layout.speech_ids();
        speech_legal.push(layout.silent_speech());
        Ok(DuplexSession {
            model,
            layout: layout.clone(),
            cfg,
            mode,
            temperature,
            rng: ChaCha8Rng::seed_from_u64(seed),
            tokens: Vec::new(),
            channels: Vec::new(),
            phase: Phase::AwaitUserChunk,
            chunks_fed: 0,
            text_legal,
            speech_legal,
        })
    }

    pub fn chunks_fed(&self) -> usize {
        self.chunks_fed
    }

    pub fn context(&self) -> &[TokenId] {
        &self.tokens
    }

    /// Running context as a flattened sample; always schedule-valid.
    pub fn context_sample(&self) -> FlattenedSample {
        let format = match self.mode {
            DuplexMode::ThreeStream => SampleFormat::ThreeStream,
            DuplexMode::TwoStream => SampleFormat::TwoStream,
        };
        let mut sample = FlattenedSample {
            format,
            tokens: self.tokens.clone(),
            channels: self.channels.clone(),
            mask: Vec::new(),
        };
        sample.mask = build_loss_mask(&self.layout, &sample);
        sample
    }

    fn push(&mut self, token: TokenId, channel: ChannelTag) {
        self.tokens.push(token);
        self.channels.push(channel);
    }

    /// Consumes one user speech chunk and emits the assistant text and
    /// speech chunks for this cycle.
    pub fn feed_user_chunk(&mut self, chunk: &[TokenId]) -> Result<ChunkOutput, EngineError> {
        if self.phase != Phase::AwaitUserChunk {
            return Err(EngineError::WrongPhase { phase: self.phase });
        }
        if chunk.len() != self.cfg.speech_chunk {
            return Err(EngineError::BadChunkLength {
                expected: self.cfg.speech_chunk,
                got: chunk.len(),
            });
        }
        let silent = self.layout.silent_speech();
        let noise = self.layout.noise();
        for (position, &t) in chunk.iter().enumerate() {
            if !(self.layout.is_speech(t) || t == silent || t == noise) {
                return Err(EngineError::IllegalTokenClass { position, id: t.0 });
            }
        }
        for &t in chunk {
            self.push(t, ChannelTag::UserSpeech);
        }

        let mut text = Vec::new();
        if self.mode == DuplexMode::ThreeStream {
            self.phase = Phase::EmitText;
            for _ in 0..self.cfg.text_chunk {
                let tok = sample_next_with(
                    &self.model,
                    &self.tokens,
                    &self.text_legal,
                    self.temperature,
                    &mut self.rng,
                )?;
                self.push(tok, ChannelTag::AssistantText);
                text.push(tok);
            }
        }

        self.phase = Phase::EmitSpeech;
        let mut speech = Vec::new();
        for _ in 0..self.cfg.speech_chunk {
            let tok = sample_next_with(
                &self.model,
                &self.tokens,
                &self.speech_legal,
                self.temperature,
                &mut self.rng,
            )?;
            self.push(tok, ChannelTag::AssistantSpeech);
            speech.push(tok);
        }

        self.phase = Phase::AwaitUserChunk;
        self.chunks_fed += 1;
        Ok(ChunkOutput { text, speech })
    }
}

/// Runs a whole user lane through a fresh session, delivering each chunk's
/// output to `on_chunk` in order before the next chunk is consumed.
#[allow(clippy::too_many_arguments)]
pub fn run_duplex_with<P: Predictor>(
    model: &P,
    layout: &VocabLayout,
    user_lane: &[TokenId],
    cfg: ChunkConfig,
    mode: DuplexMode,
    temperature: f64,
    seed: u64,
    mut on_chunk: impl FnMut(usize, &ChunkOutput),
) -> Result<(Vec<TokenId>, Vec<TokenId>), EngineError> {
    if !user_lane.len().is_multiple_of(cfg.speech_chunk) {
        return Err(EngineError::BadChunkLength {
            expected: cfg.speech_chunk,
            got: user_lane.len() % cfg.speech_chunk,
        });
    }
    let mut session = DuplexSession::new(model, layout, cfg, mode, temperature, seed)?;
    let mut text_lane = Vec::new();
    let mut speech_lane = Vec::with_capacity(user_lane.len());
    for (n, chunk) in user_lane.chunks(cfg.speech_chunk).enumerate() {
        let out = session.feed_user_chunk(chunk)?;
        on_chunk(n, &out);
        text_lane.extend_from_slice(&out.text);
        speech_lane.extend_from_slice(&out.speech);
    }
    Ok((text_lane, speech_lane))
}

/// [`run_duplex_with`] without the callback: returns the emitted assistant
/// text and speech lanes.
pub fn run_duplex<P: Predictor>(
    model: &P,
    layout: &VocabLayout,
    user_lane: &[TokenId],
    cfg: ChunkConfig,
    mode: DuplexMode,
    temperature: f64,
    seed: u64,
) -> Result<(Vec<TokenId>, Vec<TokenId>), EngineError> {
    run_duplex_with(
        model,
        layout,
        user_lane,
        cfg,
        mode,
        temperature,
        seed,
        |_, _| {},
    )
}

/// Pads a user lane with silence up to a multiple of the speech chunk.
pub fn pad_user_lane(layout: &VocabLayout, lane: &[TokenId], speech_chunk: usize) -> Vec<TokenId> {
    let mut out = lane.to_vec();
    let target = lane.len().div_ceil(speech_chunk) * speech_chunk;
    out.resize(target, layout.silent_speech());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flatten::unflatten;
    use crate::predictor::{train_ngram, NGramModel};
    use crate::vocab::VocabLayout;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_layout() -> VocabLayout {
        VocabLayout::new(
            8,
            16,
            crate::vocab::special::REQUIRED
                .iter()
                .map(|s| s.to_string())
                .collect(),
        )
        .unwrap()
    }

    fn tiny_model(l: &VocabLayout) -> NGramModel {
        use crate::vocab::ChannelTag;
        let tokens: Vec<TokenId> = (0..16).map(|c| l.speech_token(c % 16)).collect();
        let sample = crate::flatten::FlattenedSample {
            format: SampleFormat::TwoStream,
            channels: vec![ChannelTag::AssistantSpeech; tokens.len()],
            mask: vec![true; tokens.len()],
            tokens,
        };
        train_ngram(l, &[sample], 2, 0.1).unwrap()
    }

    fn cfg() -> ChunkConfig {
        ChunkConfig {
            text_chunk: 2,
            speech_chunk: 5,
        }
    }

    #[test]
    fn first_chunk_yields_full_cycle() {
        let l = small_layout();
        let model = tiny_model(&l);
        let mut session =
            DuplexSession::new(&model, &l, cfg(), DuplexMode::ThreeStream, 1.0, 0).unwrap();
        let chunk = vec![l.silent_speech(); 5];
        let out = session.feed_user_chunk(&chunk).unwrap();
        assert_eq!(out.text.len(), 2);
        assert_eq!(out.speech.len(), 5);
        assert_eq!(session.context().len(), 12);
    }

    #[test]
    fn two_stream_emits_no_text() {
        let l = small_layout();
        let model = tiny_model(&l);
        let mut session =
            DuplexSession::new(&model, &l, cfg(), DuplexMode::TwoStream, 1.0, 0).unwrap();
        let out = session.feed_user_chunk(&vec![l.silent_speech(); 5]).unwrap();
        assert!(out.text.is_empty());
        assert_eq!(out.speech.len(), 5);
    }

    #[test]
    fn bad_chunk_length_rejected() {
        let l = small_layout();
        let model = tiny_model(&l);
        let mut session =
            DuplexSession::new(&model, &l, cfg(), DuplexMode::ThreeStream, 1.0, 0).unwrap();
        match session.feed_user_chunk(&vec![l.silent_speech(); 4]) {
            Err(EngineError::BadChunkLength {
                expected: 5,
                got: 4,
            }) => {}
            other => panic!("expected BadChunkLength, got {other:?}"),
        }
    }

    #[test]
    fn illegal_token_class_rejected() {
        let l = small_layout();
        let model = tiny_model(&l);
        let mut session =
            DuplexSession::new(&model, &l, cfg(), DuplexMode::ThreeStream, 1.0, 0).unwrap();
        let mut chunk = vec![l.silent_speech(); 5];
        chunk[3] = l.text_token(1);
        match session.feed_user_chunk(&chunk) {
            Err(EngineError::IllegalTokenClass { position: 3, .. }) => {}
            other => panic!("expected IllegalTokenClass, got {other:?}"),
        }
    }

    #[test]
    fn replay_is_deterministic() {
        let l = small_layout();
        let model = tiny_model(&l);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let lane: Vec<TokenId> = (0..20)
            .map(|_| l.speech_token(rng.random_range(0..16)))
            .collect();
        let a = run_duplex(&model, &l, &lane, cfg(), DuplexMode::ThreeStream, 0.8, 42).unwrap();
        let b = run_duplex(&model, &l, &lane, cfg(), DuplexMode::ThreeStream, 0.8, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn lane_length_laws_and_empty_lane() {
        let l = small_layout();
        let model = tiny_model(&l);
        let lane = vec![l.silent_speech(); 50];
        let c = ChunkConfig {
            text_chunk: 2,
            speech_chunk: 10,
        };
        let (text, speech) =
            run_duplex(&model, &l, &lane, c, DuplexMode::ThreeStream, 1.0, 1).unwrap();
        assert_eq!(speech.len(), 50);
        assert_eq!(text.len(), 5 * 2);
        let (t2, s2) = run_duplex(&model, &l, &[], c, DuplexMode::ThreeStream, 1.0, 1).unwrap();
        assert!(t2.is_empty() && s2.is_empty());
    }

    #[test]
    fn context_passes_unflatten_validation() {
        let l = small_layout();
        let model = tiny_model(&l);
        for mode in [DuplexMode::ThreeStream, DuplexMode::TwoStream] {
            let mut session = DuplexSession::new(&model, &l, cfg(), mode, 1.0, 3).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            for _ in 0..4 {
                let chunk: Vec<TokenId> = (0..5)
                    .map(|_| l.speech_token(rng.random_range(0..16)))
                    .collect();
                session.feed_user_chunk(&chunk).unwrap();
            }
            unflatten(&l, &session.context_sample()).unwrap();
        }
    }

    #[test]
    fn callback_sees_chunks_in_order() {
        let l = small_layout();
        let model = tiny_model(&l);
        let lane = vec![l.silent_speech(); 15];
        let mut seen = Vec::new();
        run_duplex_with(
            &model,
            &l,
            &lane,
            cfg(),
            DuplexMode::ThreeStream,
            1.0,
            5,
            |n, out| seen.push((n, out.speech.len())),
        )
        .unwrap();
        assert_eq!(seen, vec![(0, 5), (1, 5), (2, 5)]);
    }
}
