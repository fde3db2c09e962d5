//! Places synthesized per-turn token audio onto a shared two-lane timeline,
//! covering the three interaction situations: prompt reply after the user
//! finishes, barge-in with abrupt assistant stop, and assistant silence
//! while waiting. Ground-truth events are recorded for the metrics.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{CodecError, CodecMap};
use crate::filter::{DialogueScript, ScriptError, Speaker};
use crate::vocab::{TokenId, VocabLayout};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Script(#[from] ScriptError),
    #[error(transparent)]
    Encode(#[from] CodecError),
    #[error("invalid simulation config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Speech tokens per second of timeline.
    pub token_rate_hz: u32,
    /// Uniform range (inclusive) of silent slots between a user turn end and
    /// the assistant reply; also used for the gap before the next user turn.
    pub response_gap_tokens: (usize, usize),
    /// Probability that a user turn starts as a barge-in over ongoing
    /// assistant speech.
    pub interruption_prob: f64,
    /// Uniform range of the fraction of the assistant turn elapsed when a
    /// barge-in starts.
    pub interruption_offset_frac: (f64, f64),
    /// Slots the assistant keeps speaking after a barge-in onset (the onset
    /// slot included) before its lane is cut to silence.
    pub assistant_stop_delay_tokens: usize,
    /// Probability that a user-lane silence slot is replaced by NOISE.
    pub noise_sub_rate: f64,
    /// Base seed used by the pipeline when deriving per-dialogue seeds.
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            token_rate_hz: 25,
            response_gap_tokens: (2, 10),
            interruption_prob: 0.2,
            interruption_offset_frac: (0.3, 0.8),
            assistant_stop_delay_tokens: 3,
            noise_sub_rate: 0.05,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.token_rate_hz == 0 {
            return Err(SimError::Config("token_rate_hz must be positive".into()));
        }
        for (name, p) in [
            ("interruption_prob", self.interruption_prob),
            ("noise_sub_rate", self.noise_sub_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(SimError::Config(format!("{name} must be in [0,1]")));
            }
        }
        if self.response_gap_tokens.0 > self.response_gap_tokens.1 {
            return Err(SimError::Config("response_gap_tokens range reversed".into()));
        }
        let (lo, hi) = self.interruption_offset_frac;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(SimError::Config(
                "interruption_offset_frac must be an ordered range in [0,1]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    UserTurnEnd,
    InterruptionOnset,
    AssistantTurnStart,
    AssistantTruncation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelineEvent {
    pub kind: EventKind,
    pub slot: usize,
}

/// Per-turn text alignment: the text tokens actually spoken in
/// `[start_slot, end_slot)` of the turn's lane.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnAlign {
    pub speaker: Speaker,
    pub text: Vec<TokenId>,
    pub start_slot: usize,
    pub end_slot: usize,
}

/// Two time-aligned token lanes at a fixed token rate, with per-turn text
/// alignment and ground-truth events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueTimeline {
    pub token_rate_hz: u32,
    pub user_lane: Vec<TokenId>,
    pub assistant_lane: Vec<TokenId>,
    pub turn_texts: Vec<TurnAlign>,
    pub events: Vec<TimelineEvent>,
}

impl DialogueTimeline {
    /// Structural checks used by tests and by the CLI before flattening.
    pub fn validate(&self, layout: &VocabLayout) -> Result<(), SimError> {
        if self.user_lane.len() != self.assistant_lane.len() {
            return Err(SimError::Config("lane lengths differ".into()));
        }
        let silent = layout.silent_speech();
        let noise = layout.noise();
        for (i, &t) in self.user_lane.iter().enumerate() {
            if !(layout.is_speech(t) || t == silent || t == noise) {
                return Err(SimError::Config(format!("bad user-lane token at slot {i}")));
            }
        }
        for (i, &t) in self.assistant_lane.iter().enumerate() {
            if !(layout.is_speech(t) || t == silent) {
                return Err(SimError::Config(format!(
                    "bad assistant-lane token at slot {i}"
                )));
            }
        }
        if self.events.windows(2).any(|w| w[0].slot > w[1].slot) {
            return Err(SimError::Config("events not sorted by slot".into()));
        }
        for e in &self.events {
            if e.kind == EventKind::InterruptionOnset {
                let user_ok = layout.is_speech(self.user_lane[e.slot]);
                let asst_ok = layout.is_speech(self.assistant_lane[e.slot]);
                if !(user_ok && asst_ok) {
                    return Err(SimError::Config(format!(
                        "interruption onset at slot {} lacks overlapping speech",
                        e.slot
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn events_of(&self, kind: EventKind) -> impl Iterator<Item = usize> + '_ {
        self.events
            .iter()
            .filter(move |e| e.kind == kind)
            .map(|e| e.slot)
    }
}

fn place(lane: &mut Vec<TokenId>, silent: TokenId, start: usize, tokens: &[TokenId]) {
    let end = start + tokens.len();
    if lane.len() < end {
        lane.resize(end, silent);
    }
    lane[start..end].copy_from_slice(tokens);
}

struct AssistantSeg {
    start: usize,
    end: usize,
    turn_index: usize,
}

/// Builds the timeline for one accepted script. Deterministic given the seed.
pub fn simulate_timeline(
    script: &DialogueScript,
    codec: &CodecMap,
    cfg: &SimConfig,
    seed: u64,
) -> Result<DialogueTimeline, SimError> {
    script.validate()?;
    cfg.validate()?;
    let layout = codec.layout().clone();
    let silent = layout.silent_speech();
    let group = codec.group_size();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut user_lane: Vec<TokenId> = Vec::new();
    let mut assistant_lane: Vec<TokenId> = Vec::new();
    let mut turn_texts: Vec<TurnAlign> = Vec::new();
    let mut events: Vec<TimelineEvent> = Vec::new();

    // End of all placed content so far, across both lanes.
    let mut occupied = 0usize;
    // Most recent assistant segment, natural (untruncated) extent.
    let mut prev_assistant: Option<AssistantSeg> = None;

    for (k, pair) in script.turns.chunks(2).enumerate() {
        let user_text = layout.encode_text(&pair[0].text).map_err(CodecError::from)?;
        let user_speech = codec.encode_speech(&user_text)?;

        let user_start = match &prev_assistant {
            Some(seg)
                if k > 0
                    && seg.end > seg.start
                    && !user_speech.is_empty()
                    && rng.random_bool(cfg.interruption_prob) =>
            {
                // Situation 2: barge-in during assistant speech.
                let len = seg.end - seg.start;
                let (lo, hi) = cfg.interruption_offset_frac;
                let frac: f64 = rng.random_range(lo..=hi);
                let onset = seg.start + (len as f64 * frac).floor() as usize;
                let cut = onset + cfg.assistant_stop_delay_tokens;
                if cut < seg.end {
                    assistant_lane[cut..seg.end].fill(silent);
                    let rec = &mut turn_texts[seg.turn_index];
                    rec.end_slot = cut;
                    let spoken = cut - seg.start;
                    rec.text.truncate(spoken.div_ceil(group));
                    events.push(TimelineEvent {
                        kind: EventKind::AssistantTruncation,
                        slot: cut,
                    });
                    // The cut segment was the furthest content so far.
                    occupied = occupied.min(cut);
                }
                events.push(TimelineEvent {
                    kind: EventKind::InterruptionOnset,
                    slot: onset,
                });
                onset
            }
            _ if k == 0 => 0,
            _ => {
                let gap = rng.random_range(cfg.response_gap_tokens.0..=cfg.response_gap_tokens.1);
                occupied + gap
            }
        };

        let user_end = user_start + user_speech.len();
        place(&mut user_lane, silent, user_start, &user_speech);
        turn_texts.push(TurnAlign {
            speaker: Speaker::User,
            text: user_text,
            start_slot: user_start,
            end_slot: user_end,
        });
        if !user_speech.is_empty() {
            events.push(TimelineEvent {
                kind: EventKind::UserTurnEnd,
                slot: user_end - 1,
            });
        }
        occupied = occupied.max(user_end);

        let assistant_spoken_end = prev_assistant
            .as_ref()
            .map(|seg| turn_texts[seg.turn_index].end_slot)
            .unwrap_or(0);

        prev_assistant = None;
        if let Some(assistant_turn) = pair.get(1) {
            let assistant_text = layout
                .encode_text(&assistant_turn.text)
                .map_err(CodecError::from)?;
            let assistant_speech = codec.encode_speech(&assistant_text)?;
            let gap = rng.random_range(cfg.response_gap_tokens.0..=cfg.response_gap_tokens.1);
            // Situation 1: reply shortly after the user turn ends. Never
            // overlap the assistant's own previous (possibly cut) segment.
            let assistant_start = (user_end + gap).max(assistant_spoken_end);
            let assistant_end = assistant_start + assistant_speech.len();
            place(&mut assistant_lane, silent, assistant_start, &assistant_speech);
            events.push(TimelineEvent {
                kind: EventKind::AssistantTurnStart,
                slot: assistant_start,
            });
            turn_texts.push(TurnAlign {
                speaker: Speaker::Assistant,
                text: assistant_text,
                start_slot: assistant_start,
                end_slot: assistant_end,
            });
            occupied = occupied.max(assistant_end);
            if !assistant_speech.is_empty() {
                prev_assistant = Some(AssistantSeg {
                    start: assistant_start,
                    end: assistant_end,
                    turn_index: turn_texts.len() - 1,
                });
            }
        }
    }

    // Situation 3 falls out of construction: the assistant lane stays silent
    // from a turn's natural end until its next reply.
    let len = occupied.max(user_lane.len()).max(assistant_lane.len());
    user_lane.resize(len, silent);
    assistant_lane.resize(len, silent);
    events.sort_by_key(|e| e.slot);

    Ok(DialogueTimeline {
        token_rate_hz: cfg.token_rate_hz,
        user_lane,
        assistant_lane,
        turn_texts,
        events,
    })
}

/// Replaces user-lane silence slots with NOISE, independently per slot.
/// Speech slots, the assistant lane, and events are untouched.
pub fn inject_noise(
    layout: &VocabLayout,
    timeline: &DialogueTimeline,
    cfg: &SimConfig,
    seed: u64,
) -> Result<DialogueTimeline, SimError> {
    cfg.validate()?;
    let silent = layout.silent_speech();
    let noise = layout.noise();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = timeline.clone();
    for slot in out.user_lane.iter_mut() {
        if *slot == silent && rng.random_bool(cfg.noise_sub_rate) {
            *slot = noise;
        }
    }
    Ok(out)
}
