//! Turn-taking accuracy, response times, and WER/CER.
//!
//! Turn-taking is scored against ground-truth events: after each user turn
//! end the assistant should start speaking, and after each barge-in onset it
//! should fall silent. An event succeeds at `k` if the right behavior shows
//! up within `k` slots; events slower than the threshold fail at every `k`
//! and are excluded from the mean response time.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simulate::{DialogueTimeline, EventKind};
use crate::vocab::{TokenId, VocabLayout};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("no matching events in the timeline")]
    NoEvents,
    #[error("reference sequence is empty")]
    EmptyReference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TurnTakingParams {
    pub ks: Vec<usize>,
    pub token_duration_ms: f64,
    pub threshold_ms: f64,
    /// Consecutive silent slots required to count as having stopped.
    pub silence_run: usize,
}

impl Default for TurnTakingParams {
    fn default() -> Self {
        TurnTakingParams {
            ks: vec![1, 5, 10, 25],
            token_duration_ms: 40.0,
            threshold_ms: 1500.0,
            silence_run: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnTakingReport {
    pub acc_at_k: BTreeMap<usize, f64>,
    pub mean_response_ms: f64,
    pub n_events: usize,
    pub threshold_ms: f64,
}

/// Builds a report from per-event first-response offsets (`None` when the
/// behavior never showed up). Events are the averaging unit, so offsets
/// from many timelines can be pooled before calling this.
pub fn report_from_offsets(
    offsets: &[Option<usize>],
    params: &TurnTakingParams,
) -> Result<TurnTakingReport, MetricsError> {
    if offsets.is_empty() {
        return Err(MetricsError::NoEvents);
    }
    let n = offsets.len();
    let mut acc_at_k = BTreeMap::new();
    let within = |j: usize| j as f64 * params.token_duration_ms <= params.threshold_ms;
    for &k in &params.ks {
        let hits = offsets
            .iter()
            .filter(|o| matches!(o, Some(j) if *j <= k && within(*j)))
            .count();
        acc_at_k.insert(k, hits as f64 / n as f64);
    }
    let successes: Vec<f64> = offsets
        .iter()
        .filter_map(|o| o.filter(|&j| within(j)))
        .map(|j| j as f64 * params.token_duration_ms)
        .collect();
    let mean_response_ms = if successes.is_empty() {
        0.0
    } else {
        successes.iter().sum::<f64>() / successes.len() as f64
    };
    Ok(TurnTakingReport {
        acc_at_k,
        mean_response_ms,
        n_events: n,
        threshold_ms: params.threshold_ms,
    })
}

/// Offset of the first non-silent assistant slot strictly after `event`.
fn first_speech_offset(
    lane: &[TokenId],
    silent: TokenId,
    event: usize,
) -> Option<usize> {
    (1..)
        .take_while(|j| event + j < lane.len())
        .find(|j| lane[event + j] != silent)
}

/// Offset of the first run of `run` consecutive silent slots starting
/// strictly after `event`.
fn first_silence_offset(
    lane: &[TokenId],
    silent: TokenId,
    event: usize,
    run: usize,
) -> Option<usize> {
    (1..)
        .take_while(|j| event + j + run <= lane.len())
        .find(|j| lane[event + *j..event + *j + run].iter().all(|&t| t == silent))
}

/// First-response offset after each user turn end: how long until the
/// assistant lane speaks.
pub fn assistant_offsets(layout: &VocabLayout, timeline: &DialogueTimeline) -> Vec<Option<usize>> {
    let silent = layout.silent_speech();
    timeline
        .events_of(EventKind::UserTurnEnd)
        .map(|e| first_speech_offset(&timeline.assistant_lane, silent, e))
        .collect()
}

/// First-silence offset after each barge-in onset: how long until the
/// assistant lane shows `silence_run` consecutive silent slots.
pub fn user_offsets(
    layout: &VocabLayout,
    timeline: &DialogueTimeline,
    silence_run: usize,
) -> Vec<Option<usize>> {
    let silent = layout.silent_speech();
    timeline
        .events_of(EventKind::InterruptionOnset)
        .map(|s| first_silence_offset(&timeline.assistant_lane, silent, s, silence_run))
        .collect()
}

/// Does the assistant start speaking soon after each user turn end?
/// The timeline's events are the ground truth; its assistant lane is the
/// prediction under evaluation.
pub fn assistant_turntaking(
    layout: &VocabLayout,
    timeline: &DialogueTimeline,
    params: &TurnTakingParams,
) -> Result<TurnTakingReport, MetricsError> {
    report_from_offsets(&assistant_offsets(layout, timeline), params)
}

/// Does the assistant fall silent soon after each barge-in onset?
pub fn user_turntaking(
    layout: &VocabLayout,
    timeline: &DialogueTimeline,
    params: &TurnTakingParams,
) -> Result<TurnTakingReport, MetricsError> {
    report_from_offsets(&user_offsets(layout, timeline, params.silence_run), params)
}

/// Minimal edit distance (substitutions, deletions, insertions all cost 1).
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut curr = vec![0usize; b.len() + 1];
    for i in 1..=a.len() {
        curr[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            curr[j] = sub.min(prev[j] + 1).min(curr[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// Edit distance normalized by reference length; may exceed 1.
pub fn error_rate<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Result<f64, MetricsError> {
    if reference.is_empty() {
        return Err(MetricsError::EmptyReference);
    }
    Ok(edit_distance(reference, hypothesis) as f64 / reference.len() as f64)
}

/// Word error rate over whitespace-delimited words.
pub fn word_error_rate(reference: &str, hypothesis: &str) -> Result<f64, MetricsError> {
    let r: Vec<&str> = reference.split_whitespace().collect();
    let h: Vec<&str> = hypothesis.split_whitespace().collect();
    error_rate(&r, &h)
}

/// Character error rate, whitespace excluded on both sides.
pub fn char_error_rate(reference: &str, hypothesis: &str) -> Result<f64, MetricsError> {
    let r: Vec<char> = reference.chars().filter(|c| !c.is_whitespace()).collect();
    let h: Vec<char> = hypothesis.chars().filter(|c| !c.is_whitespace()).collect();
    error_rate(&r, &h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::TimelineEvent;
    use crate::vocab::VocabLayout;

    fn layout() -> VocabLayout {
        VocabLayout::default()
    }

    /// Assistant lane silent except for speech starting at `event + offset`.
    fn lane_with_reply(l: &VocabLayout, len: usize, event: usize, offset: usize) -> DialogueTimeline {
        let silent = l.silent_speech();
        let mut assistant = vec![silent; len];
        for slot in (event + offset)..len {
            assistant[slot] = l.speech_token(1);
        }
        DialogueTimeline {
            token_rate_hz: 25,
            user_lane: vec![silent; len],
            assistant_lane: assistant,
            turn_texts: vec![],
            events: vec![TimelineEvent {
                kind: EventKind::UserTurnEnd,
                slot: event,
            }],
        }
    }

    #[test]
    fn reply_at_offset_three() {
        let l = layout();
        let tl = lane_with_reply(&l, 60, 5, 3);
        let report = assistant_turntaking(&l, &tl, &TurnTakingParams::default()).unwrap();
        assert_eq!(report.acc_at_k[&1], 0.0);
        assert_eq!(report.acc_at_k[&5], 1.0);
        assert_eq!(report.acc_at_k[&10], 1.0);
        assert_eq!(report.mean_response_ms, 120.0);
        assert_eq!(report.n_events, 1);
    }

    #[test]
    fn reply_at_offset_one_succeeds_everywhere() {
        let l = layout();
        let tl = lane_with_reply(&l, 60, 5, 1);
        let report = assistant_turntaking(&l, &tl, &TurnTakingParams::default()).unwrap();
        assert!(report.acc_at_k.values().all(|&a| a == 1.0));
        assert_eq!(report.mean_response_ms, 40.0);
    }

    #[test]
    fn two_second_silence_is_excluded_from_mean() {
        let l = layout();
        // Reply at offset 50 = 2000 ms > 1500 ms threshold.
        let tl = lane_with_reply(&l, 120, 5, 50);
        let report = assistant_turntaking(&l, &tl, &TurnTakingParams::default()).unwrap();
        assert!(report.acc_at_k.values().all(|&a| a == 0.0));
        assert_eq!(report.mean_response_ms, 0.0);
        assert_eq!(report.n_events, 1);
    }

    #[test]
    fn no_events_is_an_error() {
        let l = layout();
        let silent = l.silent_speech();
        let tl = DialogueTimeline {
            token_rate_hz: 25,
            user_lane: vec![silent; 10],
            assistant_lane: vec![silent; 10],
            turn_texts: vec![],
            events: vec![],
        };
        assert_eq!(
            assistant_turntaking(&l, &tl, &TurnTakingParams::default()),
            Err(MetricsError::NoEvents)
        );
    }

    fn barge_in_timeline(l: &VocabLayout, stop_offset: Option<usize>) -> DialogueTimeline {
        let silent = l.silent_speech();
        let len = 80;
        let onset = 10;
        let mut assistant = vec![l.speech_token(2); len];
        if let Some(off) = stop_offset {
            for slot in (onset + off)..len {
                assistant[slot] = silent;
            }
        }
        let mut user = vec![silent; len];
        user[onset] = l.speech_token(3);
        DialogueTimeline {
            token_rate_hz: 25,
            user_lane: user,
            assistant_lane: assistant,
            turn_texts: vec![],
            events: vec![TimelineEvent {
                kind: EventKind::InterruptionOnset,
                slot: onset,
            }],
        }
    }

    #[test]
    fn silence_from_offset_four() {
        let l = layout();
        let tl = barge_in_timeline(&l, Some(4));
        let report = user_turntaking(&l, &tl, &TurnTakingParams::default()).unwrap();
        assert_eq!(report.acc_at_k[&1], 0.0);
        assert_eq!(report.acc_at_k[&5], 1.0);
        assert_eq!(report.mean_response_ms, 160.0);
    }

    #[test]
    fn never_stopping_assistant_fails_all_k() {
        let l = layout();
        let tl = barge_in_timeline(&l, None);
        let report = user_turntaking(&l, &tl, &TurnTakingParams::default()).unwrap();
        assert!(report.acc_at_k.values().all(|&a| a == 0.0));
    }

    #[test]
    fn already_silent_assistant_scores_offset_one() {
        let l = layout();
        let silent = l.silent_speech();
        let len = 40;
        let onset = 6;
        let mut user = vec![silent; len];
        user[onset] = l.speech_token(1);
        let tl = DialogueTimeline {
            token_rate_hz: 25,
            user_lane: user,
            assistant_lane: vec![silent; len],
            turn_texts: vec![],
            events: vec![TimelineEvent {
                kind: EventKind::InterruptionOnset,
                slot: onset,
            }],
        };
        let report = user_turntaking(&l, &tl, &TurnTakingParams::default()).unwrap();
        assert_eq!(report.acc_at_k[&1], 1.0);
        assert_eq!(report.mean_response_ms, 40.0);
    }

    #[test]
    fn acc_is_monotone_in_k() {
        let l = layout();
        let tl = lane_with_reply(&l, 60, 5, 7);
        let report = assistant_turntaking(&l, &tl, &TurnTakingParams::default()).unwrap();
        let accs: Vec<f64> = report.acc_at_k.values().copied().collect();
        assert!(accs.windows(2).all(|w| w[0] <= w[1]));
        assert!(accs.iter().all(|a| (0.0..=1.0).contains(a)));
    }

    #[test]
    fn wer_basics() {
        assert_eq!(word_error_rate("a b c", "a b c").unwrap(), 0.0);
        assert_eq!(word_error_rate("a b c", "a x c").unwrap(), 1.0 / 3.0);
        assert_eq!(word_error_rate("a", "a b c").unwrap(), 2.0);
        assert_eq!(
            word_error_rate("", "whatever"),
            Err(MetricsError::EmptyReference)
        );
    }

    #[test]
    fn cer_basics() {
        assert_eq!(char_error_rate("abc", "abc").unwrap(), 0.0);
        assert_eq!(char_error_rate("abc", "axc").unwrap(), 1.0 / 3.0);
        assert_eq!(char_error_rate("a b c", "abc").unwrap(), 0.0);
        assert_eq!(char_error_rate(" ", "x"), Err(MetricsError::EmptyReference));
    }

    #[test]
    fn edit_distance_symmetry_bound() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let a: Vec<u8> = (0..rng.random_range(0..8)).map(|_| rng.random_range(0..3)).collect();
            let b: Vec<u8> = (0..rng.random_range(0..8)).map(|_| rng.random_range(0..3)).collect();
            assert_eq!(edit_distance(&a, &b), edit_distance(&b, &a));
        }
    }

    #[test]
    fn edit_distance_triangle_inequality() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let mut gen = |n: usize| -> Vec<u8> {
                (0..n).map(|_| rng.random_range(0..3)).collect()
            };
            let (a, b, c) = (gen(6), gen(5), gen(7));
            assert!(edit_distance(&a, &c) <= edit_distance(&a, &b) + edit_distance(&b, &c));
        }
    }
}
