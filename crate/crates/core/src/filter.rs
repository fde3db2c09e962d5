//! Heuristic filtering of textual dialogues before synthesis.
//!
//! Rejects turns that are too long, too code/math heavy, or that contain
//! unusual symbols. Reject reasons are checked in a fixed order so reports
//! are deterministic.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
}

/// Turn-based text dialogue prior to synthesis. Speakers strictly alternate
/// starting with the user.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueScript {
    pub id: String,
    pub turns: Vec<Turn>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScriptError {
    #[error("script has no turns")]
    Empty,
    #[error("turn {0} breaks the user/assistant alternation")]
    NonAlternating(usize),
    #[error("first turn must be the user's")]
    FirstSpeakerNotUser,
    #[error("every turn is empty")]
    AllTurnsEmpty,
}

impl DialogueScript {
    pub fn validate(&self) -> Result<(), ScriptError> {
        if self.turns.is_empty() {
            return Err(ScriptError::Empty);
        }
        if self.turns[0].speaker != Speaker::User {
            return Err(ScriptError::FirstSpeakerNotUser);
        }
        for (i, pair) in self.turns.windows(2).enumerate() {
            if pair[0].speaker == pair[1].speaker {
                return Err(ScriptError::NonAlternating(i + 1));
            }
        }
        if self.turns.iter().all(|t| t.text.trim().is_empty()) {
            return Err(ScriptError::AllTurnsEmpty);
        }
        Ok(())
    }
}

/// Characters counted as code/math material for the non-text ratio:
/// ASCII digits plus brackets, operators, and code punctuation.
const NONTEXT_CHARS: &str = "()[]{}<>+-*/=^_|\\&~#$@%;:`";

fn default_rare_symbols() -> String {
    "\u{FFFD}§¶†‡¤¦".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub max_words: usize,
    pub max_nontext_ratio: f64,
    pub rare_symbols: String,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            max_words: 200,
            max_nontext_ratio: 0.2,
            rare_symbols: default_rare_symbols(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectReason {
    WordCount,
    NonTextRatio,
    RareSymbol,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Reject(RejectReason),
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3400..=0x4DBF | 0x4E00..=0x9FFF | 0xF900..=0xFAFF | 0x20000..=0x2A6DF)
}

/// Whitespace-delimited words, except CJK characters which count one each.
pub fn word_count(text: &str) -> usize {
    let mut words = 0;
    let mut in_word = false;
    for c in text.chars() {
        if is_cjk(c) {
            words += 1;
            in_word = false;
        } else if c.is_whitespace() {
            in_word = false;
        } else if !in_word {
            words += 1;
            in_word = true;
        }
    }
    words
}

/// Fraction of characters that look like code or math, over all characters.
pub fn nontext_ratio(text: &str) -> f64 {
    let mut total = 0usize;
    let mut nontext = 0usize;
    for c in text.chars() {
        total += 1;
        if c.is_ascii_digit() || NONTEXT_CHARS.contains(c) {
            nontext += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        nontext as f64 / total as f64
    }
}

/// Applies the heuristic rules, reporting the first matching reject reason
/// in the fixed order WordCount, NonTextRatio, RareSymbol.
pub fn filter_script(script: &DialogueScript, cfg: &FilterConfig) -> Result<Verdict, ScriptError> {
    script.validate()?;
    if script.turns.iter().any(|t| word_count(&t.text) > cfg.max_words) {
        return Ok(Verdict::Reject(RejectReason::WordCount));
    }
    if script
        .turns
        .iter()
        .any(|t| nontext_ratio(&t.text) > cfg.max_nontext_ratio)
    {
        return Ok(Verdict::Reject(RejectReason::NonTextRatio));
    }
    if script
        .turns
        .iter()
        .any(|t| t.text.chars().any(|c| cfg.rare_symbols.contains(c)))
    {
        return Ok(Verdict::Reject(RejectReason::RareSymbol));
    }
    Ok(Verdict::Accept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn script(turns: Vec<(&str, &str)>) -> DialogueScript {
        let turns = turns
            .into_iter()
            .flat_map(|(u, a)| {
                [
                    Turn {
                        speaker: Speaker::User,
                        text: u.to_string(),
                    },
                    Turn {
                        speaker: Speaker::Assistant,
                        text: a.to_string(),
                    },
                ]
            })
            .collect();
        DialogueScript {
            id: "t".into(),
            turns,
        }
    }

    #[test]
    fn word_count_limit() {
        let long = vec!["word"; 201].join(" ");
        let s = script(vec![(long.as_str(), "ok")]);
        assert_eq!(
            filter_script(&s, &FilterConfig::default()).unwrap(),
            Verdict::Reject(RejectReason::WordCount)
        );
        let exactly = vec!["word"; 200].join(" ");
        let s = script(vec![(exactly.as_str(), "ok")]);
        assert_eq!(
            filter_script(&s, &FilterConfig::default()).unwrap(),
            Verdict::Accept
        );
    }

    #[test]
    fn all_empty_turns_malformed() {
        let s = script(vec![("", "")]);
        assert_eq!(
            filter_script(&s, &FilterConfig::default()),
            Err(ScriptError::AllTurnsEmpty)
        );
    }

    #[test]
    fn expression_heavy_turn_rejected() {
        // "x = (a+b)*(c-d)/e^2": 19 chars, of which '=', '(', '+', ')', '*',
        // '(', '-', ')', '/', '^' and the digit '2' count: 11/19 > 0.2.
        let s = script(vec![("x = (a+b)*(c-d)/e^2", "ok")]);
        assert!((nontext_ratio("x = (a+b)*(c-d)/e^2") - 11.0 / 19.0).abs() < 1e-12);
        assert_eq!(
            filter_script(&s, &FilterConfig::default()).unwrap(),
            Verdict::Reject(RejectReason::NonTextRatio)
        );
    }

    #[test]
    fn rare_symbol_rejected() {
        let s = script(vec![("what about § 12?", "ok")]);
        assert_eq!(
            filter_script(&s, &FilterConfig::default()).unwrap(),
            Verdict::Reject(RejectReason::RareSymbol)
        );
    }

    #[test]
    fn cjk_counts_per_character() {
        assert_eq!(word_count("你好世界"), 4);
        assert_eq!(word_count("hello 世界"), 3);
        assert_eq!(word_count("two words"), 2);
        assert_eq!(word_count(""), 0);
    }

    #[test]
    fn alternation_enforced() {
        let s = DialogueScript {
            id: "x".into(),
            turns: vec![
                Turn {
                    speaker: Speaker::User,
                    text: "a".into(),
                },
                Turn {
                    speaker: Speaker::User,
                    text: "b".into(),
                },
            ],
        };
        assert_eq!(s.validate(), Err(ScriptError::NonAlternating(1)));
        let s = DialogueScript {
            id: "x".into(),
            turns: vec![Turn {
                speaker: Speaker::Assistant,
                text: "a".into(),
            }],
        };
        assert_eq!(s.validate(), Err(ScriptError::FirstSpeakerNotUser));
    }

    #[test]
    fn raising_max_words_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let n = rng.random_range(1..40);
            let text = vec!["w"; n].join(" ");
            let s = script(vec![(text.as_str(), "ok")]);
            let lo = FilterConfig {
                max_words: rng.random_range(1..30),
                ..Default::default()
            };
            let hi = FilterConfig {
                max_words: lo.max_words + rng.random_range(0..30),
                ..Default::default()
            };
            if filter_script(&s, &lo).unwrap() == Verdict::Accept {
                assert_eq!(filter_script(&s, &hi).unwrap(), Verdict::Accept);
            }
        }
    }

    #[test]
    fn deterministic_verdicts() {
        let s = script(vec![("some plain prose here", "and a reply")]);
        let cfg = FilterConfig::default();
        assert_eq!(
            filter_script(&s, &cfg).unwrap(),
            filter_script(&s, &cfg).unwrap()
        );
    }
}
