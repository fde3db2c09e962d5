//! Synthetic dialogue corpus generation shared by the integration suites.

use duplexflat::filter::{DialogueScript, Speaker, Turn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const LETTERS: &[u8] = b"abcdefghijklmnopqrstuvwxyz";

pub fn word(rng: &mut ChaCha8Rng) -> String {
    let len = rng.random_range(2..8);
    (0..len)
        .map(|_| LETTERS[rng.random_range(0..LETTERS.len())] as char)
        .collect()
}

pub fn sentence(rng: &mut ChaCha8Rng, words: usize) -> String {
    (0..words).map(|_| word(rng)).collect::<Vec<_>>().join(" ")
}

/// Random well-formed script: alternating turns, nonempty texts.
pub fn random_script(id: &str, rng: &mut ChaCha8Rng, exchanges: usize) -> DialogueScript {
    let mut turns = Vec::with_capacity(exchanges * 2);
    for _ in 0..exchanges {
        let user_words = rng.random_range(1..5);
        turns.push(Turn {
            speaker: Speaker::User,
            text: sentence(rng, user_words),
        });
        let assistant_words = rng.random_range(1..6);
        turns.push(Turn {
            speaker: Speaker::Assistant,
            text: sentence(rng, assistant_words),
        });
    }
    DialogueScript {
        id: id.to_string(),
        turns,
    }
}

pub fn random_corpus(
    rng: &mut ChaCha8Rng,
    count: usize,
    exchanges: impl Fn(&mut ChaCha8Rng) -> usize,
) -> Vec<DialogueScript> {
    (0..count)
        .map(|i| {
            let n = exchanges(rng);
            random_script(&format!("script-{i}"), rng, n)
        })
        .collect()
}
