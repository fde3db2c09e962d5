//! Full-duplex spoken-dialogue data path at desk scale.
//!
//! The pipeline runs filter → simulate → flatten → train → infer → eval:
//! text dialogues are screened, placed onto two-lane token timelines with
//! barge-ins and noise, serialized into flattened training sequences, fed
//! to an n-gram predictor, streamed back out chunk-by-chunk, and scored
//! with turn-taking and error-rate metrics plus an LLM-judge client.

pub mod cli;
pub mod codec;
pub mod config;
pub mod engine;
pub mod filter;
pub mod flatten;
pub mod jsonl;
pub mod judge;
pub mod metrics;
pub mod predictor;
pub mod simulate;
pub mod vocab;

pub use codec::{CodecConfig, CodecMap};
pub use config::PipelineConfig;
pub use engine::{run_duplex, DuplexMode, DuplexSession};
pub use filter::{filter_script, DialogueScript, FilterConfig, Speaker};
pub use flatten::{ChunkConfig, FlattenedSample, SampleFormat};
pub use predictor::{masked_cross_entropy, train_ngram, NGramModel, Predictor};
pub use simulate::{inject_noise, simulate_timeline, DialogueTimeline, SimConfig};
pub use vocab::{ChannelTag, TokenClass, TokenId, VocabLayout};

/// SplitMix64 step, used to derive independent per-item seeds from a base
/// seed and a stream index.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E3779B97F4A7C15))
        .wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}
