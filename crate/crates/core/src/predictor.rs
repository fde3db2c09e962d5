//! Pluggable autoregressive predictor with an n-gram reference
//! implementation, masked cross-entropy, and class-constrained sampling.
//!
//! Contexts are framing-transparent: task-id and delimiter tokens are
//! skipped when forming the conditioning window, while silent and noise
//! tokens are kept (they carry timing). A transformer attends across
//! delimiters for free; an order-k counting model has to be told to. With
//! transparent contexts an order of `group_size + 1` is enough to bridge
//! the `[EOS][SOT]` boundary of alignment samples, which makes the
//! synthetic speech-to-text map exactly learnable.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flatten::FlattenedSample;
use crate::vocab::{TokenId, VocabLayout};

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("sample too short for cross-entropy (length {len})")]
    SampleTooShort { len: usize },
    #[error("every position of the sample is loss-masked")]
    NoUnmaskedPositions,
    #[error("legal token set is empty")]
    EmptyLegalSet,
    #[error("model was built for vocabulary {expected}, got {found}")]
    VocabMismatch { expected: String, found: String },
    #[error("speech length {len} not divisible by group size {group_size}")]
    TranscribeLength { len: usize, group_size: usize },
    #[error("token {0} outside the model vocabulary")]
    TokenOutOfRange(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Autoregressive next-token model over the unified vocabulary.
///
/// `next_distribution` receives the full running prefix; implementations
/// truncate to their own context window.
pub trait Predictor {
    fn vocab_size(&self) -> usize;
    /// Longest suffix of the prefix the model conditions on.
    fn context_limit(&self) -> usize;
    /// Probability of every token id given the prefix. Sums to 1.
    fn next_distribution(&self, context: &[TokenId]) -> Vec<f64>;
}

impl<P: Predictor + ?Sized> Predictor for &P {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn context_limit(&self) -> usize {
        (**self).context_limit()
    }
    fn next_distribution(&self, context: &[TokenId]) -> Vec<f64> {
        (**self).next_distribution(context)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
struct ContextCounts {
    total: u64,
    next: BTreeMap<TokenId, u64>,
}

/// Add-alpha n-gram over framing-transparent contexts.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    layout: VocabLayout,
    order: usize,
    alpha: f64,
    counts: BTreeMap<Vec<TokenId>, ContextCounts>,
    framing: Vec<bool>,
}

impl NGramModel {
    pub fn new(layout: &VocabLayout, order: usize, alpha: f64) -> Result<Self, PredictorError> {
        if order == 0 {
            return Err(PredictorError::InvalidParam("order must be >= 1".into()));
        }
        if alpha <= 0.0 || alpha.is_nan() {
            return Err(PredictorError::InvalidParam("alpha must be > 0".into()));
        }
        let framing = (0..layout.total_size() as u32)
            .map(|id| layout.is_framing(TokenId(id)))
            .collect();
        Ok(NGramModel {
            layout: layout.clone(),
            order,
            alpha,
            counts: BTreeMap::new(),
            framing,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn layout(&self) -> &VocabLayout {
        &self.layout
    }

    fn is_framing(&self, t: TokenId) -> bool {
        self.framing.get(t.0 as usize).copied().unwrap_or(false)
    }

    /// Last `order - 1` non-framing tokens of the prefix, oldest first.
    fn context_key(&self, context: &[TokenId]) -> Vec<TokenId> {
        let want = self.order - 1;
        let mut key = Vec::with_capacity(want);
        for &t in context.iter().rev() {
            if key.len() == want {
                break;
            }
            if !self.is_framing(t) {
                key.push(t);
            }
        }
        key.reverse();
        key
    }

    /// Accumulates counts over every position of every sample. The loss
    /// mask does not gate counting; masking is a loss concept.
    pub fn absorb(&mut self, corpus: &[FlattenedSample]) {
        for sample in corpus {
            for p in 0..sample.tokens.len() {
                let key = self.context_key(&sample.tokens[..p]);
                let entry = self.counts.entry(key).or_default();
                entry.total += 1;
                *entry.next.entry(sample.tokens[p]).or_insert(0) += 1;
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), PredictorError> {
        let file = ModelFile {
            order: self.order,
            alpha: self.alpha,
            vocab_fingerprint: self.layout.fingerprint(),
            contexts: self
                .counts
                .iter()
                .map(|(context, c)| ContextEntry {
                    context: context.clone(),
                    next: c.next.iter().map(|(&t, &n)| (t, n)).collect(),
                })
                .collect(),
        };
        fs::write(path, serde_json::to_string(&file)?)?;
        Ok(())
    }

    pub fn load(path: &Path, layout: &VocabLayout) -> Result<Self, PredictorError> {
        let file: ModelFile = serde_json::from_str(&fs::read_to_string(path)?)?;
        if file.vocab_fingerprint != layout.fingerprint() {
            return Err(PredictorError::VocabMismatch {
                expected: file.vocab_fingerprint,
                found: layout.fingerprint(),
            });
        }
        let mut model = NGramModel::new(layout, file.order, file.alpha)?;
        for entry in file.contexts {
            let mut next = BTreeMap::new();
            let mut total = 0;
            for (t, n) in entry.next {
                total += n;
                next.insert(t, n);
            }
            model.counts.insert(entry.context, ContextCounts { total, next });
        }
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct ContextEntry {
    context: Vec<TokenId>,
    next: Vec<(TokenId, u64)>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    order: usize,
    alpha: f64,
    vocab_fingerprint: String,
    contexts: Vec<ContextEntry>,
}

impl Predictor for NGramModel {
    fn vocab_size(&self) -> usize {
        self.layout.total_size()
    }

    fn context_limit(&self) -> usize {
        self.order - 1
    }

    fn next_distribution(&self, context: &[TokenId]) -> Vec<f64> {
        let v = self.vocab_size();
        let key = self.context_key(context);
        match self.counts.get(&key) {
            Some(c) => {
                let denom = c.total as f64 + self.alpha * v as f64;
                let mut dist = vec![self.alpha / denom; v];
                for (&t, &n) in &c.next {
                    dist[t.0 as usize] += n as f64 / denom;
                }
                dist
            }
            None => vec![1.0 / v as f64; v],
        }
    }
}

/// Counts positions of all samples into a fresh model.
pub fn train_ngram(
    layout: &VocabLayout,
    corpus: &[FlattenedSample],
    order: usize,
    alpha: f64,
) -> Result<NGramModel, PredictorError> {
    if corpus.is_empty() {
        return Err(PredictorError::EmptyCorpus);
    }
    let mut model = NGramModel::new(layout, order, alpha)?;
    model.absorb(corpus);
    Ok(model)
}

/// Mean nats per loss-contributing token. Masked positions contribute
/// nothing to the mean but stay visible as context.
pub fn masked_cross_entropy<P: Predictor>(
    model: &P,
    sample: &FlattenedSample,
) -> Result<f64, PredictorError> {
    if sample.tokens.len() < 2 {
        return Err(PredictorError::SampleTooShort {
            len: sample.tokens.len(),
        });
    }
    let mut sum = 0.0;
    let mut scored = 0usize;
    for p in 0..sample.tokens.len() {
        if !sample.mask[p] {
            continue;
        }
        let dist = model.next_distribution(&sample.tokens[..p]);
        let tok = sample.tokens[p].0 as usize;
        let prob = *dist
            .get(tok)
            .ok_or(PredictorError::TokenOutOfRange(sample.tokens[p].0))?;
        sum -= prob.ln();
        scored += 1;
    }
    if scored == 0 {
        return Err(PredictorError::NoUnmaskedPositions);
    }
    Ok(sum / scored as f64)
}

/// Below this temperature sampling degenerates to argmax.
const GREEDY_TEMPERATURE: f64 = 1e-9;

fn constrained_argmax<P: Predictor>(
    model: &P,
    context: &[TokenId],
    legal: &[TokenId],
) -> Result<TokenId, PredictorError> {
    if legal.is_empty() {
        return Err(PredictorError::EmptyLegalSet);
    }
    let dist = model.next_distribution(context);
    let mut best = legal[0];
    let mut best_p = f64::NEG_INFINITY;
    for &t in legal {
        let p = *dist
            .get(t.0 as usize)
            .ok_or(PredictorError::TokenOutOfRange(t.0))?;
        if p > best_p {
            best_p = p;
            best = t;
        }
    }
    Ok(best)
}

/// Samples from the model distribution renormalized over `legal` after
/// temperature scaling, drawing from the caller's RNG.
pub fn sample_next_with<P: Predictor, R: Rng>(
    model: &P,
    context: &[TokenId],
    legal: &[TokenId],
    temperature: f64,
    rng: &mut R,
) -> Result<TokenId, PredictorError> {
    if legal.is_empty() {
        return Err(PredictorError::EmptyLegalSet);
    }
    if temperature < GREEDY_TEMPERATURE {
        return constrained_argmax(model, context, legal);
    }
    let dist = model.next_distribution(context);
    // Work in log space so small temperatures do not underflow.
    let mut logs = Vec::with_capacity(legal.len());
    let mut max_log = f64::NEG_INFINITY;
    for &t in legal {
        let p = *dist
            .get(t.0 as usize)
            .ok_or(PredictorError::TokenOutOfRange(t.0))?;
        let l = p.ln() / temperature;
        max_log = max_log.max(l);
        logs.push(l);
    }
    let weights: Vec<f64> = logs.iter().map(|&l| (l - max_log).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut draw = rng.random_range(0.0..1.0) * total;
    for (i, &w) in weights.iter().enumerate() {
        draw -= w;
        if draw <= 0.0 {
            return Ok(legal[i]);
        }
    }
    Ok(*legal.last().unwrap())
}

/// Seeded variant of [`sample_next_with`]. Deterministic given the seed.
pub fn sample_next<P: Predictor>(
    model: &P,
    context: &[TokenId],
    legal: &[TokenId],
    temperature: f64,
    seed: u64,
) -> Result<TokenId, PredictorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_next_with(model, context, legal, temperature, &mut rng)
}

/// Greedy constrained speech-to-text decoding: each speech group is used as
/// the conditioning window and the transcript token is the argmax over the
/// text range.
pub fn greedy_transcribe<P: Predictor>(
    model: &P,
    layout: &VocabLayout,
    speech: &[TokenId],
    group_size: usize,
) -> Result<Vec<TokenId>, PredictorError> {
    if group_size == 0 || !speech.len().is_multiple_of(group_size) {
        return Err(PredictorError::TranscribeLength {
            len: speech.len(),
            group_size,
        });
    }
    let legal = layout.text_ids();
    speech
        .chunks(group_size)
        .map(|group| constrained_argmax(model, group, &legal))
        .collect()
}
