//! Command implementations behind the `duplexflat` binary.
//!
//! Every command is deterministic given config + seed (judge mode excepted,
//! network-dependent). Exit codes: 0 success, 1 usage, 2 data validation,
//! 3 external service.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use serde::{Deserialize, Serialize};

use crate::codec::CodecMap;
use crate::config::PipelineConfig;
use crate::derive_seed;
use crate::engine::{pad_user_lane, DuplexMode, DuplexSession};
use crate::filter::{filter_script, DialogueScript, RejectReason, Verdict};
use crate::flatten::{
    build_asr_sample, build_tts_sample, flatten_half_duplex, flatten_three_stream,
    flatten_two_stream, timeline_to_exchanges, unflatten, FlattenedSample, SampleFormat,
};
use crate::jsonl::{read_jsonl, write_jsonl, JsonlError};
use crate::judge::{score_response, HttpJudgeTransport, JudgeError, JudgeRequest, RetryPolicy};
use crate::metrics::{
    assistant_offsets, char_error_rate, report_from_offsets, user_offsets, word_error_rate,
    TurnTakingReport,
};
use crate::predictor::NGramModel;
use crate::simulate::{inject_noise, simulate_timeline, DialogueTimeline};
use crate::vocab::{TokenId, VocabLayout};

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation or arguments; exit 1.
    Usage(String),
    /// Input failed validation; exit 2.
    Data(anyhow::Error),
    /// External service missing or failing; exit 3.
    External(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::External(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Data(e) | CliError::External(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<JsonlError> for CliError {
    fn from(e: JsonlError) -> Self {
        CliError::Data(e.into())
    }
}

fn data(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Data(e.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FilterSummary {
    pub accepted: usize,
    pub rejected: usize,
}

#[derive(Debug, Serialize)]
struct RejectRecord {
    id: String,
    reason: RejectReason,
}

/// Writes accepted scripts to `output` and rejects (with reasons) next to
/// them; returns the counts.
pub fn cmd_filter(
    input: &Path,
    output: &Path,
    rejects: Option<&Path>,
    cfg: &PipelineConfig,
) -> Result<FilterSummary, CliError> {
    let scripts: Vec<DialogueScript> = read_jsonl(input)?;
    let mut accepted = Vec::new();
    let mut rejected = Vec::new();
    for (i, script) in scripts.iter().enumerate() {
        let verdict = filter_script(script, &cfg.filter)
            .map_err(|e| data(anyhow!("{} line {}: {e}", input.display(), i + 1)))?;
        match verdict {
            Verdict::Accept => accepted.push(script.clone()),
            Verdict::Reject(reason) => rejected.push(RejectRecord {
                id: script.id.clone(),
                reason,
            }),
        }
    }
    write_jsonl(output, &accepted)?;
    let rejects_path: PathBuf = match rejects {
        Some(p) => p.to_path_buf(),
        None => output.with_extension("rejects.jsonl"),
    };
    write_jsonl(&rejects_path, &rejected)?;
    Ok(FilterSummary {
        accepted: accepted.len(),
        rejected: rejected.len(),
    })
}

/// Simulates one timeline per script (noise injection included) and writes
/// them as JSONL. Per-script seeds derive from the base seed and line index.
pub fn cmd_simulate(
    input: &Path,
    output: &Path,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<usize, CliError> {
    let layout = cfg.resolve_layout().map_err(data)?;
    let codec = CodecMap::from_config(&layout, cfg.codec).map_err(data)?;
    let scripts: Vec<DialogueScript> = read_jsonl(input)?;
    let mut timelines = Vec::with_capacity(scripts.len());
    for (i, script) in scripts.iter().enumerate() {
        let sim_seed = derive_seed(seed, 2 * i as u64);
        let noise_seed = derive_seed(seed, 2 * i as u64 + 1);
        let clean = simulate_timeline(script, &codec, &cfg.sim, sim_seed)
            .map_err(|e| data(anyhow!("{} line {}: {e}", input.display(), i + 1)))?;
        let noisy = inject_noise(&layout, &clean, &cfg.sim, noise_seed).map_err(data)?;
        timelines.push(noisy);
    }
    Ok(write_jsonl(output, &timelines)?)
}

fn alignment_samples(
    layout: &VocabLayout,
    codec: &CodecMap,
    timeline: &DialogueTimeline,
    format: SampleFormat,
) -> Result<Vec<FlattenedSample>, CliError> {
    let mut samples = Vec::new();
    for turn in &timeline.turn_texts {
        if turn.text.is_empty() {
            continue;
        }
        let speech = codec.encode_speech(&turn.text).map_err(data)?;
        let sample = match format {
            SampleFormat::AsrAlign => build_asr_sample(layout, &speech, &turn.text),
            SampleFormat::TtsAlign => build_tts_sample(layout, &turn.text, &speech),
            _ => unreachable!("alignment_samples only handles asr/tts"),
        }
        .map_err(data)?;
        samples.push(sample);
    }
    Ok(samples)
}

/// Flattens timelines into the requested format, validating every sample
/// through `unflatten` before writing it.
pub fn cmd_flatten(
    input: &Path,
    format: SampleFormat,
    output: &Path,
    cfg: &PipelineConfig,
) -> Result<usize, CliError> {
    let layout = cfg.resolve_layout().map_err(data)?;
    let timelines: Vec<DialogueTimeline> = read_jsonl(input)?;
    let codec = match format {
        SampleFormat::AsrAlign | SampleFormat::TtsAlign => {
            Some(CodecMap::from_config(&layout, cfg.codec).map_err(data)?)
        }
        _ => None,
    };
    let mut samples = Vec::new();
    for (i, timeline) in timelines.iter().enumerate() {
        let line = i + 1;
        let mut batch = match format {
            SampleFormat::AsrAlign | SampleFormat::TtsAlign => {
                alignment_samples(&layout, codec.as_ref().unwrap(), timeline, format)?
            }
            SampleFormat::FourStream => {
                let exchanges = timeline_to_exchanges(timeline)
                    .map_err(|e| data(anyhow!("line {line}: {e}")))?;
                vec![flatten_half_duplex(&layout, &exchanges)
                    .map_err(|e| data(anyhow!("line {line}: {e}")))?]
            }
            SampleFormat::ThreeStream => vec![flatten_three_stream(&layout, timeline, &cfg.chunk)
                .map_err(|e| data(anyhow!("line {line}: {e}")))?],
            SampleFormat::TwoStream => vec![flatten_two_stream(&layout, timeline, &cfg.chunk)
                .map_err(|e| data(anyhow!("line {line}: {e}")))?],
        };
        for sample in &batch {
            unflatten(&layout, sample)
                .map_err(|e| data(anyhow!("line {line}: round-trip validation failed: {e}")))?;
        }
        samples.append(&mut batch);
    }
    Ok(write_jsonl(output, &samples)?)
}

#[derive(Debug, Serialize)]
pub struct TrainSummary {
    pub samples: usize,
    pub positions: usize,
}

/// Accumulates counts from a sample file into a model, optionally starting
/// from an existing one so stage datasets can be applied in sequence.
pub fn cmd_train(
    input: &Path,
    model_out: &Path,
    init: Option<&Path>,
    order: usize,
    alpha: f64,
    cfg: &PipelineConfig,
) -> Result<TrainSummary, CliError> {
    let layout = cfg.resolve_layout().map_err(data)?;
    let samples: Vec<FlattenedSample> = read_jsonl(input)?;
    if samples.is_empty() {
        return Err(data(anyhow!("training corpus {} is empty", input.display())));
    }
    let mut model = match init {
        Some(path) => NGramModel::load(path, &layout).map_err(data)?,
        None => NGramModel::new(&layout, order, alpha).map_err(data)?,
    };
    model.absorb(&samples);
    model.save(model_out).map_err(data)?;
    Ok(TrainSummary {
        samples: samples.len(),
        positions: samples.iter().map(|s| s.tokens.len()).sum(),
    })
}

/// Timeline with the assistant lanes replaced by model output. The user
/// lane is the (padded) ground-truth input that drove the session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedTimeline {
    pub token_rate_hz: u32,
    pub user_lane: Vec<TokenId>,
    pub assistant_lane: Vec<TokenId>,
    pub assistant_text_lane: Vec<TokenId>,
}

/// Streams each timeline's user lane through a fresh session and writes the
/// predicted lanes. The closing session context must pass unflatten
/// validation or the command aborts.
pub fn cmd_infer(
    model_path: &Path,
    input: &Path,
    output: &Path,
    mode: DuplexMode,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<usize, CliError> {
    let layout = cfg.resolve_layout().map_err(data)?;
    let model = NGramModel::load(model_path, &layout).map_err(data)?;
    let timelines: Vec<DialogueTimeline> = read_jsonl(input)?;
    let mut predictions = Vec::with_capacity(timelines.len());
    for (i, timeline) in timelines.iter().enumerate() {
        let session_seed = derive_seed(seed, i as u64);
        let user_lane = pad_user_lane(&layout, &timeline.user_lane, cfg.chunk.speech_chunk);
        let mut session = DuplexSession::new(
            &model,
            &layout,
            cfg.chunk,
            mode,
            cfg.predictor.temperature,
            session_seed,
        )
        .map_err(data)?;
        let mut text_lane = Vec::new();
        let mut speech_lane = Vec::with_capacity(user_lane.len());
        for chunk in user_lane.chunks(cfg.chunk.speech_chunk) {
            let out = session
                .feed_user_chunk(chunk)
                .map_err(|e| data(anyhow!("line {}: {e}", i + 1)))?;
            text_lane.extend_from_slice(&out.text);
            speech_lane.extend_from_slice(&out.speech);
        }
        if !user_lane.is_empty() {
            unflatten(&layout, &session.context_sample())
                .map_err(|e| data(anyhow!("line {}: session context invalid: {e}", i + 1)))?;
        }
        predictions.push(PredictedTimeline {
            token_rate_hz: timeline.token_rate_hz,
            user_lane,
            assistant_lane: speech_lane,
            assistant_text_lane: text_lane,
        });
    }
    Ok(write_jsonl(output, &predictions)?)
}

/// Line-oriented streaming inference: each input line is one user speech
/// chunk of space-separated token ids; each cycle emits `TXT:`/`SPH:` lines.
pub fn run_infer_stream<R: BufRead, W: Write>(
    model: &NGramModel,
    layout: &VocabLayout,
    cfg: &PipelineConfig,
    mode: DuplexMode,
    seed: u64,
    input: R,
    mut output: W,
) -> Result<(), CliError> {
    let mut session = DuplexSession::new(
        model,
        layout,
        cfg.chunk,
        mode,
        cfg.predictor.temperature,
        seed,
    )
    .map_err(data)?;
    for line in input.lines() {
        let line = line.map_err(data)?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            break;
        }
        let chunk: Vec<TokenId> = trimmed
            .split_whitespace()
            .map(|w| w.parse::<u32>().map(TokenId))
            .collect::<Result<_, _>>()
            .map_err(|e| data(anyhow!("bad token id: {e}")))?;
        let out = session.feed_user_chunk(&chunk).map_err(data)?;
        let text_line: Vec<String> = out.text.iter().map(|t| t.to_string()).collect();
        let speech_line: Vec<String> = out.speech.iter().map(|t| t.to_string()).collect();
        writeln!(output, "TXT: {}", text_line.join(" ")).map_err(data)?;
        writeln!(output, "SPH: {}", speech_line.join(" ")).map_err(data)?;
        output.flush().map_err(data)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalKind {
    TurnTaking,
    Asr,
    Tts,
    Judge,
}

impl std::str::FromStr for EvalKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "turntaking" => Ok(EvalKind::TurnTaking),
            "asr" => Ok(EvalKind::Asr),
            "tts" => Ok(EvalKind::Tts),
            "judge" => Ok(EvalKind::Judge),
            other => Err(format!(
                "unknown eval `{other}` (expected turntaking|asr|tts|judge)"
            )),
        }
    }
}

#[derive(Debug, Serialize)]
struct TurnTakingEval {
    assistant: TurnTakingReport,
    user: Option<TurnTakingReport>,
}

fn load_pairs(
    pred: &Path,
    truth: &Path,
) -> Result<Vec<(PredictedTimeline, DialogueTimeline)>, CliError> {
    let preds: Vec<PredictedTimeline> = read_jsonl(pred)?;
    let truths: Vec<DialogueTimeline> = read_jsonl(truth)?;
    if preds.len() != truths.len() {
        return Err(data(anyhow!(
            "prediction/truth line counts differ: {} vs {}",
            preds.len(),
            truths.len()
        )));
    }
    for (i, (p, t)) in preds.iter().zip(&truths).enumerate() {
        if p.user_lane.len() != p.assistant_lane.len() || p.user_lane.len() < t.user_lane.len() {
            return Err(data(anyhow!(
                "line {}: predicted lanes do not align with the truth lanes",
                i + 1
            )));
        }
    }
    Ok(preds.into_iter().zip(truths).collect())
}

/// Text-lane content as a string (silent positions dropped).
fn text_lane_string(layout: &VocabLayout, lane: &[TokenId]) -> String {
    let content: Vec<TokenId> = lane
        .iter()
        .copied()
        .filter(|&t| layout.is_text(t))
        .collect();
    layout.decode_text(&content).unwrap_or_default()
}

/// Ground-truth assistant text, turns joined with spaces.
fn truth_assistant_string(layout: &VocabLayout, truth: &DialogueTimeline) -> String {
    truth
        .turn_texts
        .iter()
        .filter(|t| t.speaker == crate::filter::Speaker::Assistant)
        .map(|t| layout.decode_text(&t.text).unwrap_or_default())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Decodes a predicted speech lane through the codec table; silent slots are
/// skipped, unknown groups become U+FFFD, trailing partial groups drop.
fn lossy_speech_string(layout: &VocabLayout, codec: &CodecMap, lane: &[TokenId]) -> String {
    let codes: Vec<u32> = lane
        .iter()
        .filter(|&&t| layout.is_speech(t))
        .map(|&t| t.0 - layout.text_vocab_size as u32)
        .collect();
    codes
        .chunks_exact(codec.group_size())
        .map(|group| match codec.lookup_group(group) {
            Some(index) => char::from_u32(index).unwrap_or('\u{FFFD}'),
            None => '\u{FFFD}',
        })
        .collect()
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Dispatches to the evaluation suites and returns the report as JSON.
pub fn cmd_eval(
    pred: &Path,
    truth: &Path,
    which: EvalKind,
    cfg: &PipelineConfig,
) -> Result<serde_json::Value, CliError> {
    let layout = cfg.resolve_layout().map_err(data)?;
    let pairs = load_pairs(pred, truth)?;
    match which {
        EvalKind::TurnTaking => {
            let mut assistant = Vec::new();
            let mut user = Vec::new();
            for (p, t) in &pairs {
                let eval_tl = DialogueTimeline {
                    token_rate_hz: t.token_rate_hz,
                    user_lane: p.user_lane.clone(),
                    assistant_lane: p.assistant_lane.clone(),
                    turn_texts: Vec::new(),
                    events: t.events.clone(),
                };
                assistant.extend(assistant_offsets(&layout, &eval_tl));
                user.extend(user_offsets(&layout, &eval_tl, cfg.metrics.silence_run));
            }
            let report = TurnTakingEval {
                assistant: report_from_offsets(&assistant, &cfg.metrics)
                    .map_err(|e| data(anyhow!("assistant turn-taking: {e}")))?,
                user: report_from_offsets(&user, &cfg.metrics).ok(),
            };
            serde_json::to_value(&report).map_err(data)
        }
        EvalKind::Asr => {
            let mut wers = Vec::new();
            let mut cers = Vec::new();
            for (p, t) in &pairs {
                let reference = truth_assistant_string(&layout, t);
                let hypothesis = text_lane_string(&layout, &p.assistant_text_lane);
                if let Ok(wer) = word_error_rate(&reference, &hypothesis) {
                    wers.push(wer);
                }
                if let Ok(cer) = char_error_rate(&reference, &hypothesis) {
                    cers.push(cer);
                }
            }
            Ok(serde_json::json!({
                "wer": mean(&wers),
                "cer": mean(&cers),
                "n_pairs": wers.len(),
            }))
        }
        EvalKind::Tts => {
            let codec = CodecMap::from_config(&layout, cfg.codec).map_err(data)?;
            let mut cers = Vec::new();
            for (p, t) in &pairs {
                let reference = truth_assistant_string(&layout, t);
                let hypothesis = lossy_speech_string(&layout, &codec, &p.assistant_lane);
                if let Ok(cer) = char_error_rate(&reference, &hypothesis) {
                    cers.push(cer);
                }
            }
            Ok(serde_json::json!({
                "cer": mean(&cers),
                "n_pairs": cers.len(),
            }))
        }
        EvalKind::Judge => {
            let transport = HttpJudgeTransport::from_env().map_err(|e| match e {
                JudgeError::Config(msg) => CliError::External(anyhow!(msg)),
                other => CliError::External(other.into()),
            })?;
            let policy = RetryPolicy::default();
            let mut scores = Vec::new();
            for (p, t) in &pairs {
                let context = t
                    .turn_texts
                    .iter()
                    .find(|r| r.speaker == crate::filter::Speaker::User)
                    .map(|r| layout.decode_text(&r.text).unwrap_or_default())
                    .unwrap_or_default();
                let response = text_lane_string(&layout, &p.assistant_text_lane);
                if context.is_empty() || response.is_empty() {
                    continue;
                }
                let judgment = score_response(
                    &transport,
                    &JudgeRequest { context, response },
                    &policy,
                )
                .map_err(|e| CliError::External(e.into()))?;
                scores.push(judgment.total_score);
            }
            Ok(serde_json::json!({
                "mean_score": mean(&scores),
                "n_scored": scores.len(),
            }))
        }
    }
}
