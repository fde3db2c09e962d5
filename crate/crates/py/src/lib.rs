//! Python bindings for the duplexflat pipeline: vocabulary, codec,
//! simulation, flattening, the n-gram predictor, streaming inference, and
//! the evaluation metrics.
//!
//! Sequences cross the boundary as plain lists of ints; structured reports
//! come back as JSON strings.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use duplexflat::codec::CodecMap;
use duplexflat::engine::{self, DuplexMode};
use duplexflat::filter::{self, DialogueScript, Speaker, Turn};
use duplexflat::flatten::{self, ChunkConfig, FlattenedSample, SampleFormat, Unflattened};
use duplexflat::judge;
use duplexflat::metrics::{self, TurnTakingParams};
use duplexflat::predictor::{self, NGramModel};
use duplexflat::simulate::{inject_noise, simulate_timeline, DialogueTimeline, SimConfig};
use duplexflat::vocab::{TokenClass, TokenId, VocabLayout as CoreLayout};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn ids(raw: &[u32]) -> Vec<TokenId> {
    raw.iter().copied().map(TokenId).collect()
}

fn raw(ids: &[TokenId]) -> Vec<u32> {
    ids.iter().map(|t| t.0).collect()
}

fn parse_mode(mode: &str) -> PyResult<DuplexMode> {
    mode.parse::<DuplexMode>().map_err(err)
}

fn script_from_turns(id: &str, turns: Vec<(String, String)>) -> PyResult<DialogueScript> {
    let turns = turns
        .into_iter()
        .map(|(speaker, text)| {
            let speaker = match speaker.as_str() {
                "user" => Speaker::User,
                "assistant" => Speaker::Assistant,
                other => return Err(err(format!("unknown speaker `{other}`"))),
            };
            Ok(Turn { speaker, text })
        })
        .collect::<PyResult<Vec<_>>>()?;
    Ok(DialogueScript {
        id: id.to_string(),
        turns,
    })
}

/// Partitioned token space: text ids, speech ids, then special tokens.
#[pyclass(name = "VocabLayout", skip_from_py_object)]
#[derive(Clone)]
struct PyVocabLayout {
    inner: CoreLayout,
}

#[pymethods]
impl PyVocabLayout {
    #[new]
    #[pyo3(signature = (text_vocab_size=256, speech_codebook_size=4096, special_names=None))]
    fn new(
        text_vocab_size: usize,
        speech_codebook_size: usize,
        special_names: Option<Vec<String>>,
    ) -> PyResult<Self> {
        let names = special_names.unwrap_or_else(|| {
            duplexflat::vocab::special::REQUIRED
                .iter()
                .map(|s| s.to_string())
                .collect()
        });
        let inner =
            CoreLayout::new(text_vocab_size, speech_codebook_size, names).map_err(err)?;
        Ok(PyVocabLayout { inner })
    }

    fn total_size(&self) -> usize {
        self.inner.total_size()
    }

    /// ("text", index) | ("speech", code) | ("special", name)
    fn classify(&self, py: Python<'_>, id: u32) -> PyResult<(String, Py<PyAny>)> {
        match self.inner.classify_token(TokenId(id)).map_err(err)? {
            TokenClass::Text(i) => Ok(("text".into(), i.into_pyobject(py)?.into_any().unbind())),
            TokenClass::Speech(c) => {
                Ok(("speech".into(), c.into_pyobject(py)?.into_any().unbind()))
            }
            TokenClass::Special(name) => {
                Ok(("special".into(), name.into_pyobject(py)?.into_any().unbind()))
            }
        }
    }

    fn special_id(&self, name: &str) -> PyResult<u32> {
        Ok(self.inner.special_id(name).map_err(err)?.0)
    }

    fn silent_speech(&self) -> u32 {
        self.inner.silent_speech().0
    }

    fn silent_text(&self) -> u32 {
        self.inner.silent_text().0
    }

    fn noise(&self) -> u32 {
        self.inner.noise().0
    }

    fn encode_text(&self, text: &str) -> PyResult<Vec<u32>> {
        Ok(raw(&self.inner.encode_text(text).map_err(err)?))
    }

    fn decode_text(&self, tokens: Vec<u32>) -> PyResult<String> {
        self.inner.decode_text(&ids(&tokens)).map_err(err)
    }

    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: CoreLayout = serde_json::from_str(text).map_err(err)?;
        inner.validate().map_err(err)?;
        Ok(PyVocabLayout { inner })
    }
}

/// Deterministic invertible text-to-speech token map.
#[pyclass(name = "CodecMap")]
struct PyCodecMap {
    inner: CodecMap,
}

#[pymethods]
impl PyCodecMap {
    #[new]
    #[pyo3(signature = (layout, group_size=2, seed=0))]
    fn new(layout: &PyVocabLayout, group_size: usize, seed: u64) -> PyResult<Self> {
        Ok(PyCodecMap {
            inner: CodecMap::new(&layout.inner, group_size, seed).map_err(err)?,
        })
    }

    #[getter]
    fn group_size(&self) -> usize {
        self.inner.group_size()
    }

    fn encode(&self, text: Vec<u32>) -> PyResult<Vec<u32>> {
        Ok(raw(&self.inner.encode_speech(&ids(&text)).map_err(err)?))
    }

    fn decode(&self, speech: Vec<u32>) -> PyResult<Vec<u32>> {
        Ok(raw(&self.inner.decode_speech(&ids(&speech)).map_err(err)?))
    }
}

/// Two time-aligned token lanes with per-turn text and ground-truth events.
#[pyclass(name = "DialogueTimeline", skip_from_py_object)]
#[derive(Clone)]
struct PyTimeline {
    inner: DialogueTimeline,
}

#[pymethods]
impl PyTimeline {
    #[getter]
    fn token_rate_hz(&self) -> u32 {
        self.inner.token_rate_hz
    }

    #[getter]
    fn user_lane(&self) -> Vec<u32> {
        raw(&self.inner.user_lane)
    }

    #[getter]
    fn assistant_lane(&self) -> Vec<u32> {
        raw(&self.inner.assistant_lane)
    }

    /// [(kind, slot), ...] sorted by slot.
    #[getter]
    fn events(&self) -> Vec<(String, usize)> {
        self.inner
            .events
            .iter()
            .map(|e| (format!("{:?}", e.kind), e.slot))
            .collect()
    }

    /// [(speaker, text_tokens, start_slot, end_slot), ...]
    #[getter]
    fn turn_texts(&self) -> Vec<(String, Vec<u32>, usize, usize)> {
        self.inner
            .turn_texts
            .iter()
            .map(|t| {
                let speaker = match t.speaker {
                    Speaker::User => "user".to_string(),
                    Speaker::Assistant => "assistant".to_string(),
                };
                (speaker, raw(&t.text), t.start_slot, t.end_slot)
            })
            .collect()
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyTimeline {
            inner: serde_json::from_str(text).map_err(err)?,
        })
    }
}

/// Flattened token sequence with channel tags and loss mask.
#[pyclass(name = "FlattenedSample", skip_from_py_object)]
#[derive(Clone)]
struct PySample {
    inner: FlattenedSample,
}

#[pymethods]
impl PySample {
    #[getter]
    fn format(&self) -> String {
        match self.inner.format {
            SampleFormat::AsrAlign => "asr",
            SampleFormat::TtsAlign => "tts",
            SampleFormat::FourStream => "4stream",
            SampleFormat::ThreeStream => "3stream",
            SampleFormat::TwoStream => "2stream",
        }
        .to_string()
    }

    #[getter]
    fn tokens(&self) -> Vec<u32> {
        raw(&self.inner.tokens)
    }

    /// One of "US", "UT", "AT", "AS", "C" per position.
    #[getter]
    fn channels(&self) -> Vec<String> {
        self.inner
            .channels
            .iter()
            .map(|c| {
                serde_json::to_value(c)
                    .expect("channel serializes")
                    .as_str()
                    .unwrap()
                    .to_string()
            })
            .collect()
    }

    #[getter]
    fn mask(&self) -> Vec<bool> {
        self.inner.mask.clone()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PySample {
            inner: serde_json::from_str(text).map_err(err)?,
        })
    }
}

/// Screens one dialogue; returns "accept" or "reject:<Reason>".
#[pyfunction]
#[pyo3(signature = (turns, max_words=200, max_nontext_ratio=0.2, rare_symbols=None))]
fn filter_script(
    turns: Vec<(String, String)>,
    max_words: usize,
    max_nontext_ratio: f64,
    rare_symbols: Option<String>,
) -> PyResult<String> {
    let script = script_from_turns("py", turns)?;
    let mut cfg = filter::FilterConfig {
        max_words,
        max_nontext_ratio,
        ..Default::default()
    };
    if let Some(symbols) = rare_symbols {
        cfg.rare_symbols = symbols;
    }
    match filter::filter_script(&script, &cfg).map_err(err)? {
        filter::Verdict::Accept => Ok("accept".into()),
        filter::Verdict::Reject(reason) => Ok(format!("reject:{reason:?}")),
    }
}

/// Simulates a timeline for one script (noise injection included).
#[pyfunction]
#[pyo3(signature = (codec, turns, seed=0, interruption_prob=0.2, noise_sub_rate=0.05))]
fn simulate(
    codec: &PyCodecMap,
    turns: Vec<(String, String)>,
    seed: u64,
    interruption_prob: f64,
    noise_sub_rate: f64,
) -> PyResult<PyTimeline> {
    let script = script_from_turns("py", turns)?;
    let cfg = SimConfig {
        interruption_prob,
        noise_sub_rate,
        ..Default::default()
    };
    let clean = simulate_timeline(&script, &codec.inner, &cfg, seed).map_err(err)?;
    let noisy = inject_noise(
        codec.inner.layout(),
        &clean,
        &cfg,
        duplexflat::derive_seed(seed, 1),
    )
    .map_err(err)?;
    Ok(PyTimeline { inner: noisy })
}

#[pyfunction]
#[pyo3(signature = (layout, timeline, text_chunk=2, speech_chunk=10))]
fn flatten_three_stream(
    layout: &PyVocabLayout,
    timeline: &PyTimeline,
    text_chunk: usize,
    speech_chunk: usize,
) -> PyResult<PySample> {
    let cfg = ChunkConfig {
        text_chunk,
        speech_chunk,
    };
    Ok(PySample {
        inner: flatten::flatten_three_stream(&layout.inner, &timeline.inner, &cfg).map_err(err)?,
    })
}

#[pyfunction]
#[pyo3(signature = (layout, timeline, speech_chunk=10))]
fn flatten_two_stream(
    layout: &PyVocabLayout,
    timeline: &PyTimeline,
    speech_chunk: usize,
) -> PyResult<PySample> {
    let cfg = ChunkConfig {
        text_chunk: 1,
        speech_chunk,
    };
    Ok(PySample {
        inner: flatten::flatten_two_stream(&layout.inner, &timeline.inner, &cfg).map_err(err)?,
    })
}

/// Turn-based four-stream sample for a whole timeline.
#[pyfunction]
fn flatten_half_duplex(layout: &PyVocabLayout, timeline: &PyTimeline) -> PyResult<PySample> {
    let exchanges = flatten::timeline_to_exchanges(&timeline.inner).map_err(err)?;
    Ok(PySample {
        inner: flatten::flatten_half_duplex(&layout.inner, &exchanges).map_err(err)?,
    })
}

#[pyfunction]
fn build_asr_sample(
    layout: &PyVocabLayout,
    speech: Vec<u32>,
    text: Vec<u32>,
) -> PyResult<PySample> {
    Ok(PySample {
        inner: flatten::build_asr_sample(&layout.inner, &ids(&speech), &ids(&text))
            .map_err(err)?,
    })
}

#[pyfunction]
fn build_tts_sample(
    layout: &PyVocabLayout,
    text: Vec<u32>,
    speech: Vec<u32>,
) -> PyResult<PySample> {
    Ok(PySample {
        inner: flatten::build_tts_sample(&layout.inner, &ids(&text), &ids(&speech))
            .map_err(err)?,
    })
}

/// Validates and inverts a sample. Returns a format-tagged tuple:
/// ("asr", speech, text) | ("tts", text, speech) | ("4stream", exchanges)
/// | ("3stream", user, text, assistant) | ("2stream", user, assistant).
#[pyfunction]
fn unflatten(py: Python<'_>, layout: &PyVocabLayout, sample: &PySample) -> PyResult<Py<PyAny>> {
    let out = flatten::unflatten(&layout.inner, &sample.inner).map_err(err)?;
    let obj = match out {
        Unflattened::AsrAlign { speech, text } => {
            ("asr", raw(&speech), raw(&text)).into_pyobject(py)?.into_any()
        }
        Unflattened::TtsAlign { text, speech } => {
            ("tts", raw(&text), raw(&speech)).into_pyobject(py)?.into_any()
        }
        Unflattened::FourStream { exchanges } => {
            let rows: Vec<(Vec<u32>, Vec<u32>, Vec<u32>, Vec<u32>)> = exchanges
                .iter()
                .map(|e| {
                    (
                        raw(&e.user_speech),
                        raw(&e.user_text),
                        raw(&e.assistant_text),
                        raw(&e.assistant_speech),
                    )
                })
                .collect();
            ("4stream", rows).into_pyobject(py)?.into_any()
        }
        Unflattened::ThreeStream {
            user_lane,
            assistant_text,
            assistant_lane,
        } => ("3stream", raw(&user_lane), raw(&assistant_text), raw(&assistant_lane))
            .into_pyobject(py)?
            .into_any(),
        Unflattened::TwoStream {
            user_lane,
            assistant_lane,
        } => ("2stream", raw(&user_lane), raw(&assistant_lane))
            .into_pyobject(py)?
            .into_any(),
    };
    Ok(obj.unbind())
}

/// Add-alpha n-gram predictor over framing-transparent contexts.
#[pyclass(name = "NGramModel")]
struct PyNGramModel {
    inner: NGramModel,
}

#[pymethods]
impl PyNGramModel {
    #[new]
    #[pyo3(signature = (layout, order=3, alpha=0.1))]
    fn new(layout: &PyVocabLayout, order: usize, alpha: f64) -> PyResult<Self> {
        Ok(PyNGramModel {
            inner: NGramModel::new(&layout.inner, order, alpha).map_err(err)?,
        })
    }

    fn absorb(&mut self, sample: &PySample) {
        self.inner.absorb(std::slice::from_ref(&sample.inner));
    }

    fn masked_cross_entropy(&self, sample: &PySample) -> PyResult<f64> {
        predictor::masked_cross_entropy(&self.inner, &sample.inner).map_err(err)
    }

    fn next_distribution(&self, context: Vec<u32>) -> Vec<f64> {
        use duplexflat::predictor::Predictor;
        self.inner.next_distribution(&ids(&context))
    }

    /// Greedy constrained speech-to-text decoding through the model.
    fn transcribe(&self, speech: Vec<u32>, group_size: usize) -> PyResult<Vec<u32>> {
        let layout = self.inner.layout().clone();
        Ok(raw(&predictor::greedy_transcribe(
            &self.inner,
            &layout,
            &ids(&speech),
            group_size,
        )
        .map_err(err)?))
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(std::path::Path::new(path)).map_err(err)
    }

    #[staticmethod]
    fn load(path: &str, layout: &PyVocabLayout) -> PyResult<Self> {
        Ok(PyNGramModel {
            inner: NGramModel::load(std::path::Path::new(path), &layout.inner).map_err(err)?,
        })
    }
}

/// Chunked streaming duplex session holding its own copy of the model.
#[pyclass(name = "DuplexSession")]
struct PySession {
    inner: engine::DuplexSession<NGramModel>,
}

#[pymethods]
impl PySession {
    #[new]
    #[pyo3(signature = (model, layout, text_chunk=2, speech_chunk=10, mode="3stream", temperature=1.0, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        model: &PyNGramModel,
        layout: &PyVocabLayout,
        text_chunk: usize,
        speech_chunk: usize,
        mode: &str,
        temperature: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let cfg = ChunkConfig {
            text_chunk,
            speech_chunk,
        };
        let inner = engine::DuplexSession::new(
            model.inner.clone(),
            &layout.inner,
            cfg,
            parse_mode(mode)?,
            temperature,
            seed,
        )
        .map_err(err)?;
        Ok(PySession { inner })
    }

    /// Feeds one user speech chunk; returns (assistant_text, assistant_speech).
    fn feed_user_chunk(&mut self, chunk: Vec<u32>) -> PyResult<(Vec<u32>, Vec<u32>)> {
        let out = self.inner.feed_user_chunk(&ids(&chunk)).map_err(err)?;
        Ok((raw(&out.text), raw(&out.speech)))
    }

    #[getter]
    fn chunks_fed(&self) -> usize {
        self.inner.chunks_fed()
    }

    fn context_sample(&self) -> PySample {
        PySample {
            inner: self.inner.context_sample(),
        }
    }
}

/// Runs a whole user lane through a fresh session; returns
/// (assistant_text_lane, assistant_speech_lane).
#[pyfunction]
#[pyo3(signature = (model, layout, user_lane, text_chunk=2, speech_chunk=10, mode="3stream", temperature=1.0, seed=0))]
#[allow(clippy::too_many_arguments)]
fn run_duplex(
    model: &PyNGramModel,
    layout: &PyVocabLayout,
    user_lane: Vec<u32>,
    text_chunk: usize,
    speech_chunk: usize,
    mode: &str,
    temperature: f64,
    seed: u64,
) -> PyResult<(Vec<u32>, Vec<u32>)> {
    let cfg = ChunkConfig {
        text_chunk,
        speech_chunk,
    };
    let lane = engine::pad_user_lane(&layout.inner, &ids(&user_lane), speech_chunk);
    let (text, speech) = engine::run_duplex(
        &model.inner,
        &layout.inner,
        &lane,
        cfg,
        parse_mode(mode)?,
        temperature,
        seed,
    )
    .map_err(err)?;
    Ok((raw(&text), raw(&speech)))
}

#[pyfunction]
fn word_error_rate(reference: &str, hypothesis: &str) -> PyResult<f64> {
    metrics::word_error_rate(reference, hypothesis).map_err(err)
}

#[pyfunction]
fn char_error_rate(reference: &str, hypothesis: &str) -> PyResult<f64> {
    metrics::char_error_rate(reference, hypothesis).map_err(err)
}

#[pyfunction]
fn edit_distance(a: Vec<u32>, b: Vec<u32>) -> usize {
    metrics::edit_distance(&a, &b)
}

fn params_with(ks: Option<Vec<usize>>, token_duration_ms: f64, threshold_ms: f64, silence_run: usize) -> TurnTakingParams {
    TurnTakingParams {
        ks: ks.unwrap_or_else(|| vec![1, 5, 10, 25]),
        token_duration_ms,
        threshold_ms,
        silence_run,
    }
}

/// Turn-taking report for the assistant-should-speak events, as JSON.
#[pyfunction]
#[pyo3(signature = (layout, timeline, ks=None, token_duration_ms=40.0, threshold_ms=1500.0))]
fn assistant_turntaking(
    layout: &PyVocabLayout,
    timeline: &PyTimeline,
    ks: Option<Vec<usize>>,
    token_duration_ms: f64,
    threshold_ms: f64,
) -> PyResult<String> {
    let params = params_with(ks, token_duration_ms, threshold_ms, 3);
    let report =
        metrics::assistant_turntaking(&layout.inner, &timeline.inner, &params).map_err(err)?;
    serde_json::to_string(&report).map_err(err)
}

/// Turn-taking report for the assistant-should-stop events, as JSON.
#[pyfunction]
#[pyo3(signature = (layout, timeline, ks=None, token_duration_ms=40.0, threshold_ms=1500.0, silence_run=3))]
fn user_turntaking(
    layout: &PyVocabLayout,
    timeline: &PyTimeline,
    ks: Option<Vec<usize>>,
    token_duration_ms: f64,
    threshold_ms: f64,
    silence_run: usize,
) -> PyResult<String> {
    let params = params_with(ks, token_duration_ms, threshold_ms, silence_run);
    let report =
        metrics::user_turntaking(&layout.inner, &timeline.inner, &params).map_err(err)?;
    serde_json::to_string(&report).map_err(err)
}

#[pyfunction]
fn render_prompt(context: &str, response: &str) -> PyResult<String> {
    judge::render_prompt(&judge::JudgeRequest {
        context: context.to_string(),
        response: response.to_string(),
    })
    .map_err(err)
}

/// Parses a judge reply; returns {strengths, weaknesses, overall, total_score}.
#[pyfunction]
fn parse_judgment<'py>(py: Python<'py>, raw_reply: &str) -> PyResult<Bound<'py, PyDict>> {
    let judgment = judge::parse_judgment(raw_reply).map_err(err)?;
    let dict = PyDict::new(py);
    dict.set_item("strengths", judgment.strengths)?;
    dict.set_item("weaknesses", judgment.weaknesses)?;
    dict.set_item("overall", judgment.overall)?;
    dict.set_item("total_score", judgment.total_score)?;
    Ok(dict)
}

#[pymodule]
fn duplexflat_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyVocabLayout>()?;
    m.add_class::<PyCodecMap>()?;
    m.add_class::<PyTimeline>()?;
    m.add_class::<PySample>()?;
    m.add_class::<PyNGramModel>()?;
    m.add_class::<PySession>()?;
    m.add_function(wrap_pyfunction!(filter_script, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(flatten_three_stream, m)?)?;
    m.add_function(wrap_pyfunction!(flatten_two_stream, m)?)?;
    m.add_function(wrap_pyfunction!(flatten_half_duplex, m)?)?;
    m.add_function(wrap_pyfunction!(build_asr_sample, m)?)?;
    m.add_function(wrap_pyfunction!(build_tts_sample, m)?)?;
    m.add_function(wrap_pyfunction!(unflatten, m)?)?;
    m.add_function(wrap_pyfunction!(run_duplex, m)?)?;
    m.add_function(wrap_pyfunction!(word_error_rate, m)?)?;
    m.add_function(wrap_pyfunction!(char_error_rate, m)?)?;
    m.add_function(wrap_pyfunction!(edit_distance, m)?)?;
    m.add_function(wrap_pyfunction!(assistant_turntaking, m)?)?;
    m.add_function(wrap_pyfunction!(user_turntaking, m)?)?;
    m.add_function(wrap_pyfunction!(render_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(parse_judgment, m)?)?;
    Ok(())
}
