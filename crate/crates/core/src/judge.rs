//! Client for an external LLM judge scoring dialogue responses 1-10.
//!
//! The prompt is a fixed template with `{context}`/`{response}` slots and
//! must render byte-stably. Parsing is lenient by default because judge
//! output tends to wrap the JSON in prose or code fences.

use std::collections::VecDeque;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const PROMPT_TEMPLATE: &str = "Please rate the given dialogue context and response from the voice dialogue system based on the following criteria (1-10 points), and provide a brief evaluation:

1. Relevance: Is the response relevant to the query? Is the content related?

2. Accuracy: Does the response correctly address the user's query and provide accurate information?

3. Completeness: Does the response comprehensively cover all aspects of the query?

4. Conversational Nature: Is the response easy to understand, concise, clear, and fluent?

Context: {context}

Response: {response}

Output in JSON format:

{
  \"Strengths\": \"Positive aspects of the response\",
  \"Weaknesses\": \"Negative aspects of the response\",
  \"Overall Evaluation\": \"Overall assessment of the response\",
  \"Total Score (out of 10, directly provide the score)\": \"\"
}";

const KEY_STRENGTHS: &str = "Strengths";
const KEY_WEAKNESSES: &str = "Weaknesses";
const KEY_OVERALL: &str = "Overall Evaluation";
const KEY_SCORE: &str = "Total Score (out of 10, directly provide the score)";

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("request field `{0}` is empty")]
    EmptyField(&'static str),
    #[error("no JSON object found in judge output")]
    NoJsonFound,
    #[error("judge output is missing field `{0}`")]
    MissingField(String),
    #[error("judge score {0} outside [1, 10]")]
    ScoreOutOfRange(f64),
    #[error("gave up after {attempts} attempts: {last}")]
    ExhaustedRetries { attempts: u32, last: String },
    #[error("judge configuration: {0}")]
    Config(String),
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("network: {0}")]
    Network(String),
    #[error("http status {0}")]
    Http(u16),
    #[error("bad response shape: {0}")]
    BadResponse(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeRequest {
    pub context: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Judgment {
    pub strengths: String,
    pub weaknesses: String,
    pub overall: String,
    pub total_score: f64,
}

/// Fills the template slots. Byte-stable: two renders of the same request
/// are identical; substituted values are never re-scanned for slots.
pub fn render_prompt(req: &JudgeRequest) -> Result<String, JudgeError> {
    if req.context.is_empty() {
        return Err(JudgeError::EmptyField("context"));
    }
    if req.response.is_empty() {
        return Err(JudgeError::EmptyField("response"));
    }
    let (head, rest) = PROMPT_TEMPLATE
        .split_once("{context}")
        .expect("template has a context slot");
    let (mid, tail) = rest
        .split_once("{response}")
        .expect("template has a response slot");
    let mut out = String::with_capacity(
        head.len() + req.context.len() + mid.len() + req.response.len() + tail.len(),
    );
    out.push_str(head);
    out.push_str(&req.context);
    out.push_str(mid);
    out.push_str(&req.response);
    out.push_str(tail);
    Ok(out)
}

fn extract_judgment(obj: &serde_json::Map<String, serde_json::Value>) -> Result<Judgment, JudgeError> {
    let text_field = |key: &str| -> Result<String, JudgeError> {
        obj.get(key)
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .ok_or_else(|| JudgeError::MissingField(key.to_string()))
    };
    let strengths = text_field(KEY_STRENGTHS)?;
    let weaknesses = text_field(KEY_WEAKNESSES)?;
    let overall = text_field(KEY_OVERALL)?;
    // The verbose score key is matched by substring: judges rarely echo it
    // exactly.
    let (_, score_value) = obj
        .iter()
        .find(|(k, _)| k.contains("Total Score"))
        .ok_or_else(|| JudgeError::MissingField("Total Score".to_string()))?;
    let total_score = match score_value {
        serde_json::Value::Number(n) => n.as_f64(),
        serde_json::Value::String(s) => s.trim().parse::<f64>().ok(),
        _ => None,
    }
    .ok_or_else(|| JudgeError::MissingField("Total Score".to_string()))?;
    if !(1.0..=10.0).contains(&total_score) {
        return Err(JudgeError::ScoreOutOfRange(total_score));
    }
    Ok(Judgment {
        strengths,
        weaknesses,
        overall,
        total_score,
    })
}

/// Parses the first JSON object found anywhere in `raw`.
pub fn parse_judgment(raw: &str) -> Result<Judgment, JudgeError> {
    for (start, _) in raw.match_indices('{') {
        let mut stream =
            serde_json::Deserializer::from_str(&raw[start..]).into_iter::<serde_json::Value>();
        if let Some(Ok(serde_json::Value::Object(obj))) = stream.next() {
            return extract_judgment(&obj);
        }
    }
    Err(JudgeError::NoJsonFound)
}

/// Strict variant: the entire input must be exactly one JSON object.
pub fn parse_judgment_strict(raw: &str) -> Result<Judgment, JudgeError> {
    match serde_json::from_str::<serde_json::Value>(raw.trim()) {
        Ok(serde_json::Value::Object(obj)) => extract_judgment(&obj),
        _ => Err(JudgeError::NoJsonFound),
    }
}

/// Renders a judgment into the same JSON shape the prompt asks for.
/// `parse_judgment(serialize_judgment(j)) == j` for valid judgments.
pub fn serialize_judgment(j: &Judgment) -> String {
    let mut obj = serde_json::Map::new();
    obj.insert(KEY_STRENGTHS.into(), j.strengths.clone().into());
    obj.insert(KEY_WEAKNESSES.into(), j.weaknesses.clone().into());
    obj.insert(KEY_OVERALL.into(), j.overall.clone().into());
    obj.insert(
        KEY_SCORE.into(),
        serde_json::Number::from_f64(j.total_score)
            .map(serde_json::Value::Number)
            .unwrap_or_else(|| serde_json::Value::String(j.total_score.to_string())),
    );
    serde_json::to_string_pretty(&serde_json::Value::Object(obj)).expect("serializing judgment")
}

/// Request/response transport to the judge service.
pub trait JudgeTransport {
    fn send(&self, prompt: &str) -> Result<String, TransportError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay_ms: 500,
            max_delay_ms: 8_000,
        }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        let ms = self
            .base_delay_ms
            .saturating_mul(1u64 << attempt.min(16))
            .min(self.max_delay_ms);
        Duration::from_millis(ms)
    }
}

/// Render, send, parse; transient transport and parse failures are retried
/// with exponential backoff until the policy is exhausted.
pub fn score_response<T: JudgeTransport>(
    transport: &T,
    req: &JudgeRequest,
    policy: &RetryPolicy,
) -> Result<Judgment, JudgeError> {
    let prompt = render_prompt(req)?;
    let mut last = String::new();
    for attempt in 0..policy.max_attempts.max(1) {
        if attempt > 0 {
            std::thread::sleep(policy.delay(attempt - 1));
        }
        match transport.send(&prompt) {
            Ok(raw) => match parse_judgment(&raw) {
                Ok(judgment) => return Ok(judgment),
                Err(e) => last = e.to_string(),
            },
            Err(e) => last = e.to_string(),
        }
    }
    Err(JudgeError::ExhaustedRetries {
        attempts: policy.max_attempts.max(1),
        last,
    })
}

/// Scripted transport for offline tests: pops one canned result per call.
pub struct MockTransport {
    script: std::cell::RefCell<VecDeque<Result<String, TransportError>>>,
}

impl MockTransport {
    pub fn new(script: Vec<Result<String, TransportError>>) -> Self {
        MockTransport {
            script: std::cell::RefCell::new(script.into()),
        }
    }
}

impl JudgeTransport for MockTransport {
    fn send(&self, _prompt: &str) -> Result<String, TransportError> {
        self.script
            .borrow_mut()
            .pop_front()
            .unwrap_or_else(|| Err(TransportError::Network("mock script exhausted".into())))
    }
}

/// OpenAI-compatible chat-completion transport. `JUDGE_ENDPOINT` is the full
/// completions URL; `JUDGE_MODEL` names the model; `JUDGE_API_KEY` is sent
/// as a bearer token when present.
pub struct HttpJudgeTransport {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpJudgeTransport {
    pub fn new(endpoint: String, model: String, api_key: Option<String>) -> Self {
        HttpJudgeTransport {
            endpoint,
            model,
            api_key,
            client: reqwest::blocking::Client::new(),
        }
    }

    pub fn from_env() -> Result<Self, JudgeError> {
        let endpoint = std::env::var("JUDGE_ENDPOINT")
            .map_err(|_| JudgeError::Config("JUDGE_ENDPOINT is not set".into()))?;
        let model = std::env::var("JUDGE_MODEL")
            .map_err(|_| JudgeError::Config("JUDGE_MODEL is not set".into()))?;
        let api_key = std::env::var("JUDGE_API_KEY").ok();
        Ok(HttpJudgeTransport::new(endpoint, model, api_key))
    }
}

impl JudgeTransport for HttpJudgeTransport {
    fn send(&self, prompt: &str) -> Result<String, TransportError> {
        let body = serde_json::json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut request = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request
            .send()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        if !response.status().is_success() {
            return Err(TransportError::Http(response.status().as_u16()));
        }
        let value: serde_json::Value = response
            .json()
            .map_err(|e| TransportError::BadResponse(e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| {
                TransportError::BadResponse("missing choices[0].message.content".into())
            })
    }
}
