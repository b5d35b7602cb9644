//! Chat-completion transport, endpoint configuration and the mutator that ties prompt, request
//! and edit validation together.

use super::edit::{apply_edit, parse_edit, EditError, GenomeEdit};
use super::prompt::MutationPrompt;
use parking_lot::Mutex;
use policylab_core::policy::PolicyGenome;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use std::time::Duration;
use thiserror::Error;

/// A model name with its sampling weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightedModel {
    pub name: String,
    pub weight: f64,
}

/// Where and how to reach a chat-completion endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmEndpointConfig {
    /// Base URL; `/chat/completions` is appended.
    pub base_url: String,
    /// Models sampled per request by weight.
    pub models: Vec<WeightedModel>,
    pub temperature: f64,
    pub max_tokens: usize,
    /// Environment variable holding the API key.
    pub api_key_env: String,
    pub request_timeout_seconds: f64,
    /// Extra attempts after the first failure.
    pub retry_budget: u32,
    /// Linear backoff step between attempts.
    pub retry_backoff_ms: u64,
}

impl Default for LlmEndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1".into(),
            models: vec![
                WeightedModel {
                    name: "primary".into(),
                    weight: 0.7,
                },
                WeightedModel {
                    name: "secondary".into(),
                    weight: 0.3,
                },
            ],
            temperature: 0.7,
            max_tokens: 16384,
            api_key_env: "POLICYLAB_LLM_API_KEY".into(),
            request_timeout_seconds: 60.0,
            retry_budget: 2,
            retry_backoff_ms: 200,
        }
    }
}

impl LlmEndpointConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.models.is_empty() {
            return Err("llm.models must list at least one model".into());
        }
        if self.models.iter().any(|m| !(m.weight >= 0.0 && m.weight.is_finite())) {
            return Err("llm.models weights must be finite and >= 0".into());
        }
        let sum: f64 = self.models.iter().map(|m| m.weight).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(format!("llm.models weights must sum to 1, got {sum}"));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err("llm.temperature must be finite and >= 0".into());
        }
        if self.max_tokens == 0 {
            return Err("llm.max_tokens must be >= 1".into());
        }
        if !(self.request_timeout_seconds > 0.0 && self.request_timeout_seconds.is_finite()) {
            return Err("llm.request_timeout_seconds must be finite and > 0".into());
        }
        Ok(())
    }

    /// Picks a model by weight.
    pub fn sample_model<R: Rng>(&self, rng: &mut R) -> &str {
        let mut u = rng.gen::<f64>();
        for m in &self.models {
            if u < m.weight {
                return &m.name;
            }
            u -= m.weight;
        }
        &self.models[self.models.len() - 1].name
    }
}

/// One chat message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// Request body of a chat completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: usize,
}

impl ChatRequest {
    pub fn from_prompt(model: &str, prompt: &MutationPrompt, config: &LlmEndpointConfig) -> Self {
        Self {
            model: model.to_string(),
            messages: vec![
                ChatMessage {
                    role: "system".into(),
                    content: prompt.system.clone(),
                },
                ChatMessage {
                    role: "user".into(),
                    content: prompt.user.clone(),
                },
            ],
            temperature: config.temperature,
            max_tokens: config.max_tokens,
        }
    }
}

/// Transport-level failure.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransportError {
    #[error("network: {0}")]
    Network(String),
    #[error("http status {0}")]
    Status(u16),
    #[error("bad response body: {0}")]
    Decode(String),
}

/// Sends one chat request and returns the first choice's text.
pub trait ChatTransport: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportError>;
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: String,
}

/// OpenAI-compatible HTTP transport.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
    url: String,
    api_key: Option<String>,
}

impl std::fmt::Debug for HttpTransport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpTransport")
            .field("url", &self.url)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl HttpTransport {
    /// Builds a client for `config`, reading the API key from its environment variable.
    pub fn new(config: &LlmEndpointConfig) -> Result<Self, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.request_timeout_seconds))
            .build()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        Ok(Self {
            client,
            url: format!("{}/chat/completions", config.base_url.trim_end_matches('/')),
            api_key: std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty()),
        })
    }
}

impl ChatTransport for HttpTransport {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let mut req = self.client.post(&self.url).json(request);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| TransportError::Network(e.without_url().to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(TransportError::Status(status.as_u16()));
        }
        let body: ChatResponse = resp.json().map_err(|e| TransportError::Decode(e.to_string()))?;
        body.choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| TransportError::Decode("no choices".into()))
    }
}

/// A canned reply for [`MockTransport`].
#[derive(Debug, Clone, PartialEq)]
pub enum MockReply {
    Text(String),
    Unavailable,
}

/// Offline transport replaying canned replies in order, cycling when exhausted.
#[derive(Debug)]
pub struct MockTransport {
    replies: Vec<MockReply>,
    next: Mutex<usize>,
    requests: Mutex<Vec<ChatRequest>>,
}

impl MockTransport {
    pub fn new(replies: Vec<MockReply>) -> Self {
        Self {
            replies,
            next: Mutex::new(0),
            requests: Mutex::new(Vec::new()),
        }
    }

    /// A transport whose every request fails.
    pub fn unavailable() -> Self {
        Self::new(vec![MockReply::Unavailable])
    }

    /// Requests received so far.
    pub fn requests(&self) -> Vec<ChatRequest> {
        self.requests.lock().clone()
    }
}

impl ChatTransport for MockTransport {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportError> {
        self.requests.lock().push(request.clone());
        if self.replies.is_empty() {
            return Err(TransportError::Network("mock has no replies".into()));
        }
        let mut next = self.next.lock();
        let reply = self.replies[*next % self.replies.len()].clone();
        *next += 1;
        match reply {
            MockReply::Text(t) => Ok(t),
            MockReply::Unavailable => Err(TransportError::Network("connection refused (mock)".into())),
        }
    }
}

/// Recorded model responses shipped with the crate, by name.
pub fn recorded_fixtures() -> Vec<(&'static str, &'static str)> {
    vec![
        ("valid_cost_benefit", include_str!("../../fixtures/llm/valid_cost_benefit.txt")),
        ("valid_faster_scheduler", include_str!("../../fixtures/llm/valid_faster_scheduler.txt")),
        ("prose_only", include_str!("../../fixtures/llm/prose_only.txt")),
        ("unknown_path", include_str!("../../fixtures/llm/unknown_path.txt")),
        ("out_of_range", include_str!("../../fixtures/llm/out_of_range.txt")),
        ("malformed_json", include_str!("../../fixtures/llm/malformed_json.txt")),
        ("wrong_variant_parameter", include_str!("../../fixtures/llm/wrong_variant_parameter.txt")),
    ]
}

/// Looks up one recorded fixture.
pub fn recorded_fixture(name: &str) -> Option<&'static str> {
    recorded_fixtures().into_iter().find(|(n, _)| *n == name).map(|(_, t)| t)
}

/// Why an LLM mutation produced no genome.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum LlmError {
    #[error("invalid endpoint config: {0}")]
    InvalidConfig(String),
    #[error("mutator unavailable after {attempts} attempts: {last}")]
    Unavailable { attempts: u32, last: String },
    #[error("edit rejected: {0}")]
    Rejected(#[from] EditError),
}

/// Request and validation counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmStats {
    pub requests: u64,
    pub unavailable: u64,
    pub rejected: u64,
    pub accepted: u64,
}

/// Proposes genome edits through a chat endpoint and validates them before they reach
/// evaluation.
pub struct LlmMutator {
    config: LlmEndpointConfig,
    transport: Arc<dyn ChatTransport>,
    stats: Mutex<LlmStats>,
}

impl std::fmt::Debug for LlmMutator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmMutator").field("config", &self.config).finish()
    }
}

impl LlmMutator {
    pub fn new(config: LlmEndpointConfig, transport: Arc<dyn ChatTransport>) -> Result<Self, LlmError> {
        config.validate().map_err(LlmError::InvalidConfig)?;
        Ok(Self {
            config,
            transport,
            stats: Mutex::new(LlmStats::default()),
        })
    }

    /// A mutator talking HTTP to the configured endpoint.
    pub fn http(config: LlmEndpointConfig) -> Result<Self, LlmError> {
        let transport = HttpTransport::new(&config).map_err(|e| LlmError::InvalidConfig(e.to_string()))?;
        Self::new(config, Arc::new(transport))
    }

    pub fn config(&self) -> &LlmEndpointConfig {
        &self.config
    }

    pub fn stats(&self) -> LlmStats {
        *self.stats.lock()
    }

    /// Sends one request (retrying transport failures) and parses the edit block.
    pub fn propose_mutation<R: Rng>(&self, prompt: &MutationPrompt, rng: &mut R) -> Result<GenomeEdit, LlmError> {
        let model = self.config.sample_model(rng).to_string();
        let request = ChatRequest::from_prompt(&model, prompt, &self.config);
        let attempts = self.config.retry_budget + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 && self.config.retry_backoff_ms > 0 {
                std::thread::sleep(Duration::from_millis(self.config.retry_backoff_ms * attempt as u64));
            }
            self.stats.lock().requests += 1;
            match self.transport.send(&request) {
                Ok(text) => {
                    return parse_edit(&text).map_err(|e| {
                        self.stats.lock().rejected += 1;
                        LlmError::Rejected(e)
                    })
                }
                Err(e) => {
                    tracing::debug!(model = %model, attempt, error = %e, "chat request failed");
                    last = e.to_string();
                }
            }
        }
        self.stats.lock().unavailable += 1;
        Err(LlmError::Unavailable { attempts, last })
    }

    /// Proposes and applies one edit; the returned genome has passed validation.
    pub fn mutate<R: Rng>(&self, parent: &PolicyGenome, prompt: &MutationPrompt, rng: &mut R) -> Result<PolicyGenome, LlmError> {
        let edit = self.propose_mutation(prompt, rng)?;
        match apply_edit(parent, &edit) {
            Ok(g) => {
                self.stats.lock().accepted += 1;
                Ok(g)
            }
            Err(e) => {
                self.stats.lock().rejected += 1;
                Err(LlmError::Rejected(e))
            }
        }
    }
}

/// Replies built from the named recorded fixtures, in order.
pub fn fixture_replies(names: &[&str]) -> Vec<MockReply> {
    names
        .iter()
        .map(|n| MockReply::Text(recorded_fixture(n).unwrap_or_default().to_string()))
        .collect()
}
