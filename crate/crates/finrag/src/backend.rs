//! Completion backends behind one interface.
//!
//! Three implementations: a generic HTTP chat-completions client, a
//! deterministic keyword mock for tests and offline runs, and the
//! locally trained toy model. All of them take a [`PromptEnvelope`]
//! and return raw generated text; label mapping happens downstream.
//!
//! The HTTP wire format is a chat-completions POST. Request body:
//!
//! ```json
//! {"model": "name", "messages": [{"role": "system", "content": "instruction"},
//!  {"role": "user", "content": "query"}], "temperature": 0.0, "max_tokens": 8}
//! ```
//!
//! (`model` is omitted when unset.) The response must carry the
//! generated text at `choices[0].message.content`:
//!
//! ```json
//! {"choices": [{"message": {"role": "assistant", "content": "positive"}}]}
//! ```
//!
//! Transient failures (HTTP 429, HTTP 5xx, connection errors) are
//! retried with exponential backoff, 100 ms doubling per retry, up to
//! `max_retries` retries after the first attempt. Timeouts and
//! authentication failures are terminal.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bpe::{BpeError, Vocab};
use crate::dataset::render_prompt;
use crate::lm::checkpoint::Checkpoint;
use crate::lm::{generate, LmError, ToyLMParams};
use crate::text::tokenize;

/// Content cues the mock maps to "positive", checked first.
pub const MOCK_POSITIVE_CUES: [&str; 4] = ["upgrade", "beat", "hikes", "outperform"];
/// Content cues the mock maps to "negative".
pub const MOCK_NEGATIVE_CUES: [&str; 4] = ["downgrade", "miss", "cuts", "underweight"];

/// First retry delay; each further retry doubles it.
pub const RETRY_BASE_DELAY: Duration = Duration::from_millis(100);

#[derive(Debug, Error)]
pub enum BackendError {
    /// The request ran past its deadline. Not retried: a slow backend
    /// would just eat the whole budget again.
    #[error("request timed out after {elapsed_ms} ms")]
    Timeout { elapsed_ms: u128 },
    #[error("authentication failed: {message}")]
    AuthFailure { message: String },
    /// The backend asked us to slow down; safe to retry after backoff.
    #[error("rate limited: {message}")]
    RateLimited { message: String },
    /// Every allowed attempt failed on a transient error.
    #[error("backend unavailable after {attempts} attempts: {last_error}")]
    BackendUnavailable { attempts: u32, last_error: String },
    #[error("malformed response: {message}")]
    MalformedResponse { message: String },
    #[error("invalid backend configuration: {message}")]
    InvalidConfig { message: String },
    #[error(transparent)]
    Model(#[from] LmError),
    #[error(transparent)]
    Tokenizer(#[from] BpeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// An instruction and its content, rendered into the prompt form the
/// model was trained on, with the assistant slot left open.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptEnvelope {
    pub instruction: String,
    pub content: String,
    pub rendered: String,
}

impl PromptEnvelope {
    pub fn new(instruction: impl Into<String>, content: impl Into<String>) -> PromptEnvelope {
        let instruction = instruction.into();
        let content = content.into();
        let rendered = render_prompt(&instruction, &content);
        PromptEnvelope {
            instruction,
            content,
            rendered,
        }
    }
}

/// Decoding and transport limits for one completion call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompletionParams {
    pub temperature: f64,
    pub max_tokens: usize,
    #[serde(with = "duration_ms")]
    pub timeout: Duration,
    pub max_retries: u32,
}

impl Default for CompletionParams {
    fn default() -> CompletionParams {
        CompletionParams {
            temperature: 0.0,
            max_tokens: 8,
            timeout: Duration::from_secs(30),
            max_retries: 3,
        }
    }
}

impl CompletionParams {
    pub fn validate(&self) -> Result<(), BackendError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(BackendError::InvalidConfig {
                message: format!("temperature {} must be finite and nonnegative", self.temperature),
            });
        }
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidConfig {
                message: "max_tokens must be at least 1".to_string(),
            });
        }
        if self.timeout.is_zero() {
            return Err(BackendError::InvalidConfig {
                message: "timeout must be positive".to_string(),
            });
        }
        Ok(())
    }
}

mod duration_ms {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &Duration, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_u64(value.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(deserializer)?))
    }
}

/// Which backend to talk to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Mock,
    Toy,
}

impl std::fmt::Display for BackendKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            BackendKind::Http => "http",
            BackendKind::Mock => "mock",
            BackendKind::Toy => "toy",
        };
        f.write_str(name)
    }
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "http" => Ok(BackendKind::Http),
            "mock" => Ok(BackendKind::Mock),
            "toy" => Ok(BackendKind::Toy),
            other => Err(format!("unknown backend kind {other:?}, expected http, mock, or toy")),
        }
    }
}

/// Backend selection plus whatever the selected kind needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_name: Option<String>,
    /// Name of the environment variable holding the bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credential_env: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_path: Option<PathBuf>,
}

impl Default for BackendConfig {
    fn default() -> BackendConfig {
        BackendConfig::mock()
    }
}

impl BackendConfig {
    pub fn mock() -> BackendConfig {
        BackendConfig {
            kind: BackendKind::Mock,
            endpoint: None,
            model_name: None,
            credential_env: None,
            checkpoint_path: None,
            vocab_path: None,
        }
    }

    /// Checks the kind-specific required fields.
    pub fn validate(&self) -> Result<(), BackendError> {
        match self.kind {
            BackendKind::Mock => Ok(()),
            BackendKind::Http => match &self.endpoint {
                Some(_) => Ok(()),
                None => Err(BackendError::InvalidConfig {
                    message: "http backend requires an endpoint".to_string(),
                }),
            },
            BackendKind::Toy => {
                if self.checkpoint_path.is_none() || self.vocab_path.is_none() {
                    return Err(BackendError::InvalidConfig {
                        message: "toy backend requires checkpoint_path and vocab_path".to_string(),
                    });
                }
                Ok(())
            }
        }
    }
}

/// A completion provider. Implementations are safe to share across
/// threads; `complete_batch` relies on that.
pub trait CompletionBackend: Sync {
    fn complete(
        &self,
        envelope: &PromptEnvelope,
        params: &CompletionParams,
    ) -> Result<String, BackendError>;
}

/// Keyword test double: answers "positive" if the content contains a
/// positive cue word, else "negative" on a negative cue, else
/// "neutral". Matching is on whole lowercased tokens, so "upgraded"
/// does not trigger "upgrade".
#[derive(Debug, Clone, Copy, Default)]
pub struct MockBackend;

impl CompletionBackend for MockBackend {
    fn complete(
        &self,
        envelope: &PromptEnvelope,
        params: &CompletionParams,
    ) -> Result<String, BackendError> {
        params.validate()?;
        let tokens = tokenize(&envelope.content);
        let has = |cues: &[&str]| tokens.iter().any(|t| cues.contains(&t.as_str()));
        let word = if has(&MOCK_POSITIVE_CUES) {
            "positive"
        } else if has(&MOCK_NEGATIVE_CUES) {
            "negative"
        } else {
            "neutral"
        };
        Ok(word.to_string())
    }
}

/// The locally trained model served through the common interface.
/// Decoding is greedy, so temperature is ignored.
#[derive(Debug)]
pub struct ToyBackend {
    params: ToyLMParams,
    vocab: Vocab,
}

impl ToyBackend {
    pub fn new(params: ToyLMParams, vocab: Vocab) -> ToyBackend {
        ToyBackend { params, vocab }
    }

    pub fn from_files(checkpoint_path: &Path, vocab_path: &Path) -> Result<ToyBackend, BackendError> {
        let vocab = Vocab::load(BufReader::new(File::open(vocab_path)?))?;
        let checkpoint = Checkpoint::load(BufReader::new(File::open(checkpoint_path)?))?;
        let params = checkpoint.into_params(&vocab)?;
        Ok(ToyBackend { params, vocab })
    }
}

impl CompletionBackend for ToyBackend {
    fn complete(
        &self,
        envelope: &PromptEnvelope,
        params: &CompletionParams,
    ) -> Result<String, BackendError> {
        params.validate()?;
        Ok(generate(&self.params, &self.vocab, &envelope.rendered, params.max_tokens)?)
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a str>,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
    max_tokens: usize,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatResponseMessage,
}

#[derive(Deserialize)]
struct ChatResponseMessage {
    content: String,
}

enum AttemptFailure {
    Terminal(BackendError),
    Transient(String),
}

/// Chat-completions client for any endpoint speaking the wire format
/// in the module docs. The instruction travels as the system message
/// and the content as the user message.
#[derive(Debug)]
pub struct HttpBackend {
    endpoint: String,
    model_name: Option<String>,
    credential_env: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(
        endpoint: impl Into<String>,
        model_name: Option<String>,
        credential_env: Option<String>,
    ) -> HttpBackend {
        HttpBackend {
            endpoint: endpoint.into(),
            model_name,
            credential_env,
            client: reqwest::blocking::Client::new(),
        }
    }

    fn attempt(
        &self,
        body: &ChatRequest<'_>,
        token: Option<&str>,
        timeout: Duration,
    ) -> Result<String, AttemptFailure> {
        let mut request = self.client.post(&self.endpoint).timeout(timeout).json(body);
        if let Some(token) = token {
            request = request.bearer_auth(token);
        }
        let response = request.send().map_err(|err| {
            if err.is_timeout() {
                AttemptFailure::Terminal(BackendError::Timeout {
                    elapsed_ms: timeout.as_millis(),
                })
            } else {
                AttemptFailure::Transient(format!("connection failed: {err}"))
            }
        })?;
        let status = response.status();
        match status.as_u16() {
            200..=299 => {
                let parsed: ChatResponse = response.json().map_err(|err| {
                    AttemptFailure::Terminal(BackendError::MalformedResponse {
                        message: err.to_string(),
                    })
                })?;
                match parsed.choices.into_iter().next() {
                    Some(choice) => Ok(choice.message.content),
                    None => Err(AttemptFailure::Terminal(BackendError::MalformedResponse {
                        message: "response has no choices".to_string(),
                    })),
                }
            }
            401 | 403 => Err(AttemptFailure::Terminal(BackendError::AuthFailure {
                message: format!("server answered {status}"),
            })),
            429 => Err(AttemptFailure::Transient(
                BackendError::RateLimited {
                    message: format!("server answered {status}"),
                }
                .to_string(),
            )),
            500..=599 => Err(AttemptFailure::Transient(format!("server answered {status}"))),
            _ => Err(AttemptFailure::Terminal(BackendError::InvalidConfig {
                message: format!("endpoint answered {status}"),
            })),
        }
    }
}

impl CompletionBackend for HttpBackend {
    fn complete(
        &self,
        envelope: &PromptEnvelope,
        params: &CompletionParams,
    ) -> Result<String, BackendError> {
        params.validate()?;
        let token = match &self.credential_env {
            Some(name) => Some(std::env::var(name).map_err(|_| BackendError::AuthFailure {
                message: format!("credential variable {name} is not set"),
            })?),
            None => None,
        };
        let body = ChatRequest {
            model: self.model_name.as_deref(),
            messages: vec![
                ChatMessage {
                    role: "system",
                    content: &envelope.instruction,
                },
                ChatMessage {
                    role: "user",
                    content: &envelope.content,
                },
            ],
            temperature: params.temperature,
            max_tokens: params.max_tokens,
        };
        let max_attempts = params.max_retries.saturating_add(1);
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            match self.attempt(&body, token.as_deref(), params.timeout) {
                Ok(text) => return Ok(text),
                Err(AttemptFailure::Terminal(err)) => return Err(err),
                Err(AttemptFailure::Transient(reason)) => {
                    if attempt >= max_attempts {
                        return Err(BackendError::BackendUnavailable {
                            attempts: attempt,
                            last_error: reason,
                        });
                    }
                    std::thread::sleep(RETRY_BASE_DELAY * 2u32.pow(attempt - 1));
                }
            }
        }
    }
}

/// Builds the backend a config describes.
pub fn build_backend(config: &BackendConfig) -> Result<Box<dyn CompletionBackend>, BackendError> {
    config.validate()?;
    match config.kind {
        BackendKind::Mock => Ok(Box::new(MockBackend)),
        BackendKind::Toy => {
            let checkpoint = config.checkpoint_path.as_deref().expect("validated");
            let vocab = config.vocab_path.as_deref().expect("validated");
            Ok(Box::new(ToyBackend::from_files(checkpoint, vocab)?))
        }
        BackendKind::Http => Ok(Box::new(HttpBackend::new(
            config.endpoint.clone().expect("validated"),
            config.model_name.clone(),
            config.credential_env.clone(),
        ))),
    }
}

/// One-shot completion against a config.
pub fn complete(
    envelope: &PromptEnvelope,
    config: &BackendConfig,
    params: &CompletionParams,
) -> Result<String, BackendError> {
    build_backend(config)?.complete(envelope, params)
}

/// Completes every envelope with at most `max_in_flight` calls
/// outstanding at once. Results align with the input order, and one
/// item's failure never touches its neighbors.
///
/// # Panics
///
/// Panics when `max_in_flight` is zero.
pub fn complete_batch(
    backend: &dyn CompletionBackend,
    envelopes: &[PromptEnvelope],
    params: &CompletionParams,
    max_in_flight: usize,
) -> Vec<Result<String, BackendError>> {
    assert!(max_in_flight >= 1, "max_in_flight must be at least 1");
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<String, BackendError>>>> =
        envelopes.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..max_in_flight.min(envelopes.len()) {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::Relaxed);
                if index >= envelopes.len() {
                    break;
                }
                let result = backend.complete(&envelopes[index], params);
                *slots[index].lock().expect("result slot lock") = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| {
            slot.into_inner()
                .expect("result slot lock")
                .expect("every slot is filled before the scope ends")
        })
        .collect()
}
