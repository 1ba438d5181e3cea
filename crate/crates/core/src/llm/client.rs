use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::schema::{article_schema, ResponseFormat};
use super::{
    build_prompt, parse_article_output, ChatMessage, ExtractionResult, LlmError, ParseOptions, PromptTemplate, Role,
};
use crate::config::duration_ms;
use crate::retry::{parse_retry_after, RetryPolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub model_name: String,
    /// Full chat-completions URL.
    pub endpoint_url: String,
    pub max_output_tokens: u32,
    #[serde(with = "duration_ms")]
    pub request_timeout: Duration,
    /// `None` leaves the provider default in place.
    pub temperature: Option<f64>,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    /// Send a JSON-schema `response_format`. When off, a JSON-only
    /// instruction is appended to the system message instead.
    pub structured_output: bool,
    /// Article text beyond this many characters is cut.
    pub max_input_chars: usize,
    pub max_concurrent: usize,
    pub retry: RetryPolicy,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            model_name: "o3".into(),
            endpoint_url: "https://api.openai.com/v1/chat/completions".into(),
            max_output_tokens: 16_000,
            request_timeout: Duration::from_secs(300),
            temperature: None,
            api_key_env: "OPENAI_API_KEY".into(),
            structured_output: true,
            max_input_chars: 30_000,
            max_concurrent: 4,
            retry: RetryPolicy::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.model_name.trim().is_empty() {
            return Err(LlmError::Config("model_name must not be empty".into()));
        }
        url::Url::parse(&self.endpoint_url)
            .map_err(|e| LlmError::Config(format!("endpoint_url {:?}: {e}", self.endpoint_url)))?;
        if self.max_output_tokens == 0 {
            return Err(LlmError::Config("max_output_tokens must be positive".into()));
        }
        if self.max_input_chars == 0 {
            return Err(LlmError::Config("max_input_chars must be positive".into()));
        }
        if self.retry.max_attempts == 0 {
            return Err(LlmError::Config("retry.max_attempts must be at least 1".into()));
        }
        Ok(())
    }
}

/// Content and accounting of one successful completion.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCompletion {
    pub content: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub attempts: u32,
    pub latency: Duration,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    max_completion_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    temperature: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    response_format: Option<ResponseFormat>,
}

#[derive(Deserialize)]
struct ChatResponse {
    #[serde(default)]
    choices: Vec<Choice>,
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    content: Option<String>,
    refusal: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

enum Attempt {
    Done(RawCompletion),
    Retry { reason: String, advised: Option<Duration> },
    Fail(LlmError),
}

pub struct LlmClient {
    http: reqwest::blocking::Client,
    config: ModelConfig,
    api_key: Option<String>,
}

impl LlmClient {
    /// Client reading its credential from `config.api_key_env`.
    pub fn new(config: ModelConfig) -> Result<Self, LlmError> {
        let key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        if key.is_none() {
            tracing::warn!(var = %config.api_key_env, "no API key in environment; requests are unauthenticated");
        }
        Self::with_api_key(config, key)
    }

    pub fn with_api_key(config: ModelConfig, api_key: Option<String>) -> Result<Self, LlmError> {
        config.validate()?;
        let http = reqwest::blocking::Client::builder()
            .timeout(config.request_timeout)
            .build()
            .map_err(|e| LlmError::Config(format!("http client: {e}")))?;
        Ok(Self { http, config, api_key })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Issue one chat completion, retrying transient failures. Returns the
    /// message content untouched.
    pub fn request_extraction(&self, messages: &[ChatMessage]) -> Result<RawCompletion, LlmError> {
        let mut messages = messages.to_vec();
        let response_format = if self.config.structured_output {
            Some(ResponseFormat::article())
        } else {
            append_json_instruction(&mut messages);
            None
        };
        let body = ChatRequest {
            model: &self.config.model_name,
            messages: &messages,
            max_completion_tokens: self.config.max_output_tokens,
            temperature: self.config.temperature,
            response_format,
        };
        let body = serde_json::to_vec(&body).map_err(|e| LlmError::Config(e.to_string()))?;

        let started = Instant::now();
        let policy = &self.config.retry;
        let mut attempt = 1;
        loop {
            match self.attempt(&body, attempt, started) {
                Attempt::Done(done) => return Ok(done),
                Attempt::Fail(err) => return Err(err),
                Attempt::Retry { reason, advised } => {
                    if attempt >= policy.max_attempts {
                        return Err(LlmError::RetriesExhausted {
                            attempts: attempt,
                            reason,
                        });
                    }
                    let wait = policy.delay_for(attempt, advised);
                    tracing::info!(attempt, ?wait, %reason, "retrying model request");
                    std::thread::sleep(wait);
                    attempt += 1;
                }
            }
        }
    }

    fn attempt(&self, body: &[u8], attempt: u32, started: Instant) -> Attempt {
        let mut req = self
            .http
            .post(&self.config.endpoint_url)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_vec());
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) => {
                return Attempt::Retry {
                    reason: e.to_string(),
                    advised: None,
                }
            }
        };
        let status = resp.status().as_u16();
        let advised = retry_after(resp.headers());
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) => {
                return Attempt::Retry {
                    reason: format!("reading response: {e}"),
                    advised: None,
                }
            }
        };
        match status {
            200..=299 => {}
            401 | 403 => return Attempt::Fail(LlmError::Credential { status }),
            408 | 409 | 429 | 500..=599 => {
                return Attempt::Retry {
                    reason: format!("HTTP {status}"),
                    advised,
                }
            }
            _ => return Attempt::Fail(LlmError::Rejected(format!("HTTP {status}: {}", snippet(&text)))),
        }

        let parsed: ChatResponse = match serde_json::from_str(&text) {
            Ok(p) => p,
            Err(e) => return Attempt::Fail(LlmError::Rejected(format!("malformed completion body: {e}"))),
        };
        let Some(choice) = parsed.choices.into_iter().next() else {
            return Attempt::Fail(LlmError::Rejected("completion has no choices".into()));
        };
        if let Some(refusal) = choice.message.refusal.filter(|r| !r.is_empty()) {
            return Attempt::Fail(LlmError::Rejected(format!("model refused: {}", snippet(&refusal))));
        }
        let Some(content) = choice.message.content else {
            return Attempt::Fail(LlmError::Rejected("completion has no message content".into()));
        };
        let usage = parsed.usage.unwrap_or(Usage {
            prompt_tokens: 0,
            completion_tokens: 0,
        });
        Attempt::Done(RawCompletion {
            content,
            input_tokens: usage.prompt_tokens,
            output_tokens: usage.completion_tokens,
            attempts: attempt,
            latency: started.elapsed(),
        })
    }
}

fn retry_after(headers: &reqwest::header::HeaderMap) -> Option<Duration> {
    if let Some(ms) = headers
        .get("retry-after-ms")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<f64>().ok())
        .filter(|v| v.is_finite() && *v >= 0.0)
    {
        return Some(Duration::from_secs_f64(ms / 1000.0));
    }
    headers
        .get(reqwest::header::RETRY_AFTER)
        .and_then(|v| v.to_str().ok())
        .and_then(parse_retry_after)
}

fn snippet(s: &str) -> String {
    s.chars().take(200).collect()
}

fn append_json_instruction(messages: &mut [ChatMessage]) {
    let line = format!(
        "\n\nRespond with a single JSON object and nothing else. It must conform to this JSON Schema:\n{}",
        article_schema()
    );
    if let Some(system) = messages.iter_mut().find(|m| m.role == Role::System) {
        system.content.push_str(&line);
    }
}

/// Prompt, request and validate one article.
pub fn extract_article(
    client: &LlmClient,
    article_text: &str,
    template: &PromptTemplate,
) -> Result<ExtractionResult, LlmError> {
    let messages = build_prompt(article_text, template, client.config.max_input_chars);
    let raw = client.request_extraction(&messages)?;
    let parsed = parse_article_output(
        &raw.content,
        ParseOptions {
            usefulness_scale: template.usefulness_scale(),
        },
    )?;
    Ok(ExtractionResult {
        article: parsed.article,
        input_tokens: raw.input_tokens,
        output_tokens: raw.output_tokens,
        latency: raw.latency,
        raw_response: raw.content,
        attempts: raw.attempts,
        ratings_adjusted: parsed.adjusted,
    })
}

/// Wrap `content` in a minimal chat-completions response body.
pub fn completion_body(content: &str, input_tokens: u64, output_tokens: u64) -> String {
    let v: Value = serde_json::json!({
        "id": "chatcmpl-fixture",
        "object": "chat.completion",
        "choices": [{ "index": 0, "finish_reason": "stop",
                      "message": { "role": "assistant", "content": content } }],
        "usage": { "prompt_tokens": input_tokens, "completion_tokens": output_tokens,
                   "total_tokens": input_tokens + output_tokens }
    });
    v.to_string()
}
