//! Prompt assembly, chat-completion requests and validation of the structured
//! article report returned by the model.

mod client;
mod parse;
mod prompt;
pub mod schema;

use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use client::{completion_body, extract_article, LlmClient, ModelConfig, RawCompletion};
pub use parse::{normalize_rating, parse_article_output, ParseOptions, ParsedArticle, RatingScale};
pub use prompt::{build_prompt, ChatMessage, PromptTemplate, Role, TRUNCATION_MARKER};

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("credential rejected by endpoint (HTTP {status})")]
    Credential { status: u16 },
    #[error("model request failed after {attempts} attempt(s): {reason}")]
    RetriesExhausted { attempts: u32, reason: String },
    #[error("model request rejected: {0}")]
    Rejected(String),
    #[error("model output is not JSON: {0}")]
    NotJson(String),
    #[error("model output violates the article schema at {path}: {reason}")]
    Schema { path: String, reason: String },
}

impl LlmError {
    /// Errors that must stop the whole run rather than just one article.
    pub fn is_fatal(&self) -> bool {
        matches!(self, LlmError::Credential { .. } | LlmError::Config(_))
    }
}

/// One generative-AI use case found in an article.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UseCase {
    pub name: String,
    pub description: String,
    pub ai_model_used: Option<String>,
    pub strengths: String,
    pub challenges: String,
    pub newsroom_impact: String,
    pub link_to_demo: Option<String>,
    pub is_original: bool,
    pub comparison_to_other_use_cases: Option<String>,
    /// Always within `[1, 5]`.
    pub newsworthiness_rating: f64,
}

/// Structured report for one article. `use_cases` may be empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Article {
    pub summary: String,
    /// Always within `[1, 5]`.
    pub usefulness_rating: f64,
    pub use_cases: Vec<UseCase>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionResult {
    pub article: Article,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub latency: Duration,
    /// Model message content exactly as received.
    pub raw_response: String,
    pub attempts: u32,
    /// A rating was rescaled or clamped during validation.
    pub ratings_adjusted: bool,
}
