use serde::{Deserialize, Serialize};

use super::{LlmError, RatingScale};

pub const TRUNCATION_MARKER: &str = "\n\n[... article text truncated ...]";

const MONITORING_V1: &str = include_str!("../../prompts/monitoring-v1.txt");
const MONITORING_V1_VERBATIM: &str = include_str!("../../prompts/monitoring-v1-verbatim.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

/// A versioned system prompt. Construction validates, so a bad template fails
/// when configuration is loaded rather than on the first request.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    version: String,
    system_text: String,
    usefulness_scale: RatingScale,
}

impl PromptTemplate {
    pub fn new(
        version: impl Into<String>,
        system_text: impl Into<String>,
        usefulness_scale: RatingScale,
    ) -> Result<Self, LlmError> {
        let version = version.into();
        let system_text = system_text.into();
        if version.trim().is_empty() {
            return Err(LlmError::Config("prompt template version must not be empty".into()));
        }
        if system_text.trim().is_empty() {
            return Err(LlmError::Config(format!("prompt template {version:?} has empty text")));
        }
        Ok(Self {
            version,
            system_text,
            usefulness_scale,
        })
    }

    /// Shipped templates: `v1` asks for usefulness on 1-5; `v1-verbatim`
    /// keeps the original 1-10 wording and is rescaled on parse.
    pub fn builtin(version: &str) -> Result<Self, LlmError> {
        match version {
            "v1" => Self::new("v1", MONITORING_V1, RatingScale::Five),
            "v1-verbatim" => Self::new("v1-verbatim", MONITORING_V1_VERBATIM, RatingScale::Ten),
            "" => Err(LlmError::Config("prompt template version must not be empty".into())),
            other => Err(LlmError::Config(format!("unknown prompt template version {other:?}"))),
        }
    }

    pub fn builtin_versions() -> &'static [&'static str] {
        &["v1", "v1-verbatim"]
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn system_text(&self) -> &str {
        &self.system_text
    }

    pub fn usefulness_scale(&self) -> RatingScale {
        self.usefulness_scale
    }
}

/// System message with the template, then the article text as the user
/// message, cut to `max_chars` characters at a word boundary when longer.
pub fn build_prompt(article_text: &str, template: &PromptTemplate, max_chars: usize) -> Vec<ChatMessage> {
    vec![
        ChatMessage {
            role: Role::System,
            content: template.system_text.clone(),
        },
        ChatMessage {
            role: Role::User,
            content: truncate_at_word(article_text, max_chars),
        },
    ]
}

fn truncate_at_word(text: &str, max_chars: usize) -> String {
    let Some((cut, next)) = text.char_indices().nth(max_chars) else {
        return text.to_string();
    };
    let prefix = &text[..cut];
    let kept = if next.is_whitespace() {
        prefix.trim_end()
    } else {
        match prefix.rfind(char::is_whitespace) {
            Some(ws) => prefix[..ws].trim_end(),
            // A single enormous token: hard cut.
            None => prefix,
        }
    };
    format!("{kept}{TRUNCATION_MARKER}")
}
