//! Monitoring pipeline for keyword-alert feeds.
//!
//! Polls RSS/Atom alert feeds, fetches and cleans each new article, asks an
//! OpenAI-compatible model for a structured report of the generative-AI use
//! cases it describes, and stores deduplicated leads for review. The
//! [`eval`] module holds the metrics used to judge extraction quality
//! against annotated ground truth.

pub mod config;
pub mod digest;
pub mod eval;
pub mod feed;
pub mod fetch;
pub mod llm;
pub mod par;
pub mod retry;
pub mod runner;
pub mod schedule;
pub mod store;
pub mod text;

use chrono::{DateTime, DurationRound, TimeDelta, Utc};

pub use config::PipelineConfig;
pub use llm::{Article, UseCase};
pub use store::{LeadRecord, LeadStore, RunRecord};

/// Current time truncated to whole milliseconds, the precision stored and
/// exported everywhere.
pub fn now_millis() -> DateTime<Utc> {
    let now = Utc::now();
    now.duration_trunc(TimeDelta::milliseconds(1)).unwrap_or(now)
}
