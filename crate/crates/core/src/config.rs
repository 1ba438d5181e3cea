//! Pipeline configuration file (JSON).

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use chrono::NaiveTime;
use serde::{Deserialize, Serialize};

use crate::digest::DigestFormat;
use crate::feed::{default_redirectors, validate_feeds, FeedSpec, Redirector};
use crate::fetch::FetchPolicy;
use crate::llm::{ModelConfig, PromptTemplate, RatingScale};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot parse config {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Durations as integer milliseconds.
pub mod duration_ms {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

/// Daily run time, `HH:MM` in UTC.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduleTime(NaiveTime);

impl ScheduleTime {
    pub fn time(self) -> NaiveTime {
        self.0
    }
}

impl FromStr for ScheduleTime {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ConfigError::Invalid(format!("schedule {s:?} is not HH:MM"));
        let (h, m) = s.split_once(':').ok_or_else(bad)?;
        if h.len() != 2 || m.len() != 2 {
            return Err(bad());
        }
        let h: u32 = h.parse().map_err(|_| bad())?;
        let m: u32 = m.parse().map_err(|_| bad())?;
        NaiveTime::from_hms_opt(h, m, 0).map(ScheduleTime).ok_or_else(bad)
    }
}

impl fmt::Display for ScheduleTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.format("%H:%M"))
    }
}

impl Serialize for ScheduleTime {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ScheduleTime {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DigestDefaults {
    pub threshold: f64,
    pub format: DigestFormat,
    pub include_duplicates: bool,
}

impl Default for DigestDefaults {
    fn default() -> Self {
        Self {
            threshold: 4.0,
            format: DigestFormat::Markdown,
            include_duplicates: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub feeds: Vec<FeedSpec>,
    pub redirectors: Vec<Redirector>,
    #[serde(with = "duration_ms")]
    pub feed_timeout: Duration,
    pub fetch: FetchPolicy,
    pub model: ModelConfig,
    /// Built-in template version, ignored when `prompt_file` is set.
    pub prompt_version: String,
    /// Custom template text; its version label is `prompt_version`.
    pub prompt_file: Option<PathBuf>,
    pub prompt_usefulness_scale: RatingScale,
    pub dedup_theta: f64,
    pub digest: DigestDefaults,
    pub schedule: ScheduleTime,
    /// USD per million tokens.
    pub price_per_million_input: f64,
    pub price_per_million_output: f64,
    /// Relative paths are resolved against the config file's directory.
    pub database_path: PathBuf,
    pub log_path: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            feeds: Vec::new(),
            redirectors: default_redirectors(),
            feed_timeout: Duration::from_secs(30),
            fetch: FetchPolicy::default(),
            model: ModelConfig::default(),
            prompt_version: "v1".into(),
            prompt_file: None,
            prompt_usefulness_scale: RatingScale::Five,
            dedup_theta: crate::store::DEFAULT_THETA,
            digest: DigestDefaults::default(),
            schedule: ScheduleTime(NaiveTime::from_hms_opt(7, 0, 0).unwrap()),
            price_per_million_input: 2.0,
            price_per_million_output: 8.0,
            database_path: "leadwatch.db".into(),
            log_path: "leadwatch-log.jsonl".into(),
        }
    }
}

/// Keyword combinations of the shipped alert feeds.
pub const DEFAULT_FEED_KEYWORDS: &[&[&str]] = &[
    &["AI", "Journalism"],
    &["AI", "Journalism", "Use Cases"],
    &["AI", "Newsroom", "Use Cases"],
    &["Generative AI", "Journalism"],
    &["Generative AI", "Journalism", "Use Cases"],
    &["Generative AI", "Newsroom"],
    &["Generative AI", "Newsroom", "Use Cases"],
];

impl PipelineConfig {
    /// Starter configuration: one disabled placeholder feed per keyword
    /// combination. Each URL must be replaced with the real alert feed URL.
    pub fn starter() -> Self {
        let feeds = DEFAULT_FEED_KEYWORDS
            .iter()
            .enumerate()
            .map(|(i, kw)| FeedSpec {
                id: kw.join("-").to_lowercase().replace(' ', "-"),
                url: format!("https://www.google.com/alerts/feeds/REPLACE_ME/{}", i + 1),
                keywords: kw.iter().map(|k| k.to_string()).collect(),
                enabled: false,
            })
            .collect();
        Self {
            feeds,
            ..Self::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.into(),
            source,
        })?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.into(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.database_path, &mut self.log_path] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(p) = self.prompt_file.as_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn fmt::Display| ConfigError::Invalid(e.to_string());
        validate_feeds(&self.feeds).map_err(|e| invalid(&e))?;
        self.model.validate().map_err(|e| invalid(&e))?;
        self.prompt_template()?;
        if !(0.0..=1.0).contains(&self.dedup_theta) {
            return Err(ConfigError::Invalid(format!(
                "dedup_theta {} outside [0, 1]",
                self.dedup_theta
            )));
        }
        if !(1.0..=5.0).contains(&self.digest.threshold) {
            return Err(ConfigError::Invalid(format!(
                "digest threshold {} outside [1, 5]",
                self.digest.threshold
            )));
        }
        for (name, price) in [
            ("price_per_million_input", self.price_per_million_input),
            ("price_per_million_output", self.price_per_million_output),
        ] {
            if !price.is_finite() || price < 0.0 {
                return Err(ConfigError::Invalid(format!("{name} must be a non-negative number")));
            }
        }
        if self.fetch.max_concurrent == 0 || self.model.max_concurrent == 0 {
            return Err(ConfigError::Invalid("concurrency limits must be at least 1".into()));
        }
        Ok(())
    }

    pub fn prompt_template(&self) -> Result<PromptTemplate, ConfigError> {
        let invalid = |e: crate::llm::LlmError| ConfigError::Invalid(e.to_string());
        match &self.prompt_file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
                    path: path.clone(),
                    source,
                })?;
                PromptTemplate::new(&self.prompt_version, text, self.prompt_usefulness_scale).map_err(invalid)
            }
            None => PromptTemplate::builtin(&self.prompt_version).map_err(invalid),
        }
    }

    /// Cost in USD of the given token totals at the configured prices.
    pub fn cost(&self, input_tokens: u64, output_tokens: u64) -> f64 {
        input_tokens as f64 * self.price_per_million_input / 1e6
            + output_tokens as f64 * self.price_per_million_output / 1e6
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_parsing() {
        assert_eq!("07:30".parse::<ScheduleTime>().unwrap().to_string(), "07:30");
        for bad in ["7:30", "24:00", "12:60", "1230", "ab:cd", ""] {
            assert!(bad.parse::<ScheduleTime>().is_err(), "{bad}");
        }
    }

    #[test]
    fn starter_round_trips_and_validates() {
        let cfg = PipelineConfig::starter();
        assert_eq!(cfg.feeds.len(), 7);
        cfg.validate().unwrap();
        let back: PipelineConfig = serde_json::from_str(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let cfg: PipelineConfig =
            serde_json::from_str(r#"{"schedule": "06:15", "model": {"model_name": "gpt-4.1"}}"#).unwrap();
        assert_eq!(cfg.schedule.to_string(), "06:15");
        assert_eq!(cfg.model.model_name, "gpt-4.1");
        assert_eq!(cfg.model.max_concurrent, 4);
        assert_eq!(cfg.fetch.min_words, 50);
    }

    #[test]
    fn invalid_values_rejected() {
        let cfg = PipelineConfig {
            dedup_theta: 1.5,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = PipelineConfig {
            prompt_version: String::new(),
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig::default();
        cfg.model.model_name = " ".into();
        assert!(cfg.validate().is_err());
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"schedule": "25:00"}"#).is_err());
    }

    #[test]
    fn cost_is_linear_in_tokens() {
        let cfg = PipelineConfig::default();
        assert!((cfg.cost(1_000_000, 500_000) - (2.0 + 4.0)).abs() < 1e-12);
    }
}
