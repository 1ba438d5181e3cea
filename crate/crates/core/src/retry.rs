//! Bounded exponential backoff shared by the fetch and LLM clients.

use std::time::Duration;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    /// Total attempts including the first one.
    pub max_attempts: u32,
    #[serde(with = "crate::config::duration_ms")]
    pub base_delay: Duration,
    pub factor: f64,
    /// Upper bound on any single wait, including server-advised ones.
    #[serde(with = "crate::config::duration_ms")]
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_secs(1),
            factor: 2.0,
            max_delay: Duration::from_secs(60),
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt number `attempt + 1`, where `attempt` counts from 1.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let exp = self.factor.powi(attempt.saturating_sub(1) as i32);
        let secs = self.base_delay.as_secs_f64() * exp;
        Duration::from_secs_f64(secs.min(self.max_delay.as_secs_f64()))
    }

    /// Prefer a server-advised delay when one was given, capped at `max_delay`.
    pub fn delay_for(&self, attempt: u32, advised: Option<Duration>) -> Duration {
        match advised {
            Some(d) => d.min(self.max_delay),
            None => self.backoff(attempt),
        }
    }

    /// No waiting between attempts. Useful in tests.
    pub fn immediate(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            base_delay: Duration::ZERO,
            factor: 1.0,
            max_delay: Duration::ZERO,
        }
    }
}

/// Parse a `Retry-After` header given in seconds. HTTP-date forms are ignored.
pub fn parse_retry_after(value: &str) -> Option<Duration> {
    let secs: f64 = value.trim().parse().ok()?;
    (secs.is_finite() && secs >= 0.0).then(|| Duration::from_secs_f64(secs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn doubling_from_one_second() {
        let p = RetryPolicy::default();
        assert_eq!(p.backoff(1), Duration::from_secs(1));
        assert_eq!(p.backoff(2), Duration::from_secs(2));
        assert_eq!(p.backoff(3), Duration::from_secs(4));
    }

    #[test]
    fn advised_delay_wins_but_is_capped() {
        let p = RetryPolicy::default();
        assert_eq!(p.delay_for(1, Some(Duration::from_secs(5))), Duration::from_secs(5));
        assert_eq!(p.delay_for(1, Some(Duration::from_secs(600))), Duration::from_secs(60));
        assert_eq!(parse_retry_after(" 3 "), Some(Duration::from_secs(3)));
        assert_eq!(parse_retry_after("Wed, 21 Oct 2015 07:28:00 GMT"), None);
    }
}
