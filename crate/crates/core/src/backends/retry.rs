use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::BackendError;

/// Bounded retries with exponential backoff.
///
/// Transport failures and HTTP 408, 429 and 5xx are retried; every other
/// error surfaces on the first attempt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            backoff_base_ms: 250,
            backoff_max_ms: 8_000,
        }
    }
}

impl RetryPolicy {
    pub fn new(max_attempts: u32, backoff_base: Duration) -> Self {
        RetryPolicy {
            max_attempts,
            backoff_base_ms: backoff_base.as_millis() as u64,
            ..RetryPolicy::default()
        }
    }

    pub fn check(&self) -> Result<(), BackendError> {
        if self.max_attempts == 0 {
            return Err(BackendError::Config("retry.max_attempts must be at least 1".into()));
        }
        Ok(())
    }

    pub fn retries_status(&self, status: u16) -> bool {
        matches!(status, 408 | 429 | 500..=599)
    }

    /// Delay after failed attempt number `attempt` (1-based).
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u64 << attempt.saturating_sub(1).min(20);
        Duration::from_millis(
            self.backoff_base_ms
                .saturating_mul(factor)
                .min(self.backoff_max_ms),
        )
    }

    /// Runs `op` until it succeeds, fails with a non-retryable error, or the
    /// attempt budget is spent. Returns the outcome with the attempts used.
    pub fn run<T>(
        &self,
        mut op: impl FnMut(u32) -> Result<T, BackendError>,
    ) -> (Result<T, BackendError>, u32) {
        let max = self.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            match op(attempt) {
                Ok(v) => return (Ok(v), attempt),
                Err(e) if attempt < max && e.is_retryable(self) => {
                    tracing::debug!(attempt, error = %e, "retrying backend request");
                    std::thread::sleep(self.delay(attempt));
                    attempt += 1;
                }
                Err(e) => return (Err(e), attempt),
            }
        }
    }
}
