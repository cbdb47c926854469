//! Shared HTTP plumbing: agent construction and a retry loop with
//! exponential backoff that honors `Retry-After`.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use ureq::Agent;

#[derive(Debug, thiserror::Error)]
pub enum HttpError {
    #[error("authentication rejected (status {status}): {body}")]
    Auth { status: u16, body: String },
    #[error("request failed (status {status}): {body}")]
    Status { status: u16, body: String },
    #[error("transient failure after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("malformed reply: {0}")]
    MalformedReply(String),
}

impl HttpError {
    pub fn is_auth(&self) -> bool {
        matches!(self, HttpError::Auth { .. })
    }
}

/// Exponential backoff: `base_delay * 2^attempt`, capped at `max_delay`.
/// A `Retry-After` header, when present, overrides the computed delay.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(8),
        }
    }
}

impl RetryPolicy {
    /// Fast policy for tests: no real sleeping.
    pub fn immediate(max_retries: u32) -> Self {
        RetryPolicy {
            max_retries,
            base_delay: Duration::from_millis(1),
            max_delay: Duration::from_millis(2),
        }
    }

    fn delay(&self, attempt: u32, retry_after: Option<Duration>) -> Duration {
        if let Some(d) = retry_after {
            return d.min(self.max_delay);
        }
        let factor = 1u32 << attempt.min(16);
        (self.base_delay * factor).min(self.max_delay)
    }
}

/// Counts retries performed, for run manifests.
#[derive(Debug, Clone, Default)]
pub struct RetryCounter(Arc<AtomicU64>);

impl RetryCounter {
    pub fn count(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }

    fn bump(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }
}

pub fn agent(timeout: Duration) -> Agent {
    Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(timeout))
        .build()
        .new_agent()
}

fn retry_after(headers: &ureq::http::HeaderMap) -> Option<Duration> {
    headers
        .get("retry-after")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<u64>().ok())
        .map(Duration::from_secs)
}

enum AttemptOutcome {
    Done(String),
    Retry {
        message: String,
        retry_after: Option<Duration>,
    },
}

fn classify(
    result: Result<ureq::http::Response<ureq::Body>, ureq::Error>,
) -> Result<AttemptOutcome, HttpError> {
    match result {
        Ok(mut response) => {
            let status = response.status().as_u16();
            let after = retry_after(response.headers());
            let body = response
                .body_mut()
                .read_to_string()
                .unwrap_or_else(|e| format!("<unreadable body: {e}>"));
            match status {
                200..=299 => Ok(AttemptOutcome::Done(body)),
                401 | 403 => Err(HttpError::Auth { status, body }),
                408 | 429 | 500..=599 => Ok(AttemptOutcome::Retry {
                    message: format!("status {status}: {body}"),
                    retry_after: after,
                }),
                _ => Err(HttpError::Status { status, body }),
            }
        }
        // Connect failures, timeouts and mid-stream IO errors are transient.
        Err(e) => Ok(AttemptOutcome::Retry {
            message: e.to_string(),
            retry_after: None,
        }),
    }
}

fn run_with_retry(
    policy: &RetryPolicy,
    counter: Option<&RetryCounter>,
    mut attempt_fn: impl FnMut() -> Result<ureq::http::Response<ureq::Body>, ureq::Error>,
) -> Result<String, HttpError> {
    let mut last = String::new();
    for attempt in 0..=policy.max_retries {
        match classify(attempt_fn())? {
            AttemptOutcome::Done(body) => return Ok(body),
            AttemptOutcome::Retry {
                message,
                retry_after,
            } => {
                last = message;
                if attempt < policy.max_retries {
                    if let Some(c) = counter {
                        c.bump();
                    }
                    std::thread::sleep(policy.delay(attempt, retry_after));
                }
            }
        }
    }
    Err(HttpError::Exhausted {
        attempts: policy.max_retries + 1,
        last,
    })
}

/// POSTs a JSON body, retrying transient failures, and parses the reply as
/// JSON. Bearer auth when a token is given.
pub fn post_json_with_retry(
    agent: &Agent,
    url: &str,
    token: Option<&str>,
    body: &serde_json::Value,
    policy: &RetryPolicy,
    counter: Option<&RetryCounter>,
) -> Result<serde_json::Value, HttpError> {
    let text = run_with_retry(policy, counter, || {
        let mut request = agent.post(url);
        if let Some(token) = token {
            request = request.header("authorization", format!("Bearer {token}"));
        }
        request.send_json(body)
    })?;
    serde_json::from_str(&text).map_err(|e| HttpError::MalformedReply(format!("{e}: {text}")))
}

/// GETs a URL with optional headers, retrying transient failures.
pub fn get_with_retry(
    agent: &Agent,
    url: &str,
    headers: &[(&str, &str)],
    policy: &RetryPolicy,
    counter: Option<&RetryCounter>,
) -> Result<String, HttpError> {
    run_with_retry(policy, counter, || {
        let mut request = agent.get(url);
        for (name, value) in headers {
            request = request.header(*name, *value);
        }
        request.call()
    })
}
