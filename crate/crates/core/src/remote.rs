//! JSON-over-HTTP plumbing for the external embedding and summarization services.
//!
//! Providers talk to a [`Transport`] rather than to an HTTP client directly so
//! tests can substitute a scripted transport, and so offline runs can install
//! [`DenyTransport`] to prove that no request is ever attempted.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde_json::Value;

#[derive(Debug, Clone, thiserror::Error)]
pub enum TransportError {
    #[error("request to {url} failed: {message}")]
    Request { url: String, message: String },
    #[error("request to {url} returned status {status}")]
    Status { url: String, status: u16 },
    #[error("response from {url} is not valid JSON: {message}")]
    Decode { url: String, message: String },
    #[error("network access is disabled (attempted {url})")]
    Disabled { url: String },
}

pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, body: &Value, timeout: Duration) -> Result<Value, TransportError>;
}

/// Blocking HTTP transport.
#[derive(Debug, Default, Clone)]
pub struct HttpTransport;

impl Transport for HttpTransport {
    fn post_json(&self, url: &str, body: &Value, timeout: Duration) -> Result<Value, TransportError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut response = agent.post(url).send_json(body).map_err(|e| TransportError::Request {
            url: url.to_string(),
            message: e.to_string(),
        })?;
        let status = response.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(TransportError::Status {
                url: url.to_string(),
                status,
            });
        }
        response
            .body_mut()
            .read_json::<Value>()
            .map_err(|e| TransportError::Decode {
                url: url.to_string(),
                message: e.to_string(),
            })
    }
}

/// Refuses every request and counts the attempts.
#[derive(Debug, Default)]
pub struct DenyTransport {
    attempts: AtomicUsize,
}

impl DenyTransport {
    pub fn attempts(&self) -> usize {
        self.attempts.load(Ordering::SeqCst)
    }
}

impl Transport for DenyTransport {
    fn post_json(&self, url: &str, _body: &Value, _timeout: Duration) -> Result<Value, TransportError> {
        self.attempts.fetch_add(1, Ordering::SeqCst);
        Err(TransportError::Disabled { url: url.to_string() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    /// Delay before the first retry; doubles on each subsequent retry.
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_millis(250),
        }
    }
}

impl RetryPolicy {
    pub fn no_delay(max_retries: u32) -> Self {
        RetryPolicy {
            max_retries,
            base_delay: Duration::ZERO,
        }
    }
}

/// Posts with exponential backoff. A disabled transport is never retried.
pub fn post_with_retry(
    transport: &dyn Transport,
    url: &str,
    body: &Value,
    timeout: Duration,
    policy: RetryPolicy,
) -> Result<Value, TransportError> {
    let mut attempt = 0;
    loop {
        match transport.post_json(url, body, timeout) {
            Ok(v) => return Ok(v),
            Err(e @ TransportError::Disabled { .. }) => return Err(e),
            Err(e) if attempt >= policy.max_retries => return Err(e),
            Err(e) => {
                log::warn!("attempt {} failed: {e}; retrying", attempt + 1);
                let delay = policy.base_delay.saturating_mul(1 << attempt.min(16));
                if !delay.is_zero() {
                    std::thread::sleep(delay);
                }
                attempt += 1;
            }
        }
    }
}

/// Joins a base URL and a path without doubling the slash.
pub fn endpoint(base_url: &str, path: &str) -> String {
    format!("{}/{}", base_url.trim_end_matches('/'), path.trim_start_matches('/'))
}
