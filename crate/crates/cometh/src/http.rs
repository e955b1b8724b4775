//! Blocking JSON-over-HTTPS with a global timeout and bounded retries.

use std::thread;
use std::time::Duration;

use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HttpError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone)]
pub struct HttpClient {
    agent: ureq::Agent,
    max_retries: u32,
    backoff: Duration,
}

impl HttpClient {
    pub fn new(timeout: Duration, max_retries: u32, backoff: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent, max_retries, backoff }
    }

    /// POSTs `body`; retries transport failures, 429 and 5xx with exponential
    /// backoff. Other statuses fail immediately.
    pub fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &Value,
    ) -> Result<Value, HttpError> {
        let mut attempt = 0;
        loop {
            attempt += 1;
            let retryable = match self.post_once(url, bearer, body) {
                Ok(v) => return Ok(v),
                Err(e @ (HttpError::Transport(_) | HttpError::RateLimited { .. })) => e,
                Err(HttpError::Status { status, body }) if status >= 500 => {
                    HttpError::Status { status, body }
                }
                Err(e) => return Err(e),
            };
            if attempt > self.max_retries {
                return Err(match retryable {
                    HttpError::RateLimited { .. } => HttpError::RateLimited { attempts: attempt },
                    other => other,
                });
            }
            thread::sleep(self.backoff * 2u32.saturating_pow(attempt - 1));
        }
    }

    fn post_once(&self, url: &str, bearer: Option<&str>, body: &Value) -> Result<Value, HttpError> {
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(key) = bearer {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| HttpError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 {
            return Err(HttpError::RateLimited { attempts: 1 });
        }
        if !(200..300).contains(&status) {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(HttpError::Status { status, body });
        }
        resp.body_mut().read_json::<Value>().map_err(|e| HttpError::Malformed(e.to_string()))
    }
}
