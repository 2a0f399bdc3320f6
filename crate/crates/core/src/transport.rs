//! Blocking JSON-over-HTTP transport shared by the chat, embedding and
//! synthesis clients. Tests swap in their own implementation of
//! [`JsonTransport`] to record request bodies or inject failures.

use std::time::Duration;

/// Environment variable holding the bearer token for remote backends.
pub const API_KEY_ENV: &str = "FS_TTS_API_KEY";

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum TransportError {
    #[error("request to {url} failed: {message}")]
    Request { url: String, message: String },
    #[error("{url} returned HTTP {status}")]
    Status { url: String, status: u16 },
    #[error("malformed response from {url}: {message}")]
    MalformedResponse { url: String, message: String },
}

/// POSTs a JSON body and returns the raw response body.
pub trait JsonTransport: Send + Sync {
    fn post_json(&self, url: &str, body: &str, timeout: Duration) -> Result<String, TransportError>;
}

#[derive(Debug, Clone, Default)]
pub struct HttpTransport {
    bearer: Option<String>,
}

impl HttpTransport {
    pub fn new(bearer: Option<String>) -> Self {
        Self { bearer }
    }

    /// Picks up the token from [`API_KEY_ENV`] when it is set and non-empty.
    pub fn from_env() -> Self {
        let bearer = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self { bearer }
    }
}

impl JsonTransport for HttpTransport {
    fn post_json(&self, url: &str, body: &str, timeout: Duration) -> Result<String, TransportError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        let mut req = agent.post(url).header("Content-Type", "application/json");
        if let Some(token) = &self.bearer {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let mut resp = req.send(body).map_err(|e| match e {
            ureq::Error::StatusCode(status) => TransportError::Status {
                url: url.to_string(),
                status,
            },
            other => TransportError::Request {
                url: url.to_string(),
                message: other.to_string(),
            },
        })?;
        resp.body_mut()
            .read_to_string()
            .map_err(|e| TransportError::Request {
                url: url.to_string(),
                message: e.to_string(),
            })
    }
}

/// Joins a base endpoint and a path segment with exactly one slash.
pub fn join_url(base: &str, path: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), path.trim_start_matches('/'))
}
