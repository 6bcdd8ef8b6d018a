//! Blocking JSON-over-HTTP plumbing shared by the remote completion backend
//! and the remote scorers.

use serde::{de::DeserializeOwned, Serialize};
use std::sync::{Condvar, Mutex};
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RemoteError {
    #[error("request to {url} failed: {detail}")]
    Transport { url: String, detail: String },
    #[error("{url} returned HTTP {status}: {body}")]
    Status { url: String, status: u16, body: String },
    #[error("{url} returned an unexpected body: {detail}")]
    Body { url: String, detail: String },
    #[error("{0}")]
    Protocol(String),
}

/// Caps the number of concurrent requests issued through it.
#[derive(Debug)]
pub struct InFlightLimit {
    max: usize,
    current: Mutex<usize>,
    freed: Condvar,
}

pub struct InFlightGuard<'a> {
    limit: &'a InFlightLimit,
}

impl InFlightLimit {
    pub fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            current: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> InFlightGuard<'_> {
        let mut n = self.current.lock().expect("limiter poisoned");
        while *n >= self.max {
            n = self.freed.wait(n).expect("limiter poisoned");
        }
        *n += 1;
        InFlightGuard { limit: self }
    }

    pub fn in_flight(&self) -> usize {
        *self.current.lock().expect("limiter poisoned")
    }
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.limit.current.lock().expect("limiter poisoned");
        *n -= 1;
        self.limit.freed.notify_one();
    }
}

/// A JSON endpoint client with optional bearer auth and a concurrency cap.
#[derive(Debug)]
pub struct JsonClient {
    base_url: String,
    bearer: Option<String>,
    http: reqwest::blocking::Client,
    limit: InFlightLimit,
}

impl JsonClient {
    pub fn new(base_url: &str, bearer: Option<String>, timeout: Duration, max_in_flight: usize) -> Result<Self, RemoteError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| RemoteError::Transport {
                url: base_url.to_string(),
                detail: e.to_string(),
            })?;
        Ok(Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            bearer,
            http,
            limit: InFlightLimit::new(max_in_flight),
        })
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    pub fn post<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R, RemoteError> {
        let url = format!("{}{}", self.base_url, path);
        let _slot = self.limit.acquire();
        let mut req = self.http.post(&url).json(body);
        if let Some(token) = &self.bearer {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| RemoteError::Transport {
            url: url.clone(),
            detail: e.to_string(),
        })?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(RemoteError::Status {
                url,
                status: status.as_u16(),
                body,
            });
        }
        resp.json::<R>().map_err(|e| RemoteError::Body {
            url,
            detail: e.to_string(),
        })
    }
}
