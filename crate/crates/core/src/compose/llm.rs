//! Completion clients: offline fixture replay, recording, a concurrency cap
//! and (with the `http` feature) a blocking HTTP transport.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const ENDPOINT_ENV: &str = "INTERACT_LLM_ENDPOINT";
pub const API_KEY_ENV: &str = "INTERACT_LLM_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub endpoint: String,
    pub model: String,
    pub prompt: String,
    pub max_tokens: u32,
}

pub trait LlmClient: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String>;
}

/// One recorded exchange, stored one per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub prompt: String,
    pub response: String,
    #[serde(default)]
    pub timestamp: serde_json::Value,
}

impl FixtureRecord {
    pub fn now(prompt: &str, response: &str) -> Self {
        let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        Self {
            prompt: prompt.to_string(),
            response: response.to_string(),
            timestamp: secs.into(),
        }
    }
}

pub fn read_fixtures(path: &Path) -> Result<Vec<FixtureRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::corrupt(path, format!("line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn append_fixture(path: &Path, record: &FixtureRecord) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{}", serde_json::to_string(record)?)?;
    Ok(())
}

/// Replays recorded responses keyed by the exact prompt text. When a prompt
/// was recorded more than once the latest record wins.
#[derive(Debug, Clone, Default)]
pub struct FixtureClient {
    responses: HashMap<String, String>,
}

impl FixtureClient {
    pub fn from_records(records: impl IntoIterator<Item = FixtureRecord>) -> Self {
        Self {
            responses: records.into_iter().map(|r| (r.prompt, r.response)).collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::from_records(read_fixtures(path)?))
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl LlmClient for FixtureClient {
    fn complete(&self, prompt: &str) -> Result<String> {
        self.responses.get(prompt).cloned().ok_or_else(|| {
            let first = prompt.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
            Error::FixtureMissing(first.to_string())
        })
    }
}

/// Wraps a live client and appends every exchange to a fixture file.
pub struct Recorder<C> {
    inner: C,
    path: PathBuf,
    lock: Mutex<()>,
}

impl<C: LlmClient> Recorder<C> {
    pub fn new(inner: C, path: impl Into<PathBuf>) -> Self {
        Self {
            inner,
            path: path.into(),
            lock: Mutex::new(()),
        }
    }
}

impl<C: LlmClient> LlmClient for Recorder<C> {
    fn complete(&self, prompt: &str) -> Result<String> {
        let response = self.inner.complete(prompt)?;
        let _g = self.lock.lock().unwrap_or_else(|e| e.into_inner());
        append_fixture(&self.path, &FixtureRecord::now(prompt, &response))?;
        Ok(response)
    }
}

/// Allows at most `max_in_flight` concurrent requests to the inner client.
pub struct Limited<C> {
    inner: C,
    max_in_flight: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

impl<C: LlmClient> Limited<C> {
    pub fn new(inner: C, max_in_flight: usize) -> Result<Self> {
        if max_in_flight == 0 {
            return Err(Error::BadArgument("concurrency cap must be at least 1".into()));
        }
        Ok(Self {
            inner,
            max_in_flight,
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        })
    }
}

struct Slot<'a> {
    count: &'a Mutex<usize>,
    freed: &'a Condvar,
}

impl Drop for Slot<'_> {
    fn drop(&mut self) {
        let mut n = self.count.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.freed.notify_one();
    }
}

impl<C: LlmClient> LlmClient for Limited<C> {
    fn complete(&self, prompt: &str) -> Result<String> {
        let _slot = {
            let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
            while *n >= self.max_in_flight {
                n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
            }
            *n += 1;
            Slot {
                count: &self.in_flight,
                freed: &self.freed,
            }
        };
        self.inner.complete(prompt)
    }
}

#[cfg(feature = "http")]
pub use http::HttpClient;

#[cfg(feature = "http")]
mod http {
    use super::*;

    /// Chat-completions style endpoint. The bearer credential comes from
    /// the environment.
    pub struct HttpClient {
        endpoint: String,
        model: String,
        max_tokens: u32,
        api_key: Option<String>,
        client: reqwest::blocking::Client,
    }

    impl HttpClient {
        pub fn from_env(model: &str, max_tokens: u32) -> Result<Self> {
            let endpoint = std::env::var(ENDPOINT_ENV)
                .map_err(|_| Error::Transport(format!("{ENDPOINT_ENV} is not set")))?;
            Ok(Self {
                endpoint,
                model: model.to_string(),
                max_tokens,
                api_key: std::env::var(API_KEY_ENV).ok(),
                client: reqwest::blocking::Client::new(),
            })
        }

        pub fn request(&self, prompt: &str) -> CompletionRequest {
            CompletionRequest {
                endpoint: self.endpoint.clone(),
                model: self.model.clone(),
                prompt: prompt.to_string(),
                max_tokens: self.max_tokens,
            }
        }
    }

    impl LlmClient for HttpClient {
        fn complete(&self, prompt: &str) -> Result<String> {
            let req = self.request(prompt);
            let body = serde_json::json!({
                "model": req.model,
                "max_tokens": req.max_tokens,
                "messages": [{"role": "user", "content": req.prompt}],
            });
            let mut builder = self.client.post(&req.endpoint).json(&body);
            if let Some(key) = &self.api_key {
                builder = builder.bearer_auth(key);
            }
            let resp = builder.send().map_err(|e| Error::Transport(e.to_string()))?;
            let status = resp.status();
            let v: serde_json::Value = resp.json().map_err(|e| Error::Transport(e.to_string()))?;
            if !status.is_success() {
                return Err(Error::Transport(format!("HTTP {status}: {v}")));
            }
            let choice = &v["choices"][0];
            choice["message"]["content"]
                .as_str()
                .or_else(|| choice["text"].as_str())
                .map(str::to_string)
                .ok_or_else(|| Error::MalformedResponse(format!("no completion text in {v}")))
        }
    }
}
