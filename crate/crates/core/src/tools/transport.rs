//! One transport interface behind search, scholar, and page fetching, with a
//! fixture-directory mock for deterministic tests and a thin HTTP client for
//! live use.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{ScholarResult, SearchResult};

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("no fixture for {kind} key {key:?} (looked at {path})")]
    MissingFixture { kind: &'static str, key: String, path: String },
    #[error("fixture {path} failed to parse: {detail}")]
    BadFixture { path: String, detail: String },
    #[error("http error: {0}")]
    Http(String),
    #[error("transport not configured for {0}")]
    NotConfigured(&'static str),
}

/// Back-end for the information tools. Implementations must be safe to call
/// concurrently from many trajectories.
pub trait Transport: Send + Sync {
    fn search(&self, query: &str) -> Result<Vec<SearchResult>, TransportError>;
    fn scholar(&self, query: &str) -> Result<Vec<ScholarResult>, TransportError>;
    fn fetch(&self, url: &str) -> Result<String, TransportError>;
}

/// Stable filename for a query/url fixture: first 16 hex chars of SHA-256.
pub fn fixture_key(input: &str) -> String {
    let digest = Sha256::digest(input.as_bytes());
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    hex[..16].to_string()
}

/// Deterministic transport backed by in-memory entries and/or a fixture
/// directory laid out as `search/<key>.json`, `scholar/<key>.json`, and
/// `visit/<key>.json`, one JSON file per query/url key from [`fixture_key`].
#[derive(Default)]
pub struct MockTransport {
    search_entries: Mutex<HashMap<String, Vec<SearchResult>>>,
    scholar_entries: Mutex<HashMap<String, Vec<ScholarResult>>>,
    page_entries: Mutex<HashMap<String, String>>,
    fixture_dir: Option<PathBuf>,
}

impl MockTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_dir(dir: impl Into<PathBuf>) -> Self {
        Self { fixture_dir: Some(dir.into()), ..Self::default() }
    }

    pub fn with_search(self, query: impl Into<String>, results: Vec<SearchResult>) -> Self {
        self.search_entries.lock().unwrap().insert(query.into(), results);
        self
    }

    pub fn with_scholar(self, query: impl Into<String>, results: Vec<ScholarResult>) -> Self {
        self.scholar_entries.lock().unwrap().insert(query.into(), results);
        self
    }

    pub fn with_page(self, url: impl Into<String>, content: impl Into<String>) -> Self {
        self.page_entries.lock().unwrap().insert(url.into(), content.into());
        self
    }

    fn fixture_path(&self, kind: &str, key: &str) -> Option<PathBuf> {
        self.fixture_dir
            .as_ref()
            .map(|d| d.join(kind).join(format!("{}.json", fixture_key(key))))
    }

    fn load_fixture<T: DeserializeOwned>(
        &self,
        kind: &'static str,
        key: &str,
    ) -> Result<T, TransportError> {
        let path = self.fixture_path(kind, key).ok_or(TransportError::MissingFixture {
            kind,
            key: key.to_string(),
            path: "(no fixture dir)".to_string(),
        })?;
        let text = std::fs::read_to_string(&path).map_err(|_| TransportError::MissingFixture {
            kind,
            key: key.to_string(),
            path: path.display().to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| TransportError::BadFixture {
            path: path.display().to_string(),
            detail: e.to_string(),
        })
    }
}

impl Transport for MockTransport {
    fn search(&self, query: &str) -> Result<Vec<SearchResult>, TransportError> {
        if let Some(results) = self.search_entries.lock().unwrap().get(query) {
            return Ok(results.clone());
        }
        self.load_fixture("search", query)
    }

    fn scholar(&self, query: &str) -> Result<Vec<ScholarResult>, TransportError> {
        if let Some(results) = self.scholar_entries.lock().unwrap().get(query) {
            return Ok(results.clone());
        }
        self.load_fixture("scholar", query)
    }

    fn fetch(&self, url: &str) -> Result<String, TransportError> {
        if let Some(content) = self.page_entries.lock().unwrap().get(url) {
            return Ok(content.clone());
        }
        self.load_fixture("visit", url)
    }
}

/// Writes a fixture file in the layout [`MockTransport::from_dir`] reads.
pub fn write_fixture<T: Serialize>(
    dir: &Path,
    kind: &str,
    key: &str,
    value: &T,
) -> std::io::Result<PathBuf> {
    let subdir = dir.join(kind);
    std::fs::create_dir_all(&subdir)?;
    let path = subdir.join(format!("{}.json", fixture_key(key)));
    std::fs::write(&path, serde_json::to_string_pretty(value)?)?;
    Ok(path)
}

/// Live transport: JSON POST for search/scholar endpoints and plain GET for
/// page fetching. Endpoint URLs are configuration; the expected response
/// schema matches the fixture schema, keeping vendors swappable.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
    search_url: Option<String>,
    scholar_url: Option<String>,
    api_key_env: Option<String>,
}

impl HttpTransport {
    pub fn new(
        search_url: Option<String>,
        scholar_url: Option<String>,
        api_key_env: Option<String>,
        timeout: std::time::Duration,
    ) -> Result<Self, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| TransportError::Http(e.to_string()))?;
        Ok(Self { client, search_url, scholar_url, api_key_env })
    }

    fn post_query<T: DeserializeOwned>(
        &self,
        url: &str,
        query: &str,
    ) -> Result<T, TransportError> {
        let mut request = self.client.post(url).json(&serde_json::json!({"query": query}));
        if let Some(env_name) = &self.api_key_env {
            if let Ok(key) = std::env::var(env_name) {
                request = request.bearer_auth(key);
            }
        }
        let response = request.send().map_err(|e| TransportError::Http(e.to_string()))?;
        if !response.status().is_success() {
            return Err(TransportError::Http(format!("status {}", response.status())));
        }
        response.json().map_err(|e| TransportError::Http(e.to_string()))
    }
}

impl Transport for HttpTransport {
    fn search(&self, query: &str) -> Result<Vec<SearchResult>, TransportError> {
        let url = self.search_url.as_ref().ok_or(TransportError::NotConfigured("search"))?;
        self.post_query(url, query)
    }

    fn scholar(&self, query: &str) -> Result<Vec<ScholarResult>, TransportError> {
        let url = self.scholar_url.as_ref().ok_or(TransportError::NotConfigured("scholar"))?;
        self.post_query(url, query)
    }

    fn fetch(&self, url: &str) -> Result<String, TransportError> {
        let response = self
            .client
            .get(url)
            .send()
            .map_err(|e| TransportError::Http(e.to_string()))?;
        if !response.status().is_success() {
            return Err(TransportError::Http(format!("status {}", response.status())));
        }
        response.text().map_err(|e| TransportError::Http(e.to_string()))
    }
}
