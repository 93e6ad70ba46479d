//! TOML run configuration: backends, engine budget, sampling, tools, and
//! harness knobs. Every key has a default so a missing file or empty table
//! still yields a runnable setup.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use research_core::backend::{BackendConfig, ChatBackend, HttpBackend, ScriptedBackend};
use research_core::corpus::GspoConfig;
use research_core::engine::EngineBudget;
use research_core::model::SamplingParams;
use research_core::tools::{HttpTransport, MockTransport, ToolConfig, ToolRegistry, Transport};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Http,
    /// Deterministic replies read from a file, one JSON string per line.
    Scripted,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendSection {
    #[serde(default)]
    pub kind: BackendKind,
    #[serde(flatten)]
    pub http: BackendConfig,
    /// Replies file for `kind = "scripted"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replies_path: Option<PathBuf>,
}

impl Default for BackendSection {
    fn default() -> Self {
        Self { kind: BackendKind::Http, http: BackendConfig::default(), replies_path: None }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportKind {
    Http,
    #[default]
    Mock,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransportSection {
    #[serde(default)]
    pub kind: TransportKind,
    /// Fixture directory for the mock transport.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scholar_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default = "default_transport_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_transport_timeout_ms() -> u64 {
    30_000
}

impl Default for TransportSection {
    fn default() -> Self {
        Self {
            kind: TransportKind::Mock,
            fixture_dir: None,
            search_url: None,
            scholar_url: None,
            api_key_env: None,
            timeout_ms: default_transport_timeout_ms(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HarnessSection {
    pub permits: usize,
    pub synthesis_permits: usize,
    pub count_forced_final: bool,
    pub strict_exact: bool,
}

impl Default for HarnessSection {
    fn default() -> Self {
        Self { permits: 4, synthesis_permits: 4, count_forced_final: true, strict_exact: true }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub backend: BackendSection,
    /// Separate backend for the synthesis agent; falls back to `backend`.
    pub synthesis_backend: Option<BackendSection>,
    /// Separate backend for the judge; falls back to `backend`.
    pub judge_backend: Option<BackendSection>,
    pub budget: EngineBudget,
    pub sampling: SamplingParams,
    pub tools: ToolConfig,
    pub transport: TransportSection,
    pub harness: HarnessSection,
    pub corpus: GspoConfig,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                toml::from_str(&text)
                    .with_context(|| format!("parsing config {}", path.display()))
            }
            None => Ok(Self::default()),
        }
    }

    /// JSON echo of the effective configuration, embedded in run reports.
    pub fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(self).unwrap_or(serde_json::Value::Null)
    }

    pub fn build_backend(&self, section: &BackendSection) -> Result<Arc<dyn ChatBackend>> {
        match section.kind {
            BackendKind::Http => {
                let backend = HttpBackend::new(section.http.clone())
                    .map_err(|e| anyhow::anyhow!("backend config: {e}"))?;
                Ok(Arc::new(backend))
            }
            BackendKind::Scripted => {
                let Some(path) = &section.replies_path else {
                    bail!("scripted backend requires replies_path");
                };
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading replies {}", path.display()))?;
                let replies: Vec<String> = text
                    .lines()
                    .filter(|l| !l.trim().is_empty())
                    .map(|l| serde_json::from_str(l).with_context(|| format!("bad reply line: {l}")))
                    .collect::<Result<_>>()?;
                Ok(Arc::new(ScriptedBackend::new(replies)))
            }
        }
    }

    pub fn research_backend(&self) -> Result<Arc<dyn ChatBackend>> {
        self.build_backend(&self.backend)
    }

    pub fn synthesis_backend(&self) -> Result<Arc<dyn ChatBackend>> {
        self.build_backend(self.synthesis_backend.as_ref().unwrap_or(&self.backend))
    }

    pub fn judge_backend(&self) -> Result<Arc<dyn ChatBackend>> {
        self.build_backend(self.judge_backend.as_ref().unwrap_or(&self.backend))
    }

    pub fn build_transport(&self) -> Result<Arc<dyn Transport>> {
        match self.transport.kind {
            TransportKind::Mock => {
                let transport = match &self.transport.fixture_dir {
                    Some(dir) => MockTransport::from_dir(dir.clone()),
                    None => MockTransport::new(),
                };
                Ok(Arc::new(transport))
            }
            TransportKind::Http => {
                let transport = HttpTransport::new(
                    self.transport.search_url.clone(),
                    self.transport.scholar_url.clone(),
                    self.transport.api_key_env.clone(),
                    Duration::from_millis(self.transport.timeout_ms),
                )
                .map_err(|e| anyhow::anyhow!("transport: {e}"))?;
                Ok(Arc::new(transport))
            }
        }
    }

    /// The standard four-tool registry wired from this configuration. The
    /// visit tool summarizes through the research backend.
    pub fn build_registry(&self) -> Result<ToolRegistry> {
        let transport = self.build_transport()?;
        let summarizer = self.research_backend()?;
        Ok(ToolRegistry::standard(self.tools.clone(), transport, summarizer))
    }
}
