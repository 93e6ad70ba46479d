//! Tool registry and the four built-in tools: batched web search, scholarly
//! search, goal-oriented page visiting, and a sandboxed code interpreter.
//!
//! Tool failures are observations, not exceptions: [`execute`] always returns
//! a [`ToolResponse`] so the agent can see what went wrong in its next
//! workspace and route around it.

pub mod code;
pub mod transport;

use std::collections::BTreeMap;
use std::sync::mpsc;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::backend::ChatBackend;
use crate::model::{Action, SamplingParams, ToolResponse, ToolStatus};
use crate::protocol::{Message, PromptMessages};
use crate::util::truncate_chars;

pub use code::{run_code, CodeError, CodeLimits};
pub use transport::{
    fixture_key, write_fixture, HttpTransport, MockTransport, Transport, TransportError,
};

/// Hard cap on results returned per query by search and scholar.
pub const MAX_RESULTS_PER_QUERY: usize = 10;

/// Per-query outcomes of a batched search/scholar call, in query order.
pub type BatchResults<T> = Vec<(String, Result<Vec<T>, TransportError>)>;

const TRUNCATION_MARKER: &str = "\n…[truncated]";

/// Declares a tool to the registry and to the prompt renderer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub argument_schema: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchResult {
    pub title: String,
    pub snippet: String,
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScholarResult {
    pub title: String,
    pub authors: Vec<String>,
    pub venue: String,
    pub citation_count: u64,
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeRunResult {
    pub stdout: String,
    pub stderr: String,
    pub exit_status: i32,
    pub timed_out: bool,
}

/// Per-url outcome of a visit batch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisitOutcome {
    pub url: String,
    pub status: ToolStatus,
    pub summary: String,
}

#[derive(Debug, thiserror::Error)]
pub enum ToolError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty goal")]
    EmptyGoal,
    #[error("batch of {got} exceeds cap {cap}")]
    BatchTooLarge { got: usize, cap: usize },
    #[error("invalid arguments: {0}")]
    SchemaViolation(String),
}

/// Configuration shared by the registry and its tools.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolConfig {
    /// Character cap applied to every tool response before it enters a
    /// workspace.
    pub content_cap: usize,
    /// Maximum queries/urls accepted per batched call.
    pub batch_cap: usize,
    /// Record measured wall time in `latency_ms`. Off by default: byte-
    /// reproducible runs require tool responses free of wall-clock noise.
    #[serde(default)]
    pub measure_latency: bool,
    #[serde(rename = "default_timeout_ms", with = "crate::util::duration_ms")]
    pub default_timeout: Duration,
    /// Per-tool deadline overrides in milliseconds, keyed by tool name.
    #[serde(default)]
    pub timeout_overrides_ms: BTreeMap<String, u64>,
    pub sandbox: CodeLimits,
    /// Interpreter command for the code tool.
    pub interpreter: String,
    /// Maximum concurrent interpreter subprocesses.
    pub code_permits: usize,
}

impl Default for ToolConfig {
    fn default() -> Self {
        Self {
            content_cap: 4_000,
            batch_cap: 8,
            measure_latency: false,
            default_timeout: Duration::from_secs(60),
            timeout_overrides_ms: BTreeMap::new(),
            sandbox: CodeLimits::default(),
            interpreter: "python3".into(),
            code_permits: 4,
        }
    }
}

impl ToolConfig {
    pub fn deadline_for(&self, tool_name: &str) -> Duration {
        self.timeout_overrides_ms
            .get(tool_name)
            .map(|ms| Duration::from_millis(*ms))
            .unwrap_or(self.default_timeout)
    }
}

/// A registered tool. `invoke` must be total: argument problems and
/// execution failures come back as error-status responses. Implementations
/// fill `latency_ms` themselves so deterministic test doubles stay
/// byte-stable.
pub trait Tool: Send + Sync {
    fn spec(&self) -> &ToolSpec;
    fn invoke(&self, arguments: &serde_json::Value) -> ToolResponse;
}

/// Immutable tool collection; insertion order drives the prompt listing.
pub struct ToolRegistry {
    tools: Vec<Arc<dyn Tool>>,
    config: ToolConfig,
}

impl ToolRegistry {
    pub fn new(config: ToolConfig) -> Self {
        Self { tools: Vec::new(), config }
    }

    pub fn register(mut self, tool: Arc<dyn Tool>) -> Self {
        debug_assert!(
            !self.tools.iter().any(|t| t.spec().name == tool.spec().name),
            "duplicate tool name {}",
            tool.spec().name
        );
        self.tools.push(tool);
        self
    }

    /// The standard four-tool registry over one transport and one
    /// summarization backend.
    pub fn standard(
        config: ToolConfig,
        transport: Arc<dyn Transport>,
        summarizer: Arc<dyn ChatBackend>,
    ) -> Self {
        let batch_cap = config.batch_cap;
        let sandbox = config.sandbox.clone();
        let interpreter = config.interpreter.clone();
        let permits = config.code_permits;
        Self::new(config)
            .register(Arc::new(SearchTool::new(transport.clone(), batch_cap)))
            .register(Arc::new(ScholarTool::new(transport.clone(), batch_cap)))
            .register(Arc::new(VisitTool::new(transport, summarizer, batch_cap)))
            .register(Arc::new(CodeTool::new(sandbox, interpreter, permits)))
    }

    pub fn specs(&self) -> Vec<ToolSpec> {
        self.tools.iter().map(|t| t.spec().clone()).collect()
    }

    pub fn config(&self) -> &ToolConfig {
        &self.config
    }

    pub fn get(&self, name: &str) -> Option<Arc<dyn Tool>> {
        self.tools.iter().find(|t| t.spec().name == name).cloned()
    }

    /// Executes a tool-call action under the configured per-tool deadline.
    pub fn execute_action(&self, action: &Action) -> ToolResponse {
        let deadline = match action {
            Action::ToolCall { tool_name, .. } => self.config.deadline_for(tool_name),
            Action::FinalAnswer { .. } => self.config.default_timeout,
        };
        execute(action, self, deadline)
    }
}

/// Dispatches one tool call and normalizes every failure mode into a
/// [`ToolResponse`]: unknown tools and schema violations become error-status
/// observations, and a tool overrunning `deadline` becomes a timeout-status
/// observation. Never panics or propagates an error to the engine.
pub fn execute(action: &Action, registry: &ToolRegistry, deadline: Duration) -> ToolResponse {
    let (tool_name, arguments) = match action {
        Action::ToolCall { tool_name, arguments } => (tool_name.clone(), arguments.clone()),
        Action::FinalAnswer { .. } => {
            return ToolResponse::error("", "cannot execute a final answer as a tool call");
        }
    };

    let Some(tool) = registry.get(&tool_name) else {
        tracing::warn!(tool = %tool_name, "unknown tool requested");
        return ToolResponse::error(
            tool_name.clone(),
            format!("unknown tool {tool_name:?}; available tools: {}", known_tools(registry)),
        );
    };

    let (sender, receiver) = mpsc::channel();
    let started = Instant::now();
    std::thread::spawn(move || {
        let _ = sender.send(tool.invoke(&arguments));
    });

    let mut response = match receiver.recv_timeout(deadline) {
        Ok(response) => response,
        Err(_) => {
            tracing::warn!(tool = %tool_name, ?deadline, "tool call exceeded deadline");
            ToolResponse {
                tool_name: tool_name.clone(),
                status: ToolStatus::Timeout,
                content: format!(
                    "tool {tool_name:?} exceeded its {} ms deadline",
                    deadline.as_millis()
                ),
                latency_ms: deadline.as_millis() as u64,
            }
        }
    };

    if registry.config.measure_latency && response.status != ToolStatus::Timeout {
        response.latency_ms = started.elapsed().as_millis() as u64;
    }
    response.content =
        truncate_chars(&response.content, registry.config.content_cap, TRUNCATION_MARKER);
    response
}

fn known_tools(registry: &ToolRegistry) -> String {
    registry
        .tools
        .iter()
        .map(|t| t.spec().name.clone())
        .collect::<Vec<_>>()
        .join(", ")
}

fn parse_string_list(
    arguments: &serde_json::Value,
    field: &str,
) -> Result<Vec<String>, ToolError> {
    let list = arguments
        .get(field)
        .and_then(|v| v.as_array())
        .ok_or_else(|| ToolError::SchemaViolation(format!("{field:?} must be a string array")))?;
    list.iter()
        .map(|v| {
            v.as_str()
                .map(str::to_string)
                .ok_or_else(|| ToolError::SchemaViolation(format!("{field:?} entries must be strings")))
        })
        .collect()
}

fn check_batch(len: usize, cap: usize) -> Result<(), ToolError> {
    if len == 0 {
        return Err(ToolError::EmptyBatch);
    }
    if len > cap {
        return Err(ToolError::BatchTooLarge { got: len, cap });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// search
// ---------------------------------------------------------------------------

pub struct SearchTool {
    spec: ToolSpec,
    transport: Arc<dyn Transport>,
    batch_cap: usize,
}

impl SearchTool {
    pub fn new(transport: Arc<dyn Transport>, batch_cap: usize) -> Self {
        Self {
            spec: ToolSpec {
                name: "search".into(),
                description: format!(
                    "Batched web search; returns the top {MAX_RESULTS_PER_QUERY} results (title, snippet, URL) per query."
                ),
                argument_schema: serde_json::json!({
                    "type": "object",
                    "properties": {
                        "queries": {"type": "array", "items": {"type": "string"}, "minItems": 1}
                    },
                    "required": ["queries"]
                }),
            },
            transport,
            batch_cap,
        }
    }

    /// One result list per query, order preserved, each capped to the top
    /// ten. Per-query transport failures surface in the rendered content;
    /// the typed API propagates only batch-shape errors.
    pub fn run(&self, queries: &[String]) -> Result<BatchResults<SearchResult>, ToolError> {
        check_batch(queries.len(), self.batch_cap)?;
        Ok(queries
            .iter()
            .map(|q| {
                let results = self
                    .transport
                    .search(q)
                    .map(|mut r| {
                        r.truncate(MAX_RESULTS_PER_QUERY);
                        r
                    });
                (q.clone(), results)
            })
            .collect())
    }
}

fn render_search_block(results: &BatchResults<SearchResult>) -> (String, bool) {
    let mut out = String::new();
    let mut any_ok = false;
    for (query, result) in results {
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(&format!("Results for {query:?}:\n"));
        match result {
            Ok(entries) if entries.is_empty() => out.push_str("(no results)\n"),
            Ok(entries) => {
                any_ok = true;
                for (i, entry) in entries.iter().enumerate() {
                    out.push_str(&format!(
                        "{}. {} — {} ({})\n",
                        i + 1,
                        entry.title,
                        entry.snippet,
                        entry.url
                    ));
                }
            }
            Err(e) => out.push_str(&format!("(search failed: {e})\n")),
        }
    }
    (out, any_ok)
}

impl Tool for SearchTool {
    fn spec(&self) -> &ToolSpec {
        &self.spec
    }

    fn invoke(&self, arguments: &serde_json::Value) -> ToolResponse {
        let queries = match parse_string_list(arguments, "queries") {
            Ok(q) => q,
            Err(e) => return ToolResponse::error("search", e.to_string()),
        };
        match self.run(&queries) {
            Ok(results) => {
                let (content, any_ok) = render_search_block(&results);
                ToolResponse {
                    tool_name: "search".into(),
                    status: if any_ok { ToolStatus::Ok } else { ToolStatus::Error },
                    content,
                    latency_ms: 0,
                }
            }
            Err(e) => ToolResponse::error("search", e.to_string()),
        }
    }
}

// ---------------------------------------------------------------------------
// scholar
// ---------------------------------------------------------------------------

pub struct ScholarTool {
    spec: ToolSpec,
    transport: Arc<dyn Transport>,
    batch_cap: usize,
}

impl ScholarTool {
    pub fn new(transport: Arc<dyn Transport>, batch_cap: usize) -> Self {
        Self {
            spec: ToolSpec {
                name: "scholar".into(),
                description: format!(
                    "Batched academic literature search; returns up to {MAX_RESULTS_PER_QUERY} entries (title, authors, venue, citation count, URL) per query."
                ),
                argument_schema: serde_json::json!({
                    "type": "object",
                    "properties": {
                        "queries": {"type": "array", "items": {"type": "string"}, "minItems": 1}
                    },
                    "required": ["queries"]
                }),
            },
            transport,
            batch_cap,
        }
    }

    pub fn run(&self, queries: &[String]) -> Result<BatchResults<ScholarResult>, ToolError> {
        check_batch(queries.len(), self.batch_cap)?;
        Ok(queries
            .iter()
            .map(|q| {
                let results = self
                    .transport
                    .scholar(q)
                    .map(|mut r| {
                        r.truncate(MAX_RESULTS_PER_QUERY);
                        r
                    });
                (q.clone(), results)
            })
            .collect())
    }
}

impl Tool for ScholarTool {
    fn spec(&self) -> &ToolSpec {
        &self.spec
    }

    fn invoke(&self, arguments: &serde_json::Value) -> ToolResponse {
        let queries = match parse_string_list(arguments, "queries") {
            Ok(q) => q,
            Err(e) => return ToolResponse::error("scholar", e.to_string()),
        };
        let results = match self.run(&queries) {
            Ok(r) => r,
            Err(e) => return ToolResponse::error("scholar", e.to_string()),
        };
        let mut out = String::new();
        let mut any_ok = false;
        for (query, result) in &results {
            if !out.is_empty() {
                out.push('\n');
            }
            out.push_str(&format!("Scholar results for {query:?}:\n"));
            match result {
                Ok(entries) if entries.is_empty() => out.push_str("(no results)\n"),
                Ok(entries) => {
                    any_ok = true;
                    for (i, entry) in entries.iter().enumerate() {
                        out.push_str(&format!(
                            "{}. {} — {}; {}; cited {} times ({})\n",
                            i + 1,
                            entry.title,
                            entry.authors.join(", "),
                            entry.venue,
                            entry.citation_count,
                            entry.url
                        ));
                    }
                }
                Err(e) => out.push_str(&format!("(scholar search failed: {e})\n")),
            }
        }
        ToolResponse {
            tool_name: "scholar".into(),
            status: if any_ok { ToolStatus::Ok } else { ToolStatus::Error },
            content: out,
            latency_ms: 0,
        }
    }
}

// ---------------------------------------------------------------------------
// visit
// ---------------------------------------------------------------------------

pub struct VisitTool {
    spec: ToolSpec,
    transport: Arc<dyn Transport>,
    summarizer: Arc<dyn ChatBackend>,
    batch_cap: usize,
}

impl VisitTool {
    pub fn new(
        transport: Arc<dyn Transport>,
        summarizer: Arc<dyn ChatBackend>,
        batch_cap: usize,
    ) -> Self {
        Self {
            spec: ToolSpec {
                name: "visit".into(),
                description: "Fetches web pages and produces goal-oriented summaries of their content.".into(),
                argument_schema: serde_json::json!({
                    "type": "object",
                    "properties": {
                        "urls": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                        "goal": {"type": "string"}
                    },
                    "required": ["urls", "goal"]
                }),
            },
            transport,
            summarizer,
            batch_cap,
        }
    }

    /// Fetches each url and asks the summarization backend for a summary
    /// focused on `goal`. Per-url failures yield error entries without
    /// failing the batch.
    pub fn run(&self, urls: &[String], goal: &str) -> Result<Vec<VisitOutcome>, ToolError> {
        check_batch(urls.len(), self.batch_cap)?;
        if goal.trim().is_empty() {
            return Err(ToolError::EmptyGoal);
        }
        Ok(urls
            .iter()
            .map(|url| match self.transport.fetch(url) {
                Ok(content) => match self.summarize(url, goal, &content) {
                    Ok(summary) => VisitOutcome {
                        url: url.clone(),
                        status: ToolStatus::Ok,
                        summary,
                    },
                    Err(e) => VisitOutcome {
                        url: url.clone(),
                        status: ToolStatus::Error,
                        summary: format!("summarization failed: {e}"),
                    },
                },
                Err(e) => VisitOutcome {
                    url: url.clone(),
                    status: ToolStatus::Error,
                    summary: format!("fetch failed: {e}"),
                },
            })
            .collect())
    }

    fn summarize(
        &self,
        url: &str,
        goal: &str,
        content: &str,
    ) -> Result<String, crate::backend::BackendError> {
        let messages = PromptMessages::new(vec![
            Message::system(
                "You summarize web pages for a research agent. Extract only material relevant to the stated goal.",
            ),
            Message::user(format!(
                "Goal: {goal}\n\nPage content from {url}:\n{content}\n\nSummarize the page content relevant to the goal."
            )),
        ])
        .expect("static prompt shape");
        self.summarizer.complete(&messages, &SamplingParams::default())
    }
}

impl Tool for VisitTool {
    fn spec(&self) -> &ToolSpec {
        &self.spec
    }

    fn invoke(&self, arguments: &serde_json::Value) -> ToolResponse {
        let urls = match parse_string_list(arguments, "urls") {
            Ok(u) => u,
            Err(e) => return ToolResponse::error("visit", e.to_string()),
        };
        let goal = match arguments.get("goal").and_then(|v| v.as_str()) {
            Some(g) => g.to_string(),
            None => {
                return ToolResponse::error("visit", "invalid arguments: \"goal\" must be a string")
            }
        };
        let outcomes = match self.run(&urls, &goal) {
            Ok(o) => o,
            Err(e) => return ToolResponse::error("visit", e.to_string()),
        };
        let mut out = format!("Visit goal: {goal}\n");
        let mut any_ok = false;
        for outcome in &outcomes {
            any_ok |= outcome.status == ToolStatus::Ok;
            out.push_str(&format!(
                "\n[{}] {}\n{}\n",
                outcome.status, outcome.url, outcome.summary
            ));
        }
        ToolResponse {
            tool_name: "visit".into(),
            status: if any_ok { ToolStatus::Ok } else { ToolStatus::Error },
            content: out,
            latency_ms: 0,
        }
    }
}

// ---------------------------------------------------------------------------
// code
// ---------------------------------------------------------------------------

pub struct CodeTool {
    spec: ToolSpec,
    limits: CodeLimits,
    interpreter: String,
    permits: code::Permits,
}

impl CodeTool {
    pub fn new(limits: CodeLimits, interpreter: String, permits: usize) -> Self {
        Self {
            spec: ToolSpec {
                name: "code".into(),
                description: "Executes Python source in a sandboxed interpreter subprocess; only printed output is returned.".into(),
                argument_schema: serde_json::json!({
                    "type": "object",
                    "properties": {"source": {"type": "string"}},
                    "required": ["source"]
                }),
            },
            limits,
            interpreter,
            permits: code::Permits::new(permits),
        }
    }
}

impl Tool for CodeTool {
    fn spec(&self) -> &ToolSpec {
        &self.spec
    }

    fn invoke(&self, arguments: &serde_json::Value) -> ToolResponse {
        let Some(source) = arguments.get("source").and_then(|v| v.as_str()) else {
            return ToolResponse::error("code", "invalid arguments: \"source\" must be a string");
        };
        code::code_tool_response(source, &self.limits, &self.interpreter, &self.permits)
    }
}
