//! The wire format: renders a [`Workspace`] into prompt messages and parses
//! raw model text back into a [`RoundResponse`].
//!
//! This module is the single place the tag grammar lives. The grammar is
//! documented in `PROTOCOL.md` at the repository root; the prompt templates
//! are shipped as data files under `assets/` and compiled in. Everything here
//! is a pure function: identical inputs render byte-identical output.

use serde::{Deserialize, Serialize};

use crate::model::{workspace_violations, Action, RoundResponse, ToolResponse, Workspace};
use crate::tools::ToolSpec;

const SYSTEM_PROMPT_TEMPLATE: &str = include_str!("../assets/system_prompt.txt");
const MONO_SYSTEM_PROMPT_TEMPLATE: &str = include_str!("../assets/mono_system_prompt.txt");
const FORCED_FINAL_PROMPT: &str = include_str!("../assets/forced_final_prompt.txt");

/// Compact restatement of the reply grammar, appended to parse-repair
/// prompts.
pub const FORMAT_CONTRACT: &str = "Reply with <think>...</think>, then <report>...</report> (non-empty), then exactly one of <tool_call>{\"name\": ..., \"arguments\": {...}}</tool_call> or <answer>...</answer>.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Role::System => write!(f, "system"),
            Role::User => write!(f, "user"),
            Role::Assistant => write!(f, "assistant"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

/// An ordered chat prompt. Always starts with a system message and holds at
/// least two messages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PromptMessages(Vec<Message>);

impl PromptMessages {
    /// Builds a prompt, enforcing the system-first / two-minimum shape.
    pub fn new(messages: Vec<Message>) -> Result<Self, ProtocolError> {
        if messages.len() < 2 {
            return Err(ProtocolError::MalformedPrompt("fewer than two messages".into()));
        }
        if messages[0].role != Role::System {
            return Err(ProtocolError::MalformedPrompt("first message must be system".into()));
        }
        Ok(Self(messages))
    }

    pub fn messages(&self) -> &[Message] {
        &self.0
    }

    /// Appends a message; the system-first invariant is unaffected.
    pub fn push(&mut self, message: Message) {
        self.0.push(message);
    }

    /// Total byte length of all message contents. This is the size measure
    /// used by the boundedness checks: framing (roles, separators) is
    /// constant per message.
    pub fn byte_len(&self) -> usize {
        self.0.iter().map(|m| m.content.len()).sum()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error("invalid workspace: {0}")]
    InvalidWorkspace(String),
    #[error("malformed prompt: {0}")]
    MalformedPrompt(String),
}

/// Why a raw model reply failed to parse. `raw_text` preserves the reply
/// verbatim for logging and repair prompts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub detail: String,
    pub raw_text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseErrorKind {
    MissingSection,
    AmbiguousAction,
    MalformedToolJson,
    EmptyReport,
    UnknownTag,
}

impl std::fmt::Display for ParseError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}: {}", self.kind, self.detail)
    }
}

impl std::error::Error for ParseError {}

impl ParseError {
    fn new(kind: ParseErrorKind, detail: impl Into<String>, raw: &str) -> Self {
        Self { kind, detail: detail.into(), raw_text: raw.to_string() }
    }
}

fn render_tool_lines(tools: &[ToolSpec]) -> String {
    if tools.is_empty() {
        return "(none)".to_string();
    }
    let mut out = String::new();
    for (i, spec) in tools.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&format!(
            "- {}: {}\n  arguments: {}",
            spec.name,
            spec.description,
            serde_json::to_string(&spec.argument_schema).unwrap_or_else(|_| "{}".into())
        ));
    }
    out
}

fn ensure_valid(workspace: &Workspace) -> Result<(), ProtocolError> {
    let violations = workspace_violations(workspace);
    if violations.is_empty() {
        Ok(())
    } else {
        let detail = violations
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join("; ");
        Err(ProtocolError::InvalidWorkspace(detail))
    }
}

/// Renders the tool-response block shown to the model. Latency is
/// deliberately excluded: it is nondeterministic and carries no signal.
fn render_tool_response(tr: &ToolResponse) -> String {
    format!("Tool response ({}, {}):\n{}", tr.tool_name, tr.status, tr.content)
}

fn render_user_content(workspace: &Workspace) -> String {
    let mut content = format!("Question: {}", workspace.question.text);
    if workspace.round_index > 1 {
        content.push_str("\n\nPrevious report:\n");
        content.push_str(&workspace.prev_report);
        if let Some(action) = &workspace.prev_action {
            content.push_str("\n\nPrevious action:\n");
            content.push_str(&serde_json::to_string(action).unwrap_or_default());
        }
        if let Some(tr) = &workspace.prev_tool_response {
            content.push_str("\n\n");
            content.push_str(&render_tool_response(tr));
        }
    }
    content
}

/// Renders a workspace into the round prompt: a system message carrying the
/// output-format contract and tool specs, and a user message carrying the
/// question plus (from round 2 on) the previous report, action, and tool
/// response. Think text from prior rounds never appears, and neither does
/// the round index: the output is a pure function of the workspace contents.
pub fn render_workspace(
    workspace: &Workspace,
    tools: &[ToolSpec],
) -> Result<PromptMessages, ProtocolError> {
    ensure_valid(workspace)?;
    let system = SYSTEM_PROMPT_TEMPLATE.replace("{tools}", &render_tool_lines(tools));
    PromptMessages::new(vec![
        Message::system(system),
        Message::user(render_user_content(workspace)),
    ])
}

/// Like [`render_workspace`], but the system message instructs that only an
/// `<answer>` section is permitted this turn. Issued once when the round
/// budget runs out.
pub fn render_forced_final(workspace: &Workspace) -> Result<PromptMessages, ProtocolError> {
    ensure_valid(workspace)?;
    PromptMessages::new(vec![
        Message::system(FORCED_FINAL_PROMPT.to_string()),
        Message::user(render_user_content(workspace)),
    ])
}

/// System message for the mono (single expanding context) baseline.
pub fn mono_system_message(tools: &[ToolSpec]) -> Message {
    Message::system(MONO_SYSTEM_PROMPT_TEMPLATE.replace("{tools}", &render_tool_lines(tools)))
}

const SECTION_TAGS: [&str; 4] = ["think", "report", "tool_call", "answer"];

#[derive(Debug)]
struct Section<'a> {
    name: &'a str,
    content: &'a str,
    start: usize,
    end: usize,
}

#[derive(Debug)]
struct TagScan<'a> {
    sections: Vec<Section<'a>>,
    unknown_tags: Vec<(String, usize)>,
}

/// Reads a tag name starting just after `<`. Returns (name, byte index past
/// the closing `>`) when the text forms a well-formed opening tag.
fn read_tag_name(text: &str) -> Option<(&str, usize)> {
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        let is_name_byte = b.is_ascii_alphanumeric() || b == b'_' || b == b'-';
        if i == 0 && !(b.is_ascii_alphabetic() || b == b'_') {
            return None;
        }
        if !is_name_byte {
            break;
        }
        i += 1;
    }
    if i == 0 || i >= bytes.len() || bytes[i] != b'>' {
        return None;
    }
    Some((&text[..i], i + 1))
}

/// Scans raw text for top-level tags. Recognized sections swallow their
/// content wholesale (so tags inside a report body are never interpreted);
/// unknown opening tags are recorded with their position and skipped.
fn scan_tags(raw: &str) -> Result<TagScan<'_>, ParseError> {
    let mut sections = Vec::new();
    let mut unknown_tags = Vec::new();
    let mut pos = 0;

    while let Some(lt) = raw[pos..].find('<') {
        let tag_start = pos + lt;
        let after_lt = &raw[tag_start + 1..];
        // Closing tags and malformed openings at top level are plain text.
        let Some((name, consumed)) = read_tag_name(after_lt) else {
            pos = tag_start + 1;
            continue;
        };
        let body_start = tag_start + 1 + consumed;
        if SECTION_TAGS.contains(&name) {
            let close = format!("</{name}>");
            let Some(rel) = raw[body_start..].find(&close) else {
                return Err(ParseError::new(
                    ParseErrorKind::MissingSection,
                    format!("unterminated <{name}> section"),
                    raw,
                ));
            };
            let content_end = body_start + rel;
            sections.push(Section {
                name,
                content: &raw[body_start..content_end],
                start: tag_start,
                end: content_end + close.len(),
            });
            pos = content_end + close.len();
        } else {
            unknown_tags.push((name.to_string(), tag_start));
            pos = body_start;
        }
    }

    Ok(TagScan { sections, unknown_tags })
}

fn parse_tool_call_body(body: &str, raw: &str) -> Result<Action, ParseError> {
    let value: serde_json::Value = serde_json::from_str(body.trim()).map_err(|e| {
        ParseError::new(ParseErrorKind::MalformedToolJson, format!("invalid JSON: {e}"), raw)
    })?;
    let obj = value.as_object().ok_or_else(|| {
        ParseError::new(ParseErrorKind::MalformedToolJson, "tool call body must be a JSON object", raw)
    })?;
    let name = obj.get("name").and_then(|v| v.as_str()).ok_or_else(|| {
        ParseError::new(ParseErrorKind::MalformedToolJson, "missing string field \"name\"", raw)
    })?;
    let arguments = obj.get("arguments").cloned().ok_or_else(|| {
        ParseError::new(ParseErrorKind::MalformedToolJson, "missing field \"arguments\"", raw)
    })?;
    if !arguments.is_object() {
        return Err(ParseError::new(
            ParseErrorKind::MalformedToolJson,
            "\"arguments\" must be a JSON object",
            raw,
        ));
    }
    Ok(Action::ToolCall { tool_name: name.to_string(), arguments })
}

/// Parses one raw model reply into a [`RoundResponse`]. Never panics on any
/// input; every malformed reply maps to a [`ParseError`] and nothing is
/// partially extracted.
pub fn parse_round_response(raw: &str) -> Result<RoundResponse, ParseError> {
    let scan = scan_tags(raw)?;

    let mut think: Option<&Section> = None;
    let mut report: Option<&Section> = None;
    let mut tool_calls: Vec<&Section> = Vec::new();
    let mut answers: Vec<&Section> = Vec::new();

    for section in &scan.sections {
        match section.name {
            "think" => {
                if think.is_some() {
                    return Err(ParseError::new(
                        ParseErrorKind::UnknownTag,
                        "duplicate <think> section",
                        raw,
                    ));
                }
                think = Some(section);
            }
            "report" => {
                if report.is_some() {
                    return Err(ParseError::new(
                        ParseErrorKind::UnknownTag,
                        "duplicate <report> section",
                        raw,
                    ));
                }
                report = Some(section);
            }
            "tool_call" => tool_calls.push(section),
            "answer" => answers.push(section),
            _ => unreachable!("scan only yields recognized sections"),
        }
    }

    // Unknown tags strictly between recognized sections break the structure;
    // before the first or after the last they are ignored as decoration.
    if let (Some(first), Some(last)) = (
        scan.sections.first().map(|s| s.start),
        scan.sections.last().map(|s| s.end),
    ) {
        for (name, at) in &scan.unknown_tags {
            if *at > first && *at < last {
                return Err(ParseError::new(
                    ParseErrorKind::UnknownTag,
                    format!("unknown tag <{name}> interleaves sections"),
                    raw,
                ));
            }
        }
    }

    let think = think.ok_or_else(|| {
        ParseError::new(ParseErrorKind::MissingSection, "missing <think> section", raw)
    })?;
    let report = report.ok_or_else(|| {
        ParseError::new(ParseErrorKind::MissingSection, "missing <report> section", raw)
    })?;
    if report.content.trim().is_empty() {
        return Err(ParseError::new(ParseErrorKind::EmptyReport, "empty <report> section", raw));
    }

    let action = match (tool_calls.len(), answers.len()) {
        (0, 0) => {
            return Err(ParseError::new(
                ParseErrorKind::MissingSection,
                "missing action: expected <tool_call> or <answer>",
                raw,
            ))
        }
        (1, 0) => parse_tool_call_body(tool_calls[0].content, raw)?,
        (0, 1) => {
            let text = answers[0].content;
            if text.trim().is_empty() {
                return Err(ParseError::new(
                    ParseErrorKind::MissingSection,
                    "empty <answer> section",
                    raw,
                ));
            }
            Action::FinalAnswer { text: text.to_string() }
        }
        _ => {
            return Err(ParseError::new(
                ParseErrorKind::AmbiguousAction,
                "reply must contain exactly one <tool_call> or <answer>",
                raw,
            ))
        }
    };

    Ok(RoundResponse {
        think: think.content.to_string(),
        report: report.content.to_string(),
        action,
    })
}

/// Parses a reply to a forced-final prompt: an `<answer>` section must be
/// present and no `<tool_call>` may appear. Think/report sections are
/// tolerated so that fully structured replies remain compliant.
pub fn parse_forced_final(raw: &str) -> Result<String, ParseError> {
    let scan = scan_tags(raw)?;
    let mut answer: Option<&str> = None;
    for section in &scan.sections {
        match section.name {
            "tool_call" => {
                return Err(ParseError::new(
                    ParseErrorKind::AmbiguousAction,
                    "tool call not permitted in a forced-final reply",
                    raw,
                ))
            }
            "answer" => {
                if answer.is_some() {
                    return Err(ParseError::new(
                        ParseErrorKind::AmbiguousAction,
                        "multiple <answer> sections",
                        raw,
                    ));
                }
                answer = Some(section.content);
            }
            _ => {}
        }
    }
    let answer = answer.ok_or_else(|| {
        ParseError::new(ParseErrorKind::MissingSection, "missing <answer> section", raw)
    })?;
    if answer.trim().is_empty() {
        return Err(ParseError::new(ParseErrorKind::MissingSection, "empty <answer> section", raw));
    }
    Ok(answer.to_string())
}

/// Stable fingerprint of a rendered prompt: SHA-256 over the canonical JSON
/// encoding of its messages. Recorded at rollout time and recomputed by the
/// corpus builder to flag nondeterministic rendering.
pub fn prompt_fingerprint(messages: &PromptMessages) -> String {
    let encoded = serde_json::to_vec(messages).expect("prompt messages serialize");
    crate::util::sha256_hex(&encoded)
}

/// Canonical emitter: the inverse of [`parse_round_response`] for contents
/// that do not embed their own closing tag. Scripted fixtures and the corpus
/// builder both rely on it.
pub fn emit_round_response(response: &RoundResponse) -> String {
    let action = match &response.action {
        Action::ToolCall { tool_name, arguments } => {
            let body = serde_json::json!({"name": tool_name, "arguments": arguments});
            format!("<tool_call>{}</tool_call>", serde_json::to_string(&body).unwrap_or_default())
        }
        Action::FinalAnswer { text } => format!("<answer>{text}</answer>"),
    };
    format!(
        "<think>{}</think>\n<report>{}</report>\n{}",
        response.think, response.report, action
    )
}
