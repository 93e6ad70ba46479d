//! Shared domain vocabulary: questions, actions, rounds, workspaces, and
//! trajectories, plus the validity rules that tie them together.
//!
//! Every type here is an immutable value after construction and carries a
//! canonical snake_case JSON representation (via serde) used by the
//! trajectory store and the CLI.

use serde::{Deserialize, Serialize};

/// A research question, optionally paired with benchmark ground truth.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_answer: Option<String>,
}

impl Question {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            reference_answer: None,
        }
    }

    pub fn with_reference(mut self, reference: impl Into<String>) -> Self {
        self.reference_answer = Some(reference.into());
        self
    }
}

/// The agent's concrete decision for a round: call a tool, or stop with an
/// answer. Exactly one variant, enforced by the type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    ToolCall {
        tool_name: String,
        arguments: serde_json::Value,
    },
    FinalAnswer {
        text: String,
    },
}

impl Action {
    pub fn tool_call(tool_name: impl Into<String>, arguments: serde_json::Value) -> Self {
        Action::ToolCall {
            tool_name: tool_name.into(),
            arguments,
        }
    }

    pub fn final_answer(text: impl Into<String>) -> Self {
        Action::FinalAnswer { text: text.into() }
    }

    pub fn is_tool_call(&self) -> bool {
        matches!(self, Action::ToolCall { .. })
    }

    pub fn is_final_answer(&self) -> bool {
        matches!(self, Action::FinalAnswer { .. })
    }
}

/// One structured model turn: think scratchpad, synthesized report, action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundResponse {
    pub think: String,
    pub report: String,
    pub action: Action,
}

/// Execution status of a tool invocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolStatus {
    Ok,
    Error,
    Timeout,
}

impl std::fmt::Display for ToolStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ToolStatus::Ok => write!(f, "ok"),
            ToolStatus::Error => write!(f, "error"),
            ToolStatus::Timeout => write!(f, "timeout"),
        }
    }
}

/// Normalized result envelope from tool execution. Failures are carried
/// in-band (`status` + human-readable `content`) so the agent can observe
/// and recover from them in the next round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolResponse {
    pub tool_name: String,
    pub status: ToolStatus,
    pub content: String,
    pub latency_ms: u64,
}

impl ToolResponse {
    pub fn ok(tool_name: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            tool_name: tool_name.into(),
            status: ToolStatus::Ok,
            content: content.into(),
            latency_ms: 0,
        }
    }

    pub fn error(tool_name: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            tool_name: tool_name.into(),
            status: ToolStatus::Error,
            content: content.into(),
            latency_ms: 0,
        }
    }
}

/// The Markov state presented to the model at each round: the question, the
/// previous round's report, and the immediately preceding action/observation.
/// Nothing older survives reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub question: Question,
    pub round_index: u32,
    pub prev_report: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prev_action: Option<Action>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prev_tool_response: Option<ToolResponse>,
}

impl Workspace {
    /// The round-1 workspace: just the question.
    pub fn initial(question: Question) -> Self {
        Self {
            question,
            round_index: 1,
            prev_report: String::new(),
            prev_action: None,
            prev_tool_response: None,
        }
    }

    pub fn is_initial(&self) -> bool {
        self.round_index == 1
    }
}

/// One completed round: the state the model saw, what it produced, and the
/// tool observation (when the action was a tool call that got executed).
///
/// `prompt_sha256` is a fingerprint of the exact prompt rendered at rollout
/// time; the corpus builder re-renders the workspace and compares against it
/// to flag nondeterministic rendering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub workspace: Workspace,
    pub response: RoundResponse,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_response: Option<ToolResponse>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_sha256: Option<String>,
}

/// How a trajectory ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    FinalAnswer,
    BudgetExhausted,
    ParseFailure,
    BackendFailure,
    ContextOverflow,
}

/// Inference strategy a trajectory was produced under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    #[default]
    Iter,
    Mono,
}

/// Nucleus-sampling parameters attached to every rollout.
///
/// `max_rounds` here is rollout metadata; the engine enforces the smaller of
/// this value and the budget's `max_rounds`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_rounds: u32,
    pub seed: u64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            temperature: 0.6,
            top_p: 0.95,
            max_rounds: 32,
            seed: 0,
        }
    }
}

impl SamplingParams {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// A full ordered round sequence for one question attempt: the unit of
/// rollout, filtering, and analytics.
///
/// `termination` is `None` while the trajectory is still being built and set
/// exactly once when the run ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: String,
    pub question: Question,
    pub rounds: Vec<RoundRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub termination: Option<Termination>,
    pub sampling: SamplingParams,
    #[serde(default)]
    pub mode: RunMode,
}

/// Errors from trajectory construction.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AppendError {
    #[error("round_index {got} does not follow {expected} (non-consecutive)")]
    IndexGap { expected: u32, got: u32 },
    #[error("trajectory is already terminated")]
    AlreadyTerminated,
}

impl Trajectory {
    pub fn new(id: impl Into<String>, question: Question, sampling: SamplingParams) -> Self {
        Self {
            id: id.into(),
            question,
            rounds: Vec::new(),
            final_answer: None,
            termination: None,
            sampling,
            mode: RunMode::Iter,
        }
    }

    pub fn with_mode(mut self, mode: RunMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn is_terminated(&self) -> bool {
        self.termination.is_some()
    }

    /// Appends one round, enforcing consecutive `round_index` values and
    /// rejecting appends to a terminated trajectory. Consumes and returns the
    /// trajectory; all other fields are unchanged.
    pub fn append_round(mut self, record: RoundRecord) -> Result<Self, AppendError> {
        if self.is_terminated() {
            return Err(AppendError::AlreadyTerminated);
        }
        let expected = self.rounds.len() as u32 + 1;
        if record.workspace.round_index != expected {
            return Err(AppendError::IndexGap {
                expected,
                got: record.workspace.round_index,
            });
        }
        self.rounds.push(record);
        Ok(self)
    }

    /// The report of the terminal round, or empty when no round completed.
    pub fn final_report(&self) -> &str {
        self.rounds
            .last()
            .map(|r| r.response.report.as_str())
            .unwrap_or("")
    }

    pub fn num_rounds(&self) -> usize {
        self.rounds.len()
    }
}

/// One invariant breach found by [`validate_trajectory`], naming the field
/// and the rule it violates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

fn violation(field: &str, rule: impl Into<String>) -> Violation {
    Violation {
        field: field.to_string(),
        rule: rule.into(),
    }
}

/// Checks a single workspace against its structural invariants. The round-1
/// state must carry nothing but the question; later states must carry the
/// previous report and action, with a tool response iff that action called a
/// tool.
pub fn workspace_violations(ws: &Workspace) -> Vec<Violation> {
    let mut out = Vec::new();
    if ws.question.text.trim().is_empty() {
        out.push(violation("workspace.question.text", "must be non-empty after trim"));
    }
    if ws.round_index == 0 {
        out.push(violation("workspace.round_index", "must be >= 1"));
    }
    if ws.round_index == 1 {
        if !ws.prev_report.is_empty() {
            out.push(violation("workspace.prev_report", "must be empty at round 1"));
        }
        if ws.prev_action.is_some() || ws.prev_tool_response.is_some() {
            out.push(violation(
                "workspace.prev_action",
                "prev_action/prev_tool_response must be absent at round 1",
            ));
        }
    } else {
        if ws.prev_report.is_empty() {
            out.push(violation("workspace.prev_report", "must be present for rounds > 1"));
        }
        if ws.prev_action.is_none() {
            out.push(violation("workspace.prev_action", "must be present for rounds > 1"));
        }
    }
    let prev_is_tool_call = ws.prev_action.as_ref().is_some_and(Action::is_tool_call);
    if ws.prev_tool_response.is_some() != prev_is_tool_call {
        out.push(violation(
            "workspace.prev_tool_response",
            "present iff prev_action is a tool call",
        ));
    }
    out
}

/// Checks every type invariant over a trajectory and returns the list of
/// breaches. Total: never fails, an empty list means the trajectory is valid.
pub fn validate_trajectory(trajectory: &Trajectory) -> Vec<Violation> {
    let mut out = Vec::new();

    if trajectory.question.text.trim().is_empty() {
        out.push(violation("question.text", "must be non-empty after trim"));
    }

    for (i, record) in trajectory.rounds.iter().enumerate() {
        let prefix = format!("rounds[{i}]");
        let ws = &record.workspace;

        let expected_index = i as u32 + 1;
        if ws.round_index != expected_index {
            out.push(violation(
                &format!("{prefix}.workspace.round_index"),
                format!("expected {expected_index}, found {}", ws.round_index),
            ));
        }
        for v in workspace_violations(ws) {
            out.push(Violation {
                field: format!("{prefix}.{}", v.field),
                rule: v.rule,
            });
        }

        if record.response.report.trim().is_empty() {
            out.push(violation(
                &format!("{prefix}.response.report"),
                "must be non-empty from round 1 onward",
            ));
        }
        if let Action::FinalAnswer { text } = &record.response.action {
            if text.trim().is_empty() {
                out.push(violation(
                    &format!("{prefix}.response.action"),
                    "final answer text must be non-empty",
                ));
            }
        }
        if record.tool_response.is_some() && !record.response.action.is_tool_call() {
            out.push(violation(
                &format!("{prefix}.tool_response"),
                "present only when the round's action is a tool call",
            ));
        }
    }

    match trajectory.termination {
        Some(Termination::FinalAnswer) => {
            let last_answer = trajectory.rounds.last().and_then(|r| match &r.response.action {
                Action::FinalAnswer { text } => Some(text.as_str()),
                _ => None,
            });
            match (&trajectory.final_answer, last_answer) {
                (Some(answer), Some(last)) if answer == last => {}
                (Some(_), Some(_)) => out.push(violation(
                    "final_answer",
                    "must equal the final-answer text of the last round",
                )),
                (Some(_), None) => out.push(violation(
                    "rounds",
                    "termination=final_answer requires the last round's action to be a final answer",
                )),
                (None, _) => out.push(violation(
                    "final_answer",
                    "must be present when termination=final_answer",
                )),
            }
            if trajectory.rounds.is_empty() {
                out.push(violation(
                    "rounds",
                    "must be non-empty when termination=final_answer",
                ));
            }
        }
        Some(Termination::BudgetExhausted) => {
            // A forced-final answer (when compliant) lives only on the
            // trajectory; the last recorded round is still a tool call.
            if trajectory.rounds.is_empty() {
                out.push(violation(
                    "rounds",
                    "must be non-empty when termination=budget_exhausted",
                ));
            }
        }
        // Parse/backend failures and context overflow can strike before any
        // round completes, so an empty round list is legal for them.
        Some(_) | None => {}
    }

    out
}
