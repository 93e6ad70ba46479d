//! The iterative research control loop — render, complete, parse, execute,
//! transition — plus the mono (single expanding context) baseline it is
//! measured against.
//!
//! All failure modes are encoded in the trajectory's termination; neither
//! entry point surfaces an error to the caller.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, ChatBackend};
use crate::model::{
    Action, Question, RoundRecord, RoundResponse, RunMode, SamplingParams, Termination,
    ToolResponse, Trajectory, Workspace,
};
use crate::protocol::{
    mono_system_message, parse_forced_final, parse_round_response, prompt_fingerprint,
    render_forced_final, render_workspace, Message, ParseError, PromptMessages, FORMAT_CONTRACT,
};
use crate::tools::ToolRegistry;
use crate::util::truncate_chars;

const REPORT_TRUNCATION_MARKER: &str = "\n…[report truncated]";

/// Hard resource limits for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineBudget {
    /// Ceiling on research rounds; the effective cap for a run is the
    /// smaller of this and the rollout's `SamplingParams::max_rounds`.
    pub max_rounds: u32,
    #[serde(rename = "max_wall_time_ms", with = "crate::util::duration_ms")]
    pub max_wall_time: Duration,
    /// Reports longer than this many characters are truncated with a marker.
    pub report_char_cap: usize,
    /// Extra parse attempts (with repair prompts) per round.
    pub parse_retry_limit: u32,
    /// Mono mode only: terminate with `context_overflow` once the rendered
    /// prompt exceeds this many bytes.
    pub context_char_cap: usize,
}

impl Default for EngineBudget {
    fn default() -> Self {
        Self {
            max_rounds: 32,
            max_wall_time: Duration::from_secs(600),
            report_char_cap: 8_000,
            parse_retry_limit: 2,
            context_char_cap: 1 << 20,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TransitionError {
    #[error("cannot transition past a terminal action (final answer)")]
    TerminalAction,
}

/// Builds the next round's workspace from the current one: the question is
/// carried over, the response's report and action replace the previous ones,
/// and everything else — including the think text and the entire prior
/// workspace contents — is discarded.
pub fn transition(
    workspace: &Workspace,
    response: &RoundResponse,
    tool_response: &ToolResponse,
) -> Result<Workspace, TransitionError> {
    if response.action.is_final_answer() {
        return Err(TransitionError::TerminalAction);
    }
    Ok(Workspace {
        question: workspace.question.clone(),
        round_index: workspace.round_index + 1,
        prev_report: response.report.clone(),
        prev_action: Some(response.action.clone()),
        prev_tool_response: Some(tool_response.clone()),
    })
}

/// Side-channel observations from a run, kept out of the persisted
/// trajectory: the byte length of each round's initial prompt (repair and
/// forced-final prompts excluded) and whether a forced final was issued.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunTrace {
    pub prompt_bytes: Vec<usize>,
    pub forced_final: bool,
}

enum RoundFailure {
    Backend(BackendError),
    Parse(ParseError),
}

/// One model call per attempt: parse failures are retried with the raw reply
/// and a repair instruction appended, up to `parse_retry_limit` extra
/// attempts. Returns the parsed response together with the raw text that
/// produced it (mono mode accumulates the raw form).
fn complete_and_parse(
    backend: &dyn ChatBackend,
    base: &PromptMessages,
    sampling: &SamplingParams,
    parse_retry_limit: u32,
) -> Result<(RoundResponse, String), RoundFailure> {
    let mut messages = base.clone();
    let mut last_error: Option<ParseError> = None;
    for _attempt in 0..=parse_retry_limit {
        let raw = backend.complete(&messages, sampling).map_err(RoundFailure::Backend)?;
        match parse_round_response(&raw) {
            Ok(response) => return Ok((response, raw)),
            Err(error) => {
                tracing::debug!(kind = ?error.kind, "parse failure, issuing repair prompt");
                messages.push(Message::assistant(raw));
                messages.push(Message::user(format!(
                    "Your previous reply could not be parsed ({error}). {FORMAT_CONTRACT}"
                )));
                last_error = Some(error);
            }
        }
    }
    Err(RoundFailure::Parse(last_error.expect("at least one attempt ran")))
}

fn cap_report(mut response: RoundResponse, cap: usize) -> RoundResponse {
    response.report = truncate_chars(&response.report, cap, REPORT_TRUNCATION_MARKER);
    response
}

fn effective_max_rounds(budget: &EngineBudget, sampling: &SamplingParams) -> u32 {
    budget.max_rounds.min(sampling.max_rounds).max(1)
}

/// Issues the one extra forced-final call permitted on budget exhaustion and
/// records a compliant answer on the trajectory. The forced reply is never
/// appended as a round: the recorded rounds stay exactly the research rounds.
fn force_final(
    trajectory: &mut Trajectory,
    workspace: &Workspace,
    backend: &dyn ChatBackend,
    sampling: &SamplingParams,
) {
    let Ok(messages) = render_forced_final(workspace) else {
        return;
    };
    match backend.complete(&messages, sampling) {
        Ok(raw) => match parse_forced_final(&raw) {
            Ok(answer) => trajectory.final_answer = Some(answer),
            Err(error) => {
                tracing::debug!(kind = ?error.kind, "non-compliant forced-final reply");
            }
        },
        Err(error) => {
            tracing::debug!(%error, "backend failure during forced final");
        }
    }
}

/// Runs one question to termination under the iterative paradigm. Each round
/// reconstructs a bounded workspace, asks the backend for one structured
/// reply, and either executes the tool call and transitions, or stops on a
/// final answer. Exhausting the round or wall-time budget triggers a single
/// forced-final call.
pub fn run_iter_research(
    question: &Question,
    budget: &EngineBudget,
    backend: &dyn ChatBackend,
    registry: &ToolRegistry,
    sampling: &SamplingParams,
) -> Trajectory {
    run_iter_research_traced(question, budget, backend, registry, sampling).0
}

pub fn run_iter_research_traced(
    question: &Question,
    budget: &EngineBudget,
    backend: &dyn ChatBackend,
    registry: &ToolRegistry,
    sampling: &SamplingParams,
) -> (Trajectory, RunTrace) {
    let id = format!("{}-s{}-iter", question.id, sampling.seed);
    let mut trajectory = Trajectory::new(id, question.clone(), sampling.clone());
    let mut workspace = Workspace::initial(question.clone());
    let mut trace = RunTrace::default();
    let specs = registry.specs();
    let started = Instant::now();
    let max_rounds = effective_max_rounds(budget, sampling);

    loop {
        // Wall time is only consulted once a round exists: a budget-exhausted
        // trajectory always carries at least one research round.
        if trajectory.rounds.len() as u32 >= max_rounds
            || (!trajectory.rounds.is_empty() && started.elapsed() >= budget.max_wall_time)
        {
            trace.forced_final = true;
            force_final(&mut trajectory, &workspace, backend, sampling);
            trajectory.termination = Some(Termination::BudgetExhausted);
            break;
        }

        let messages = match render_workspace(&workspace, &specs) {
            Ok(m) => m,
            Err(error) => {
                // Unreachable for workspaces the engine itself constructs.
                tracing::error!(%error, "workspace failed to render");
                trajectory.termination = Some(Termination::BackendFailure);
                break;
            }
        };
        trace.prompt_bytes.push(messages.byte_len());
        let round_started = Instant::now();

        let response =
            match complete_and_parse(backend, &messages, sampling, budget.parse_retry_limit) {
                Ok((response, _raw)) => cap_report(response, budget.report_char_cap),
                Err(RoundFailure::Backend(error)) => {
                    tracing::warn!(%error, "backend failure, terminating");
                    trajectory.termination = Some(Termination::BackendFailure);
                    break;
                }
                Err(RoundFailure::Parse(error)) => {
                    tracing::warn!(kind = ?error.kind, "parse retries exhausted, terminating");
                    trajectory.termination = Some(Termination::ParseFailure);
                    break;
                }
            };

        let fingerprint = prompt_fingerprint(&messages);
        match &response.action {
            Action::FinalAnswer { text } => {
                let record = RoundRecord {
                    workspace: workspace.clone(),
                    response: response.clone(),
                    tool_response: None,
                    prompt_sha256: Some(fingerprint),
                };
                trajectory = trajectory.append_round(record).expect("consecutive round index");
                trajectory.final_answer = Some(text.clone());
                trajectory.termination = Some(Termination::FinalAnswer);
                tracing::info!(
                    rounds = trajectory.rounds.len(),
                    elapsed_ms = round_started.elapsed().as_millis() as u64,
                    "final answer produced"
                );
                break;
            }
            Action::ToolCall { tool_name, .. } => {
                let tool_response = registry.execute_action(&response.action);
                tracing::info!(
                    round = workspace.round_index,
                    tool = %tool_name,
                    status = %tool_response.status,
                    elapsed_ms = round_started.elapsed().as_millis() as u64,
                    "round complete"
                );
                let record = RoundRecord {
                    workspace: workspace.clone(),
                    response: response.clone(),
                    tool_response: Some(tool_response.clone()),
                    prompt_sha256: Some(fingerprint),
                };
                trajectory = trajectory.append_round(record).expect("consecutive round index");
                workspace = transition(&workspace, &response, &tool_response)
                    .expect("tool-call action transitions");
            }
        }
    }

    debug_assert!(
        crate::model::validate_trajectory(&trajectory).is_empty(),
        "engine produced an invalid trajectory: {:?}",
        crate::model::validate_trajectory(&trajectory)
    );
    (trajectory, trace)
}

/// The mono-contextual baseline: the identical loop, except the prompt for
/// round `i` carries the verbatim concatenation of every prior raw reply and
/// tool response. Nothing is discarded, nothing is synthesized away, and the
/// prompt grows without bound until the context cap is hit.
pub fn run_mono_baseline(
    question: &Question,
    budget: &EngineBudget,
    backend: &dyn ChatBackend,
    registry: &ToolRegistry,
    sampling: &SamplingParams,
) -> Trajectory {
    run_mono_baseline_traced(question, budget, backend, registry, sampling).0
}

pub fn run_mono_baseline_traced(
    question: &Question,
    budget: &EngineBudget,
    backend: &dyn ChatBackend,
    registry: &ToolRegistry,
    sampling: &SamplingParams,
) -> (Trajectory, RunTrace) {
    let id = format!("{}-s{}-mono", question.id, sampling.seed);
    let mut trajectory =
        Trajectory::new(id, question.clone(), sampling.clone()).with_mode(RunMode::Mono);
    // The equivalent Markov workspace is tracked round over round so that
    // records persist uniformly, but mono prompts are built from history.
    let mut workspace = Workspace::initial(question.clone());
    let mut history: Vec<Message> = Vec::new();
    let mut trace = RunTrace::default();
    let specs = registry.specs();
    let system = mono_system_message(&specs);
    let question_message = Message::user(format!("Question: {}", question.text));
    let started = Instant::now();
    let max_rounds = effective_max_rounds(budget, sampling);

    loop {
        if trajectory.rounds.len() as u32 >= max_rounds
            || (!trajectory.rounds.is_empty() && started.elapsed() >= budget.max_wall_time)
        {
            trace.forced_final = true;
            force_final(&mut trajectory, &workspace, backend, sampling);
            trajectory.termination = Some(Termination::BudgetExhausted);
            break;
        }

        let mut messages =
            PromptMessages::new(vec![system.clone(), question_message.clone()])
                .expect("static prompt shape");
        for message in &history {
            messages.push(message.clone());
        }
        if messages.byte_len() > budget.context_char_cap {
            tracing::warn!(bytes = messages.byte_len(), "mono context cap exceeded");
            trajectory.termination = Some(Termination::ContextOverflow);
            break;
        }
        trace.prompt_bytes.push(messages.byte_len());

        let response =
            match complete_and_parse(backend, &messages, sampling, budget.parse_retry_limit) {
                Ok((response, raw)) => {
                    history.push(Message::assistant(raw));
                    cap_report(response, budget.report_char_cap)
                }
                Err(RoundFailure::Backend(error)) => {
                    tracing::warn!(%error, "backend failure, terminating");
                    trajectory.termination = Some(Termination::BackendFailure);
                    break;
                }
                Err(RoundFailure::Parse(error)) => {
                    tracing::warn!(kind = ?error.kind, "parse retries exhausted, terminating");
                    trajectory.termination = Some(Termination::ParseFailure);
                    break;
                }
            };

        match &response.action {
            Action::FinalAnswer { text } => {
                let record = RoundRecord {
                    workspace: workspace.clone(),
                    response: response.clone(),
                    tool_response: None,
                    prompt_sha256: None,
                };
                trajectory = trajectory.append_round(record).expect("consecutive round index");
                trajectory.final_answer = Some(text.clone());
                trajectory.termination = Some(Termination::FinalAnswer);
                break;
            }
            Action::ToolCall { .. } => {
                let tool_response = registry.execute_action(&response.action);
                history.push(Message::user(format!(
                    "Tool response ({}, {}):\n{}",
                    tool_response.tool_name, tool_response.status, tool_response.content
                )));
                let record = RoundRecord {
                    workspace: workspace.clone(),
                    response: response.clone(),
                    tool_response: Some(tool_response.clone()),
                    prompt_sha256: None,
                };
                trajectory = trajectory.append_round(record).expect("consecutive round index");
                workspace = transition(&workspace, &response, &tool_response)
                    .expect("tool-call action transitions");
            }
        }
    }

    debug_assert!(
        crate::model::validate_trajectory(&trajectory).is_empty(),
        "engine produced an invalid trajectory"
    );
    (trajectory, trace)
}
