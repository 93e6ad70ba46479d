//! Iterative deep-research runtime.
//!
//! Research proceeds in discrete rounds over a bounded Markov workspace: each
//! round the agent sees only the question, the report it wrote last round,
//! and the latest tool interaction; it replies with a think/report/action
//! triplet, and the state transition keeps the updated report while
//! discarding everything ephemeral. On top of that loop this crate provides:
//!
//! - [`model`] — the shared domain types and their validity rules;
//! - [`protocol`] — prompt rendering and reply parsing (the wire format);
//! - [`tools`] — the four-tool action layer (search, scholar, visit, code)
//!   with a deterministic mock transport;
//! - [`backend`] — chat-completion clients, live HTTP and scripted;
//! - [`engine`] — the research loop and the mono-contextual baseline;
//! - [`synthesis`] — parallel research plus one synthesis pass;
//! - [`corpus`] — trajectory-to-training-corpus mathematics;
//! - [`harness`] — pass@k, LLM-as-judge, analytics, and the benchmark
//!   runner.

pub mod backend;
pub mod corpus;
pub mod engine;
pub mod harness;
pub mod model;
pub mod protocol;
pub mod synthesis;
pub mod tools;
pub mod util;

#[cfg(test)]
pub(crate) mod testutil;

pub use backend::{BackendConfig, BackendError, ChatBackend, HttpBackend, ScriptedBackend};
pub use engine::{
    run_iter_research, run_iter_research_traced, run_mono_baseline, run_mono_baseline_traced,
    transition, EngineBudget, RunTrace,
};
pub use model::{
    validate_trajectory, Action, Question, RoundRecord, RoundResponse, RunMode, SamplingParams,
    Termination, ToolResponse, ToolStatus, Trajectory, Workspace,
};
pub use protocol::{
    emit_round_response, parse_round_response, render_forced_final, render_workspace,
    ParseError, ParseErrorKind, PromptMessages,
};
pub use synthesis::{
    run_parallel_research, run_parallel_research_full, synthesize, ResearchOutcome,
    SynthesisResult,
};
pub use tools::{execute, MockTransport, ToolConfig, ToolRegistry, ToolSpec};
