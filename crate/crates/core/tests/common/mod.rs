//! Shared builders for integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use research_core::backend::ScriptedBackend;
use research_core::model::{
    Action, Question, RoundRecord, RoundResponse, SamplingParams, Termination, ToolResponse,
    Trajectory, Workspace,
};
use research_core::protocol::emit_round_response;
use research_core::tools::{MockTransport, SearchResult, ToolConfig, ToolRegistry};

/// A valid terminated trajectory with `rounds` rounds for question `qid`
/// (reference answer "42"), ending in `answer`.
pub fn make_trajectory(qid: &str, id: &str, rounds: u32, answer: &str) -> Trajectory {
    let question = Question::new(qid, format!("Question {qid}?")).with_reference("42");
    let mut trajectory = Trajectory::new(id, question.clone(), SamplingParams::default());
    let mut workspace = Workspace::initial(question);
    for i in 1..=rounds {
        let is_last = i == rounds;
        let action = if is_last {
            Action::final_answer(answer)
        } else {
            Action::tool_call("search", serde_json::json!({"queries": [format!("q{i}")]}))
        };
        let response = RoundResponse {
            think: format!("think {i}"),
            report: format!("report {i}"),
            action: action.clone(),
        };
        let tool_response = (!is_last).then(|| ToolResponse::ok("search", format!("obs {i}")));
        let record = RoundRecord {
            workspace: workspace.clone(),
            response: response.clone(),
            tool_response: tool_response.clone(),
            prompt_sha256: None,
        };
        trajectory = trajectory.append_round(record).unwrap();
        if let Some(tr) = tool_response {
            workspace = research_core::engine::transition(&workspace, &response, &tr).unwrap();
        }
    }
    trajectory.final_answer = Some(answer.to_string());
    trajectory.termination = Some(Termination::FinalAnswer);
    trajectory
}

/// Registry over an in-memory mock transport that answers query "q".
pub fn mock_registry() -> ToolRegistry {
    let transport = Arc::new(MockTransport::new().with_search(
        "q",
        vec![SearchResult {
            title: "Result".into(),
            snippet: "six times seven is forty-two".into(),
            url: "https://example.com/42".into(),
        }],
    ));
    ToolRegistry::standard(
        ToolConfig::default(),
        transport,
        Arc::new(ScriptedBackend::new(vec![])),
    )
}

/// Fixed-width scripted tool-call reply; every round searches "q".
pub fn tool_reply(i: u32) -> String {
    emit_round_response(&RoundResponse {
        think: format!("think-{i:04}"),
        report: format!("report-{i:04}"),
        action: Action::tool_call("search", serde_json::json!({"queries": ["q"]})),
    })
}

pub fn answer_reply(text: &str) -> String {
    emit_round_response(&RoundResponse {
        think: "enough evidence".into(),
        report: "final report".into(),
        action: Action::final_answer(text),
    })
}

/// Replies with the same fixed text forever.
pub struct ConstBackend(pub String);

impl research_core::backend::ChatBackend for ConstBackend {
    fn complete(
        &self,
        _messages: &research_core::protocol::PromptMessages,
        _sampling: &SamplingParams,
    ) -> Result<String, research_core::backend::BackendError> {
        Ok(self.0.clone())
    }
}

/// Hands out a fresh scripted backend per request, keyed by item and agent;
/// counts research requests so resumption can be observed.
pub struct ScriptedSupplier {
    research: std::collections::HashMap<(String, u32), Vec<String>>,
    synthesis: std::collections::HashMap<String, Vec<String>>,
    pub research_requests: std::sync::atomic::AtomicUsize,
}

impl ScriptedSupplier {
    pub fn new() -> Self {
        Self {
            research: std::collections::HashMap::new(),
            synthesis: std::collections::HashMap::new(),
            research_requests: std::sync::atomic::AtomicUsize::new(0),
        }
    }

    pub fn script(mut self, item: &str, agent: u32, replies: Vec<String>) -> Self {
        self.research.insert((item.to_string(), agent), replies);
        self
    }

    pub fn synthesis_script(mut self, item: &str, replies: Vec<String>) -> Self {
        self.synthesis.insert(item.to_string(), replies);
        self
    }
}

impl research_core::harness::BackendSupplier for ScriptedSupplier {
    fn research_backend(
        &self,
        item_id: &str,
        agent_index: u32,
    ) -> Arc<dyn research_core::backend::ChatBackend> {
        self.research_requests.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        let script = self
            .research
            .get(&(item_id.to_string(), agent_index))
            .cloned()
            .unwrap_or_default();
        Arc::new(ScriptedBackend::new(script))
    }

    fn synthesis_backend(&self, item_id: &str) -> Arc<dyn research_core::backend::ChatBackend> {
        let script = self.synthesis.get(item_id).cloned().unwrap_or_default();
        Arc::new(ScriptedBackend::new(script))
    }

    fn judge_backend(&self) -> Arc<dyn research_core::backend::ChatBackend> {
        Arc::new(ConstBackend("INCORRECT".into()))
    }
}
