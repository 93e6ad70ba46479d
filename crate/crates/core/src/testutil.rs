//! Shared helpers for unit tests.

use crate::engine::transition;
use crate::model::{
    Action, Question, RoundRecord, RoundResponse, SamplingParams, Termination, ToolResponse,
    Trajectory, Workspace,
};

/// Builds a valid terminated trajectory with `rounds` rounds for question
/// `qid` (reference answer "42"), ending in `answer`.
pub(crate) fn make_trajectory(qid: &str, id: &str, rounds: u32, answer: &str) -> Trajectory {
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
            workspace = transition(&workspace, &response, &tr).unwrap();
        }
    }
    trajectory.final_answer = Some(answer.to_string());
    trajectory.termination = Some(Termination::FinalAnswer);
    trajectory
}
