//! Benchmark harness: dataset loading, the pass@k metric, LLM-as-judge
//! adjudication, trajectory analytics, and the benchmark runner with JSONL
//! persistence.

pub mod bench;
pub mod store;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, ChatBackend};
use crate::model::{Action, SamplingParams, Trajectory};
use crate::protocol::{Message, PromptMessages};

pub use bench::{
    run_benchmark, stats_from_store, BackendSupplier, BenchMode, BenchSetup, ItemVerdict,
    OutcomeRecord, RunReport, SharedBackends, SynthesisRecord,
};
pub use store::{read_jsonl, JsonlWriter, StoreError};

const JUDGE_PROMPT_TEMPLATE: &str = include_str!("../../assets/judge_prompt.txt");

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("dataset {path} failed to parse: {detail}")]
    DatasetParse { path: String, detail: String },
    #[error("empty input")]
    EmptyInput,
    #[error("insufficient attempts: k={k} but a problem has only {got}")]
    InsufficientAttempts { k: usize, got: usize },
    #[error("k must be >= 1")]
    InvalidK,
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// One benchmark problem. Dataset files are JSONL with `id`, `question`,
/// `answer`, and optional `tags` keys.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkItem {
    pub id: String,
    #[serde(rename = "question")]
    pub question_text: String,
    #[serde(rename = "answer")]
    pub reference_answer: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
}

/// Loads a JSONL dataset, rejecting duplicate ids.
pub fn load_dataset(path: &Path) -> Result<Vec<BenchmarkItem>, HarnessError> {
    let items: Vec<BenchmarkItem> =
        store::read_jsonl(path).map_err(|e| HarnessError::DatasetParse {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
    if items.is_empty() {
        return Err(HarnessError::DatasetParse {
            path: path.display().to_string(),
            detail: "dataset is empty".into(),
        });
    }
    let mut seen = std::collections::HashSet::new();
    for item in &items {
        if !seen.insert(item.id.as_str()) {
            return Err(HarnessError::DatasetParse {
                path: path.display().to_string(),
                detail: format!("duplicate item id {:?}", item.id),
            });
        }
    }
    Ok(items)
}

/// Ordered correctness flags per problem: row `p` holds the outcomes of the
/// independent attempts at problem `p`, in attempt order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptMatrix {
    rows: Vec<Vec<bool>>,
}

impl AttemptMatrix {
    pub fn new(rows: Vec<Vec<bool>>) -> Result<Self, HarnessError> {
        if rows.is_empty() || rows.iter().any(|r| r.is_empty()) {
            return Err(HarnessError::EmptyInput);
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[Vec<bool>] {
        &self.rows
    }
}

/// Fraction of problems with at least one correct answer among their first
/// `k` attempts.
pub fn pass_at_k(matrix: &AttemptMatrix, k: usize) -> Result<f64, HarnessError> {
    if k == 0 {
        return Err(HarnessError::InvalidK);
    }
    for row in matrix.rows() {
        if row.len() < k {
            return Err(HarnessError::InsufficientAttempts { k, got: row.len() });
        }
    }
    let solved = matrix.rows().iter().filter(|row| row[..k].iter().any(|&b| b)).count();
    Ok(solved as f64 / matrix.rows().len() as f64)
}

/// Answer normalization used by the exact-match fast path: trim, case-fold,
/// collapse internal whitespace.
pub fn normalize_answer(text: &str) -> String {
    crate::corpus::normalize_answer(text)
}

/// Adjudicates one predicted answer against the reference. Fast paths never
/// touch the backend: an empty prediction is incorrect and a normalized
/// exact match is correct. Everything else goes to the judge prompt, whose
/// CORRECT/INCORRECT verdict token is mapped to a boolean; an unparseable
/// verdict is retried once, then treated as incorrect.
pub fn judge(
    question: &str,
    predicted: &str,
    reference: &str,
    backend: &dyn ChatBackend,
) -> Result<bool, BackendError> {
    if predicted.trim().is_empty() {
        return Ok(false);
    }
    if normalize_answer(predicted) == normalize_answer(reference) {
        return Ok(true);
    }
    let prompt = JUDGE_PROMPT_TEMPLATE
        .replace("{question}", question)
        .replace("{reference}", reference)
        .replace("{predicted}", predicted);
    let messages = PromptMessages::new(vec![
        Message::system("You are a strict grader. Follow the instructions exactly."),
        Message::user(prompt),
    ])
    .expect("static prompt shape");
    for attempt in 0..2 {
        let reply = backend.complete(&messages, &SamplingParams::default())?;
        match parse_verdict(&reply) {
            Some(verdict) => return Ok(verdict),
            None => {
                tracing::warn!(attempt, %reply, "unparseable judge verdict");
            }
        }
    }
    Ok(false)
}

/// Verdict grammar: the first standalone CORRECT/INCORRECT token decides;
/// INCORRECT is checked first because CORRECT is its substring.
fn parse_verdict(reply: &str) -> Option<bool> {
    let upper = reply.to_uppercase();
    if upper.contains("INCORRECT") {
        Some(false)
    } else if upper.contains("CORRECT") {
        Some(true)
    } else {
        None
    }
}

/// Correctness adjudicator shared by the harness and the corpus builder.
pub trait AnswerJudge: Send + Sync {
    fn is_correct(
        &self,
        question: &str,
        predicted: &str,
        reference: &str,
    ) -> Result<bool, BackendError>;
}

/// Normalized exact match only; never calls a backend.
pub struct ExactMatchJudge;

impl AnswerJudge for ExactMatchJudge {
    fn is_correct(
        &self,
        _question: &str,
        predicted: &str,
        reference: &str,
    ) -> Result<bool, BackendError> {
        Ok(!predicted.trim().is_empty()
            && normalize_answer(predicted) == normalize_answer(reference))
    }
}

/// Backend-based judge with the exact-match fast path.
pub struct LlmJudge {
    backend: std::sync::Arc<dyn ChatBackend>,
}

impl LlmJudge {
    pub fn new(backend: std::sync::Arc<dyn ChatBackend>) -> Self {
        Self { backend }
    }
}

impl AnswerJudge for LlmJudge {
    fn is_correct(
        &self,
        question: &str,
        predicted: &str,
        reference: &str,
    ) -> Result<bool, BackendError> {
        judge(question, predicted, reference, self.backend.as_ref())
    }
}

/// Aggregate tool-use and depth analytics over a trajectory set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStats {
    pub avg_turns: f64,
    pub max_turns: usize,
    /// Percentage of all tool calls going to each tool; sums to 100 (±0.01)
    /// whenever any tool call exists.
    pub tool_frequency: BTreeMap<String, f64>,
    pub total_tool_calls: usize,
}

/// Computes average/maximum turn counts and the per-tool share of all tool
/// calls.
pub fn trajectory_stats(trajectories: &[Trajectory]) -> Result<TrajectoryStats, HarnessError> {
    if trajectories.is_empty() {
        return Err(HarnessError::EmptyInput);
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut total_calls = 0usize;
    let mut total_turns = 0usize;
    let mut max_turns = 0usize;
    for trajectory in trajectories {
        total_turns += trajectory.rounds.len();
        max_turns = max_turns.max(trajectory.rounds.len());
        for record in &trajectory.rounds {
            if let Action::ToolCall { tool_name, .. } = &record.response.action {
                *counts.entry(tool_name.clone()).or_insert(0) += 1;
                total_calls += 1;
            }
        }
    }
    let tool_frequency = counts
        .into_iter()
        .map(|(name, count)| (name, 100.0 * count as f64 / total_calls as f64))
        .collect();
    Ok(TrajectoryStats {
        avg_turns: total_turns as f64 / trajectories.len() as f64,
        max_turns,
        tool_frequency,
        total_tool_calls: total_calls,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ScriptedBackend;

    #[test]
    fn pass_at_1_arithmetic() {
        let matrix = AttemptMatrix::new(vec![
            vec![true],
            vec![true],
            vec![true],
            vec![false],
        ])
        .unwrap();
        assert_eq!(pass_at_k(&matrix, 1).unwrap(), 0.75);
    }

    #[test]
    fn pass_at_k_all_false_is_zero() {
        let matrix = AttemptMatrix::new(vec![vec![false, false], vec![false, false]]).unwrap();
        assert_eq!(pass_at_k(&matrix, 1).unwrap(), 0.0);
        assert_eq!(pass_at_k(&matrix, 2).unwrap(), 0.0);
    }

    #[test]
    fn pass_at_k_counts_later_attempts_only_at_higher_k() {
        let matrix = AttemptMatrix::new(vec![vec![false, true, false]]).unwrap();
        assert_eq!(pass_at_k(&matrix, 1).unwrap(), 0.0);
        assert_eq!(pass_at_k(&matrix, 2).unwrap(), 1.0);
        assert_eq!(pass_at_k(&matrix, 3).unwrap(), 1.0);
    }

    #[test]
    fn pass_at_k_requires_enough_attempts() {
        let matrix = AttemptMatrix::new(vec![vec![true]]).unwrap();
        assert!(matches!(
            pass_at_k(&matrix, 2),
            Err(HarnessError::InsufficientAttempts { k: 2, got: 1 })
        ));
    }

    struct CountingBackend {
        inner: ScriptedBackend,
        calls: std::sync::atomic::AtomicUsize,
    }

    impl CountingBackend {
        fn new(replies: Vec<String>) -> Self {
            Self {
                inner: ScriptedBackend::new(replies),
                calls: std::sync::atomic::AtomicUsize::new(0),
            }
        }
        fn calls(&self) -> usize {
            self.calls.load(std::sync::atomic::Ordering::SeqCst)
        }
    }

    impl ChatBackend for CountingBackend {
        fn complete(
            &self,
            messages: &PromptMessages,
            sampling: &SamplingParams,
        ) -> Result<String, BackendError> {
            self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            self.inner.complete(messages, sampling)
        }
    }

    #[test]
    fn judge_exact_match_fast_path_skips_backend() {
        let backend = CountingBackend::new(vec![]);
        assert!(judge("Q?", "  The Answer ", "the  answer", &backend).unwrap());
        assert_eq!(backend.calls(), 0);
    }

    #[test]
    fn judge_empty_prediction_fast_path() {
        let backend = CountingBackend::new(vec![]);
        assert!(!judge("Q?", "   ", "answer", &backend).unwrap());
        assert_eq!(backend.calls(), 0);
    }

    #[test]
    fn judge_maps_scripted_verdicts() {
        let backend = CountingBackend::new(vec!["CORRECT".into()]);
        assert!(judge("Q?", "close enough", "reference", &backend).unwrap());
        assert_eq!(backend.calls(), 1);

        let backend = CountingBackend::new(vec!["INCORRECT".into()]);
        assert!(!judge("Q?", "way off", "reference", &backend).unwrap());
    }

    #[test]
    fn judge_retries_unparseable_then_false() {
        let backend = CountingBackend::new(vec!["hmm".into(), "unclear".into()]);
        assert!(!judge("Q?", "maybe", "reference", &backend).unwrap());
        assert_eq!(backend.calls(), 2);
    }

    #[test]
    fn stats_average_and_frequency() {
        use crate::testutil::make_trajectory;
        let a = make_trajectory("q1", "t1", 3, "42");
        let b = make_trajectory("q2", "t2", 5, "42");
        let stats = trajectory_stats(&[a, b]).unwrap();
        assert_eq!(stats.avg_turns, 4.0);
        assert_eq!(stats.max_turns, 5);
        // 2 + 4 search calls; the final-answer rounds call no tool.
        assert_eq!(stats.total_tool_calls, 6);
        assert_eq!(stats.tool_frequency["search"], 100.0);
    }

    #[test]
    fn stats_percentages_split() {
        use crate::model::*;
        let question = Question::new("q", "Q?");
        let mut trajectory =
            Trajectory::new("t", question.clone(), SamplingParams::default());
        let mut workspace = Workspace::initial(question);
        let calls =
            ["search", "search", "search", "visit"];
        for (i, tool) in calls.iter().enumerate() {
            let response = RoundResponse {
                think: "t".into(),
                report: format!("r{i}"),
                action: Action::tool_call(*tool, serde_json::json!({})),
            };
            let tool_response = ToolResponse::ok(*tool, "out");
            trajectory = trajectory
                .append_round(RoundRecord {
                    workspace: workspace.clone(),
                    response: response.clone(),
                    tool_response: Some(tool_response.clone()),
                    prompt_sha256: None,
                })
                .unwrap();
            workspace = crate::engine::transition(&workspace, &response, &tool_response).unwrap();
        }
        let stats = trajectory_stats(&[trajectory]).unwrap();
        assert_eq!(stats.tool_frequency["search"], 75.0);
        assert_eq!(stats.tool_frequency["visit"], 25.0);
        let total: f64 = stats.tool_frequency.values().sum();
        assert!((total - 100.0).abs() < 0.01);
    }

    #[test]
    fn stats_empty_input_rejected() {
        assert!(matches!(trajectory_stats(&[]), Err(HarnessError::EmptyInput)));
    }
}
