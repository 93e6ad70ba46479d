//! Test-time scaling through parallel research plus one synthesis pass:
//! `n` independent research runs produce (report, answer) pairs, and a single
//! synthesis call consolidates those pairs — never the full trajectories —
//! into one final answer.

use std::sync::Arc;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::backend::ChatBackend;
use crate::engine::{run_iter_research, EngineBudget};
use crate::model::{Question, SamplingParams, Trajectory};
use crate::protocol::{parse_forced_final, Message, PromptMessages};
use crate::tools::ToolRegistry;

const SYNTHESIS_USER_TEMPLATE: &str = include_str!("../assets/synthesis_prompt.txt");
const SYNTHESIS_SYSTEM: &str =
    "You are a synthesis agent consolidating the findings of parallel research agents into one final answer.";

/// What one research agent brought back: its terminal report and answer.
/// `flagged` marks agents that finished without a usable answer; synthesis
/// excludes them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResearchOutcome {
    pub agent_index: u32,
    pub final_report: String,
    pub answer: String,
    pub trajectory_id: String,
    pub flagged: bool,
}

impl ResearchOutcome {
    pub fn from_trajectory(agent_index: u32, trajectory: &Trajectory) -> Self {
        let answer = trajectory.final_answer.clone().unwrap_or_default();
        let flagged = answer.trim().is_empty();
        Self {
            agent_index,
            final_report: trajectory.final_report().to_string(),
            answer,
            trajectory_id: trajectory.id.clone(),
            flagged,
        }
    }

    pub fn usable(&self) -> bool {
        !self.flagged && !self.answer.trim().is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesisResult {
    pub final_answer: String,
    pub outcomes_used: u32,
    pub synthesis_prompt_chars: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum SynthesisError {
    #[error("no usable outcomes: every research agent failed to produce an answer")]
    NoUsableOutcomes,
    #[error("backend failure during synthesis: {0}")]
    Backend(#[from] crate::backend::BackendError),
}

/// Everything a parallel phase produced, outcomes in agent-index order and
/// the underlying trajectories for persistence.
#[derive(Debug, Clone)]
pub struct ParallelRun {
    pub outcomes: Vec<ResearchOutcome>,
    pub trajectories: Vec<Trajectory>,
}

/// Runs `n` independent research agents on one question, each with seed
/// `base_seed + agent_index`, at most `permits` concurrently. Outcomes come
/// back in agent-index order regardless of completion order; agents that
/// finish without an answer yield flagged outcomes rather than failing the
/// batch.
#[allow(clippy::too_many_arguments)]
pub fn run_parallel_research_full(
    question: &Question,
    n: u32,
    budget: &EngineBudget,
    sampling: &SamplingParams,
    registry: &ToolRegistry,
    backend_for_agent: &(dyn Fn(u32) -> Arc<dyn ChatBackend> + Sync),
    permits: usize,
) -> ParallelRun {
    assert!(n >= 1, "n must be >= 1");
    let permits = permits.max(1);
    let slots: Mutex<Vec<Option<(ResearchOutcome, Trajectory)>>> =
        Mutex::new((0..n).map(|_| None).collect());
    let next_index = std::sync::atomic::AtomicU32::new(1);

    std::thread::scope(|scope| {
        for _worker in 0..permits.min(n as usize) {
            scope.spawn(|| loop {
                let agent_index =
                    next_index.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if agent_index > n {
                    break;
                }
                let agent_sampling = SamplingParams {
                    seed: sampling.seed + agent_index as u64,
                    ..sampling.clone()
                };
                let backend = backend_for_agent(agent_index);
                let mut trajectory =
                    run_iter_research(question, budget, backend.as_ref(), registry, &agent_sampling);
                trajectory.id = format!("{}-a{}", trajectory.id, agent_index);
                let outcome = ResearchOutcome::from_trajectory(agent_index, &trajectory);
                slots.lock().unwrap()[agent_index as usize - 1] = Some((outcome, trajectory));
            });
        }
    });

    let mut outcomes = Vec::with_capacity(n as usize);
    let mut trajectories = Vec::with_capacity(n as usize);
    for slot in slots.into_inner().unwrap() {
        let (outcome, trajectory) = slot.expect("every agent slot filled");
        outcomes.push(outcome);
        trajectories.push(trajectory);
    }
    ParallelRun { outcomes, trajectories }
}

/// Spec-shaped convenience over [`run_parallel_research_full`].
#[allow(clippy::too_many_arguments)]
pub fn run_parallel_research(
    question: &Question,
    n: u32,
    budget: &EngineBudget,
    sampling: &SamplingParams,
    registry: &ToolRegistry,
    backend_for_agent: &(dyn Fn(u32) -> Arc<dyn ChatBackend> + Sync),
    permits: usize,
) -> Vec<ResearchOutcome> {
    run_parallel_research_full(question, n, budget, sampling, registry, backend_for_agent, permits)
        .outcomes
}

/// The outcomes synthesis will actually consume, in the given order.
pub fn usable_outcomes(outcomes: &[ResearchOutcome]) -> Vec<&ResearchOutcome> {
    outcomes.iter().filter(|o| o.usable()).collect()
}

/// Builds the synthesis prompt over the usable outcomes. Public so the
/// harness can persist the exact prompt alongside the result.
pub fn synthesis_prompt(question: &Question, usable: &[&ResearchOutcome]) -> PromptMessages {
    let mut blocks = String::new();
    for outcome in usable {
        blocks.push_str(&format!(
            "Research agent {index} report:\n{report}\nResearch agent {index} answer: {answer}\n\n",
            index = outcome.agent_index,
            report = outcome.final_report,
            answer = outcome.answer,
        ));
    }
    let user = SYNTHESIS_USER_TEMPLATE
        .replace("{question}", &question.text)
        .replace("{outcomes}", &blocks);
    PromptMessages::new(vec![Message::system(SYNTHESIS_SYSTEM), Message::user(user)])
        .expect("static prompt shape")
}

/// Consolidates outcomes into one final answer. With exactly one usable
/// outcome the answer is returned verbatim with zero backend calls;
/// otherwise one synthesis prompt embeds every usable (report, answer) pair
/// and the backend's `<answer>` is extracted (whole reply as fallback).
pub fn synthesize(
    question: &Question,
    outcomes: &[ResearchOutcome],
    backend: &dyn ChatBackend,
) -> Result<SynthesisResult, SynthesisError> {
    let usable = usable_outcomes(outcomes);
    if usable.is_empty() {
        return Err(SynthesisError::NoUsableOutcomes);
    }
    if usable.len() == 1 {
        return Ok(SynthesisResult {
            final_answer: usable[0].answer.clone(),
            outcomes_used: 1,
            synthesis_prompt_chars: 0,
        });
    }

    let messages = synthesis_prompt(question, &usable);
    let prompt_chars: usize =
        messages.messages().iter().map(|m| m.content.chars().count()).sum();
    let reply = backend.complete(&messages, &SamplingParams::default())?;
    let final_answer = match parse_forced_final(&reply) {
        Ok(answer) => {
            let justification = reply.split("</answer>").nth(1).unwrap_or("").trim();
            if !justification.is_empty() {
                tracing::info!(%justification, "synthesis justification");
            }
            answer
        }
        Err(_) => reply.trim().to_string(),
    };
    Ok(SynthesisResult {
        final_answer,
        outcomes_used: usable.len() as u32,
        synthesis_prompt_chars: prompt_chars,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ScriptedBackend;
    use crate::model::Action;
    use crate::protocol::emit_round_response;
    use crate::tools::{MockTransport, SearchResult, ToolConfig, ToolRegistry};

    fn registry() -> ToolRegistry {
        let transport = Arc::new(MockTransport::new().with_search(
            "q",
            vec![SearchResult {
                title: "T".into(),
                snippet: "S".into(),
                url: "https://example.com".into(),
            }],
        ));
        ToolRegistry::standard(
            ToolConfig::default(),
            transport,
            Arc::new(ScriptedBackend::new(vec![])),
        )
    }

    fn agent_script(answer: &str) -> Vec<String> {
        vec![
            emit_round_response(&crate::model::RoundResponse {
                think: "t".into(),
                report: "r1".into(),
                action: Action::tool_call("search", serde_json::json!({"queries": ["q"]})),
            }),
            emit_round_response(&crate::model::RoundResponse {
                think: "t".into(),
                report: format!("final report for {answer}"),
                action: Action::final_answer(answer),
            }),
        ]
    }

    fn question() -> Question {
        Question::new("q", "Q?")
    }

    #[test]
    fn n1_equals_plain_single_run() {
        let registry = registry();
        let budget = EngineBudget::default();
        let sampling = SamplingParams::default();

        let factory = |_: u32| -> Arc<dyn ChatBackend> {
            Arc::new(ScriptedBackend::new(agent_script("42")))
        };
        let run = run_parallel_research_full(
            &question(),
            1,
            &budget,
            &sampling,
            &registry,
            &factory,
            4,
        );
        assert_eq!(run.outcomes.len(), 1);

        // The same script through the plain engine, at the agent's seed.
        let backend = ScriptedBackend::new(agent_script("42"));
        let solo_sampling = SamplingParams { seed: sampling.seed + 1, ..sampling.clone() };
        let solo = run_iter_research(&question(), &budget, &backend, &registry, &solo_sampling);
        assert_eq!(run.outcomes[0].answer, solo.final_answer.clone().unwrap());
        assert_eq!(run.outcomes[0].final_report, solo.final_report());
        assert_eq!(run.trajectories[0].rounds, solo.rounds);

        // End-to-end: synthesis over the single outcome is exactly its answer.
        let silent = ScriptedBackend::new(vec![]);
        let result = synthesize(&question(), &run.outcomes, &silent).unwrap();
        assert_eq!(result.final_answer, solo.final_answer.unwrap());
    }

    #[test]
    fn n8_outcomes_arrive_in_agent_order() {
        let registry = registry();
        let scripts: Vec<Vec<String>> =
            (1..=8).map(|i| agent_script(&format!("answer-{i}"))).collect();
        let factory = move |agent_index: u32| -> Arc<dyn ChatBackend> {
            Arc::new(ScriptedBackend::new(scripts[agent_index as usize - 1].clone()))
        };
        let run = run_parallel_research_full(
            &question(),
            8,
            &EngineBudget::default(),
            &SamplingParams::default(),
            &registry,
            &factory,
            3,
        );
        assert_eq!(run.outcomes.len(), 8);
        for (i, outcome) in run.outcomes.iter().enumerate() {
            assert_eq!(outcome.agent_index, i as u32 + 1);
            assert_eq!(outcome.answer, format!("answer-{}", i + 1));
            assert!(!outcome.flagged);
        }
        // Independent seeds: base + agent_index.
        for (i, trajectory) in run.trajectories.iter().enumerate() {
            assert_eq!(trajectory.sampling.seed, i as u64 + 1);
        }
    }

    #[test]
    fn failed_agent_is_flagged_not_fatal() {
        let registry = registry();
        let factory = |agent_index: u32| -> Arc<dyn ChatBackend> {
            if agent_index == 2 {
                Arc::new(ScriptedBackend::new(vec![])) // immediate backend failure
            } else {
                Arc::new(ScriptedBackend::new(agent_script("42")))
            }
        };
        let run = run_parallel_research_full(
            &question(),
            3,
            &EngineBudget::default(),
            &SamplingParams::default(),
            &registry,
            &factory,
            2,
        );
        assert!(!run.outcomes[0].flagged);
        assert!(run.outcomes[1].flagged);
        assert_eq!(run.outcomes[1].answer, "");
        assert!(!run.outcomes[2].flagged);
    }

    fn outcome(index: u32, report: &str, answer: &str) -> ResearchOutcome {
        ResearchOutcome {
            agent_index: index,
            final_report: report.into(),
            answer: answer.into(),
            trajectory_id: format!("t{index}"),
            flagged: answer.trim().is_empty(),
        }
    }

    struct CountingBackend {
        inner: crate::backend::ScriptedBackend,
        calls: std::sync::atomic::AtomicUsize,
    }

    impl CountingBackend {
        fn new(replies: Vec<String>) -> Self {
            Self {
                inner: crate::backend::ScriptedBackend::new(replies),
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
        ) -> Result<String, crate::backend::BackendError> {
            self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            self.inner.complete(messages, sampling)
        }
    }

    #[test]
    fn single_usable_outcome_bypasses_backend() {
        let backend = CountingBackend::new(vec!["<answer>ignored</answer>".into()]);
        let outcomes = vec![outcome(1, "report", "42"), outcome(2, "report", "")];
        let result =
            synthesize(&Question::new("q", "Q?"), &outcomes, &backend).unwrap();
        assert_eq!(result.final_answer, "42");
        assert_eq!(result.outcomes_used, 1);
        assert_eq!(result.synthesis_prompt_chars, 0);
        assert_eq!(backend.calls(), 0);
    }

    #[test]
    fn consensus_outcomes_synthesize_via_backend() {
        let backend = CountingBackend::new(vec![
            "<answer>Paris</answer> all three agents agree".into(),
        ]);
        let outcomes = vec![
            outcome(1, "r1", "Paris"),
            outcome(2, "r2", "Paris"),
            outcome(3, "r3", "Paris"),
        ];
        let result =
            synthesize(&Question::new("q", "Capital of France?"), &outcomes, &backend).unwrap();
        assert_eq!(result.final_answer, "Paris");
        assert_eq!(result.outcomes_used, 3);
        assert!(result.synthesis_prompt_chars > 0);
        assert_eq!(backend.calls(), 1);
    }

    #[test]
    fn all_flagged_is_no_usable_outcomes() {
        let backend = CountingBackend::new(vec![]);
        let outcomes = vec![outcome(1, "r", ""), outcome(2, "r", "")];
        assert!(matches!(
            synthesize(&Question::new("q", "Q?"), &outcomes, &backend),
            Err(SynthesisError::NoUsableOutcomes)
        ));
    }

    #[test]
    fn prompt_embeds_pairs_not_trajectories() {
        let question = Question::new("q", "Q?");
        let a = outcome(1, "report one", "A1");
        let b = outcome(2, "report two", "A2");
        let messages = synthesis_prompt(&question, &[&a, &b]);
        let user = &messages.messages()[1].content;
        assert!(user.contains("report one"));
        assert!(user.contains("Research agent 2 answer: A2"));
    }

    #[test]
    fn permuting_outcomes_preserves_embedded_pair_set() {
        let question = Question::new("q", "Q?");
        let a = outcome(1, "report one", "A1");
        let b = outcome(2, "report two", "A2");
        let fwd = synthesis_prompt(&question, &[&a, &b]);
        let rev = synthesis_prompt(&question, &[&b, &a]);
        for needle in [
            "Research agent 1 report:\nreport one",
            "Research agent 2 report:\nreport two",
            "Research agent 1 answer: A1",
            "Research agent 2 answer: A2",
        ] {
            assert!(fwd.messages()[1].content.contains(needle));
            assert!(rev.messages()[1].content.contains(needle));
        }
        assert_ne!(fwd, rev);
    }

    #[test]
    fn prompt_size_tracks_report_sizes_only() {
        let question = Question::new("q", "Q?");
        let small_a = outcome(1, &"x".repeat(100), "A");
        let small_b = outcome(2, &"y".repeat(100), "B");
        let big_a = outcome(1, &"x".repeat(1000), "A");
        let big_b = outcome(2, &"y".repeat(1000), "B");
        let small = synthesis_prompt(&question, &[&small_a, &small_b]);
        let big = synthesis_prompt(&question, &[&big_a, &big_b]);
        let small_chars: usize =
            small.messages().iter().map(|m| m.content.chars().count()).sum();
        let big_chars: usize = big.messages().iter().map(|m| m.content.chars().count()).sum();
        assert_eq!(big_chars - small_chars, 2 * 900);
    }
}
