//! The benchmark runner: evaluates every dataset item under a selected
//! inference mode, adjudicates answers, persists trajectories and results as
//! JSONL, and assembles a run report. Runs are resumable by item id.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::store::{read_jsonl, JsonlWriter};
use super::{judge, load_dataset, pass_at_k, trajectory_stats, AttemptMatrix, HarnessError};
use crate::backend::ChatBackend;
use crate::engine::{run_iter_research, run_mono_baseline, EngineBudget};
use crate::model::{Question, SamplingParams, Termination, Trajectory};
use crate::synthesis::{run_parallel_research_full, synthesize, ResearchOutcome, SynthesisError};
use crate::tools::ToolRegistry;

/// Inference strategy for a benchmark run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchMode {
    Iter,
    Mono,
    /// Parallel research with `n` agents plus one synthesis call.
    Synthesis(u32),
}

impl std::fmt::Display for BenchMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BenchMode::Iter => write!(f, "iter"),
            BenchMode::Mono => write!(f, "mono"),
            BenchMode::Synthesis(n) => write!(f, "synthesis-{n}"),
        }
    }
}

impl std::str::FromStr for BenchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "iter" => Ok(BenchMode::Iter),
            "mono" => Ok(BenchMode::Mono),
            other => {
                if let Some(n) = other.strip_prefix("synthesis-") {
                    let n: u32 = n.parse().map_err(|_| format!("bad mode {other:?}"))?;
                    if n == 0 {
                        return Err("synthesis-n requires n >= 1".into());
                    }
                    Ok(BenchMode::Synthesis(n))
                } else {
                    Err(format!(
                        "unknown mode {other:?}: expected iter, mono, or synthesis-<n>"
                    ))
                }
            }
        }
    }
}

/// Hands out backends per item and role so tests can script every call while
/// live runs share one client.
pub trait BackendSupplier: Send + Sync {
    /// Backend for research calls; `agent_index` is 0 for single-agent modes
    /// and 1-based for parallel agents.
    fn research_backend(&self, item_id: &str, agent_index: u32) -> Arc<dyn ChatBackend>;
    fn synthesis_backend(&self, item_id: &str) -> Arc<dyn ChatBackend>;
    fn judge_backend(&self) -> Arc<dyn ChatBackend>;
}

/// One backend per role, shared across items — the live-run shape.
pub struct SharedBackends {
    pub research: Arc<dyn ChatBackend>,
    pub synthesis: Arc<dyn ChatBackend>,
    pub judge: Arc<dyn ChatBackend>,
}

impl BackendSupplier for SharedBackends {
    fn research_backend(&self, _item_id: &str, _agent_index: u32) -> Arc<dyn ChatBackend> {
        self.research.clone()
    }
    fn synthesis_backend(&self, _item_id: &str) -> Arc<dyn ChatBackend> {
        self.synthesis.clone()
    }
    fn judge_backend(&self) -> Arc<dyn ChatBackend> {
        self.judge.clone()
    }
}

/// Everything a benchmark run needs beyond the dataset and mode.
pub struct BenchSetup<'a> {
    pub registry: &'a ToolRegistry,
    pub backends: &'a dyn BackendSupplier,
    pub budget: EngineBudget,
    pub sampling: SamplingParams,
    /// Concurrent items.
    pub permits: usize,
    /// Concurrent agents inside one synthesis item.
    pub synthesis_permits: usize,
    /// Whether a forced-final answer produced on budget exhaustion counts as
    /// the item's prediction.
    pub count_forced_final: bool,
    /// Persistence root; in-memory only when absent.
    pub out_dir: Option<PathBuf>,
    /// Run configuration echoed into the report.
    pub config_snapshot: serde_json::Value,
}

impl<'a> BenchSetup<'a> {
    pub fn new(registry: &'a ToolRegistry, backends: &'a dyn BackendSupplier) -> Self {
        Self {
            registry,
            backends,
            budget: EngineBudget::default(),
            sampling: SamplingParams::default(),
            permits: 1,
            synthesis_permits: 4,
            count_forced_final: true,
            out_dir: None,
            config_snapshot: serde_json::Value::Null,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemVerdict {
    pub id: String,
    pub predicted: String,
    pub correct: bool,
}

/// Per-outcome persistence record for synthesis runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub item_id: String,
    #[serde(flatten)]
    pub outcome: ResearchOutcome,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthesisRecord {
    pub item_id: String,
    pub final_answer: String,
    pub outcomes_used: u32,
    pub synthesis_prompt_chars: usize,
    /// The exact synthesis prompt; empty when the single-outcome bypass
    /// skipped the backend call.
    pub prompt: String,
}

/// Final report of one benchmark run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: String,
    pub pass_at_1: f64,
    pub per_item: Vec<ItemVerdict>,
    pub tool_frequency: BTreeMap<String, f64>,
    pub avg_turns: f64,
    pub max_turns: usize,
    pub config: serde_json::Value,
}

struct Stores {
    trajectories: JsonlWriter,
    results: JsonlWriter,
    outcomes: JsonlWriter,
    synthesis: JsonlWriter,
}

impl Stores {
    fn open(dir: &Path) -> Result<Self, HarnessError> {
        Ok(Self {
            trajectories: JsonlWriter::append_to(&dir.join("trajectories.jsonl"))?,
            results: JsonlWriter::append_to(&dir.join("results.jsonl"))?,
            outcomes: JsonlWriter::append_to(&dir.join("outcomes.jsonl"))?,
            synthesis: JsonlWriter::append_to(&dir.join("synthesis.jsonl"))?,
        })
    }
}

type ItemOutput = (ItemVerdict, Vec<Trajectory>);

fn answer_from(trajectory: &Trajectory, count_forced_final: bool) -> String {
    match trajectory.termination {
        Some(Termination::FinalAnswer) => trajectory.final_answer.clone().unwrap_or_default(),
        Some(Termination::BudgetExhausted) if count_forced_final => {
            trajectory.final_answer.clone().unwrap_or_default()
        }
        _ => String::new(),
    }
}

/// Runs every dataset item under `mode`, judges the answers, persists
/// trajectories/results, and reports pass@1 plus tool-use analytics.
/// Items already present in the results store are skipped (resume); per-item
/// failures score as incorrect and never abort the run.
pub fn run_benchmark(
    dataset_path: &Path,
    mode: BenchMode,
    setup: &BenchSetup,
) -> Result<RunReport, HarnessError> {
    let items = load_dataset(dataset_path)?;
    let stores = match &setup.out_dir {
        Some(dir) => Some(Stores::open(dir)?),
        None => None,
    };

    let prior_results: BTreeMap<String, ItemVerdict> = match &setup.out_dir {
        Some(dir) => read_jsonl::<ItemVerdict>(&dir.join("results.jsonl"))?
            .into_iter()
            .map(|v| (v.id.clone(), v))
            .collect(),
        None => BTreeMap::new(),
    };
    let prior_trajectories: Vec<Trajectory> = match &setup.out_dir {
        Some(dir) => read_jsonl(&dir.join("trajectories.jsonl"))?,
        None => Vec::new(),
    };

    let slots: Mutex<Vec<Option<ItemOutput>>> = Mutex::new(items.iter().map(|_| None).collect());
    let next = AtomicU32::new(0);
    let workers = setup.permits.max(1).min(items.len());
    let stores = stores.as_ref();
    let errors: Mutex<Vec<HarnessError>> = Mutex::new(Vec::new());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::SeqCst) as usize;
                if index >= items.len() {
                    break;
                }
                let item = &items[index];
                if let Some(prior) = prior_results.get(&item.id) {
                    tracing::info!(item = %item.id, "already persisted, skipping");
                    let kept: Vec<Trajectory> = prior_trajectories
                        .iter()
                        .filter(|t| t.question.id == item.id)
                        .cloned()
                        .collect();
                    slots.lock().unwrap()[index] = Some((prior.clone(), kept));
                    continue;
                }
                match evaluate_item(item, mode, setup, stores) {
                    Ok(result) => slots.lock().unwrap()[index] = Some(result),
                    Err(e) => {
                        errors.lock().unwrap().push(e);
                        // Leave the slot holding an incorrect verdict so one
                        // broken store write cannot sink the whole run.
                        slots.lock().unwrap()[index] = Some((
                            ItemVerdict {
                                id: item.id.clone(),
                                predicted: String::new(),
                                correct: false,
                            },
                            Vec::new(),
                        ));
                    }
                }
            });
        }
    });

    for error in errors.into_inner().unwrap() {
        tracing::error!(%error, "item evaluation failed; scored incorrect");
    }

    let mut per_item = Vec::with_capacity(items.len());
    let mut trajectories = Vec::new();
    for slot in slots.into_inner().unwrap() {
        let (verdict, mut item_trajectories) = slot.expect("every item evaluated");
        per_item.push(verdict);
        trajectories.append(&mut item_trajectories);
    }

    let matrix = AttemptMatrix::new(per_item.iter().map(|v| vec![v.correct]).collect())?;
    let pass_at_1 = pass_at_k(&matrix, 1)?;
    let (tool_frequency, avg_turns, max_turns) = if trajectories.is_empty() {
        (BTreeMap::new(), 0.0, 0)
    } else {
        let stats = trajectory_stats(&trajectories)?;
        (stats.tool_frequency, stats.avg_turns, stats.max_turns)
    };

    let report = RunReport {
        mode: mode.to_string(),
        pass_at_1,
        per_item,
        tool_frequency,
        avg_turns,
        max_turns,
        config: setup.config_snapshot.clone(),
    };
    if let Some(dir) = &setup.out_dir {
        let path = dir.join("report.json");
        std::fs::write(&path, serde_json::to_string_pretty(&report).expect("report serializes"))
            .map_err(|e| HarnessError::DatasetParse {
                path: path.display().to_string(),
                detail: e.to_string(),
            })?;
    }
    for verdict in &report.per_item {
        tracing::info!(item = %verdict.id, correct = verdict.correct, "item verdict");
    }
    Ok(report)
}

fn evaluate_item(
    item: &super::BenchmarkItem,
    mode: BenchMode,
    setup: &BenchSetup,
    stores: Option<&Stores>,
) -> Result<ItemOutput, HarnessError> {
    let question = Question::new(item.id.clone(), item.question_text.clone())
        .with_reference(item.reference_answer.clone());

    let (predicted, trajectories) = match mode {
        BenchMode::Iter => {
            let backend = setup.backends.research_backend(&item.id, 0);
            let trajectory = run_iter_research(
                &question,
                &setup.budget,
                backend.as_ref(),
                setup.registry,
                &setup.sampling,
            );
            (answer_from(&trajectory, setup.count_forced_final), vec![trajectory])
        }
        BenchMode::Mono => {
            let backend = setup.backends.research_backend(&item.id, 0);
            let trajectory = run_mono_baseline(
                &question,
                &setup.budget,
                backend.as_ref(),
                setup.registry,
                &setup.sampling,
            );
            (answer_from(&trajectory, setup.count_forced_final), vec![trajectory])
        }
        BenchMode::Synthesis(n) => {
            let item_id = item.id.clone();
            let backends = setup.backends;
            let run = run_parallel_research_full(
                &question,
                n,
                &setup.budget,
                &setup.sampling,
                setup.registry,
                &move |agent_index| backends.research_backend(&item_id, agent_index),
                setup.synthesis_permits,
            );
            if let Some(stores) = stores {
                for outcome in &run.outcomes {
                    stores.outcomes.append(&OutcomeRecord {
                        item_id: item.id.clone(),
                        outcome: outcome.clone(),
                    })?;
                }
            }
            let synthesis_backend = setup.backends.synthesis_backend(&item.id);
            let predicted = match synthesize(&question, &run.outcomes, synthesis_backend.as_ref())
            {
                Ok(result) => {
                    if let Some(stores) = stores {
                        let prompt = if result.outcomes_used >= 2 {
                            let usable = crate::synthesis::usable_outcomes(&run.outcomes);
                            crate::synthesis::synthesis_prompt(&question, &usable)
                                .messages()
                                .iter()
                                .map(|m| m.content.as_str())
                                .collect::<Vec<_>>()
                                .join("\n")
                        } else {
                            String::new()
                        };
                        stores.synthesis.append(&SynthesisRecord {
                            item_id: item.id.clone(),
                            final_answer: result.final_answer.clone(),
                            outcomes_used: result.outcomes_used,
                            synthesis_prompt_chars: result.synthesis_prompt_chars,
                            prompt,
                        })?;
                    }
                    result.final_answer
                }
                Err(SynthesisError::NoUsableOutcomes) => String::new(),
                Err(SynthesisError::Backend(e)) => {
                    tracing::warn!(item = %item.id, error = %e, "synthesis backend failed");
                    String::new()
                }
            };
            (predicted, run.trajectories)
        }
    };

    if let Some(stores) = stores {
        for trajectory in &trajectories {
            stores.trajectories.append(trajectory)?;
        }
    }

    let judge_backend = setup.backends.judge_backend();
    let correct = match judge(
        &item.question_text,
        &predicted,
        &item.reference_answer,
        judge_backend.as_ref(),
    ) {
        Ok(correct) => correct,
        Err(e) => {
            tracing::warn!(item = %item.id, error = %e, "judge failed; scoring incorrect");
            false
        }
    };

    let verdict = ItemVerdict { id: item.id.clone(), predicted, correct };
    if let Some(stores) = stores {
        stores.results.append(&verdict)?;
    }
    Ok((verdict, trajectories))
}

/// Recomputes trajectory analytics from a persisted store; a pure function
/// of the store contents.
pub fn stats_from_store(trajectories_path: &Path) -> Result<super::TrajectoryStats, HarnessError> {
    let trajectories: Vec<Trajectory> = read_jsonl(trajectories_path)?;
    trajectory_stats(&trajectories)
}
