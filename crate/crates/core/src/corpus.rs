//! Turns rollout trajectories into a training corpus: rejection filtering,
//! per-round decomposition, terminal-reward broadcast, group advantage
//! normalization, minimal-loss downsampling, and the clipped surrogate
//! objective as a pure scalar computation.
//!
//! Everything here operates on values; likelihood ratios arrive as plain
//! inputs and no gradients are computed.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::harness::AnswerJudge;
use crate::model::{validate_trajectory, RunMode, Trajectory};
use crate::protocol::{emit_round_response, prompt_fingerprint, render_workspace};
use crate::tools::ToolSpec;

/// One (state render, response) pair produced by round decomposition, plus
/// its reward and normalized advantage once assigned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub question_id: String,
    /// 1-based rollout index within the question group.
    pub rollout_index: u32,
    /// 1-based round index within the rollout.
    pub round_index: u32,
    pub state_render: String,
    pub response_text: String,
    pub reward: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advantage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub num_questions: usize,
    /// Largest rollout count over any question group.
    pub rollouts_per_question: usize,
    pub total_samples: usize,
    pub retained_samples: usize,
    pub dropped: usize,
}

/// Scalar-objective configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GspoConfig {
    pub epsilon: f64,
    pub dp_size: usize,
    pub sigma_floor: f64,
}

impl Default for GspoConfig {
    fn default() -> Self {
        Self { epsilon: 0.2, dp_size: 8, sigma_floor: 1e-6 }
    }
}

impl GspoConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(CorpusError::InvalidConfig("epsilon must be in (0,1)".into()));
        }
        if self.dp_size < 1 {
            return Err(CorpusError::InvalidConfig("dp_size must be >= 1".into()));
        }
        if self.sigma_floor < 0.0 {
            return Err(CorpusError::InvalidConfig("sigma_floor must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("question {0} is missing a reference answer")]
    MissingReference(String),
    #[error("trajectory {0} is invalid: {1}")]
    InvalidTrajectory(String, String),
    #[error("trajectory {0} has zero rounds")]
    EmptyTrajectory(String),
    #[error("trajectory {0} was produced in mono mode; decomposition requires iterative rollouts")]
    MonoTrajectory(String),
    #[error("recomputed prompt for trajectory {trajectory} round {round} does not match the rollout-time fingerprint")]
    RenderMismatch { trajectory: String, round: u32 },
    #[error("sample ({question_id}, g={rollout_index}) does not correspond to any given trajectory")]
    UnknownRollout { question_id: String, rollout_index: u32 },
    #[error("sample group is empty")]
    EmptyGroup,
    #[error("samples in one group must share a question_id")]
    MixedGroup,
    #[error("{got} samples cannot fill one data-parallel slice of {dp_size}")]
    InsufficientSamples { got: usize, dp_size: usize },
    #[error("advantages and ratios differ in length ({advantages} vs {ratios})")]
    LengthMismatch { advantages: usize, ratios: usize },
    #[error("importance ratio at index {0} is not positive")]
    NonPositiveRatio(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("judge failed: {0}")]
    Judge(#[from] crate::backend::BackendError),
}

/// Answer normalization shared by the exact-match fast path: trim, case-fold,
/// collapse internal whitespace.
pub fn normalize_answer(text: &str) -> String {
    text.trim().to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

fn trajectory_is_correct(
    trajectory: &Trajectory,
    judge: &dyn AnswerJudge,
    strict_exact: bool,
) -> Result<bool, CorpusError> {
    let reference = trajectory
        .question
        .reference_answer
        .as_deref()
        .ok_or_else(|| CorpusError::MissingReference(trajectory.question.id.clone()))?;
    let Some(answer) = trajectory.final_answer.as_deref() else {
        return Ok(false);
    };
    if answer.trim().is_empty() {
        return Ok(false);
    }
    if normalize_answer(answer) == normalize_answer(reference) {
        return Ok(true);
    }
    if strict_exact {
        return Ok(false);
    }
    Ok(judge.is_correct(&trajectory.question.text, answer, reference)?)
}

/// Rejection filtering: keeps exactly the trajectories whose final answer is
/// correct. Exact normalized matches never consult the judge; with
/// `strict_exact` (the default posture) nothing else is accepted. Order is
/// preserved and the operation is idempotent.
pub fn rft_filter(
    trajectories: &[Trajectory],
    judge: &dyn AnswerJudge,
    strict_exact: bool,
) -> Result<Vec<Trajectory>, CorpusError> {
    let mut retained = Vec::new();
    for trajectory in trajectories {
        if trajectory_is_correct(trajectory, judge, strict_exact)? {
            retained.push(trajectory.clone());
        }
    }
    Ok(retained)
}

/// Assigns 1-based rollout indices per question group, in input order.
fn rollout_indices(trajectories: &[Trajectory]) -> Vec<u32> {
    let mut counters: HashMap<&str, u32> = HashMap::new();
    trajectories
        .iter()
        .map(|t| {
            let counter = counters.entry(t.question.id.as_str()).or_insert(0);
            *counter += 1;
            *counter
        })
        .collect()
}

/// Decomposes every round of every rollout into an independent training
/// sample: per question `i` the count is the sum of rollout lengths. The
/// state render is recomputed from the recorded workspace and checked
/// against the rollout-time fingerprint when one was recorded; the response
/// text is the canonical emission of the structured reply and excludes the
/// tool observation.
///
/// Rewards are zero-initialized; see [`assign_rewards`].
pub fn decompose_rounds(
    trajectories: &[Trajectory],
    specs: &[ToolSpec],
) -> Result<Vec<TrainingSample>, CorpusError> {
    let indices = rollout_indices(trajectories);
    let mut samples = Vec::new();
    for (trajectory, rollout_index) in trajectories.iter().zip(indices) {
        if trajectory.mode == RunMode::Mono {
            return Err(CorpusError::MonoTrajectory(trajectory.id.clone()));
        }
        let violations = validate_trajectory(trajectory);
        if !violations.is_empty() {
            return Err(CorpusError::InvalidTrajectory(
                trajectory.id.clone(),
                violations[0].to_string(),
            ));
        }
        if trajectory.rounds.is_empty() {
            return Err(CorpusError::EmptyTrajectory(trajectory.id.clone()));
        }
        for record in &trajectory.rounds {
            let messages = render_workspace(&record.workspace, specs).map_err(|e| {
                CorpusError::InvalidTrajectory(trajectory.id.clone(), e.to_string())
            })?;
            if let Some(recorded) = &record.prompt_sha256 {
                if *recorded != prompt_fingerprint(&messages) {
                    return Err(CorpusError::RenderMismatch {
                        trajectory: trajectory.id.clone(),
                        round: record.workspace.round_index,
                    });
                }
            }
            let state_render = serde_json::to_string(&messages).expect("messages serialize");
            samples.push(TrainingSample {
                question_id: trajectory.question.id.clone(),
                rollout_index,
                round_index: record.workspace.round_index,
                state_render,
                response_text: emit_round_response(&record.response),
                reward: 0.0,
                advantage: None,
            });
        }
    }
    Ok(samples)
}

/// The sample count the mono-contextual accounting would yield for the same
/// rollouts: one per trajectory.
pub fn mono_equivalent_sample_count(trajectories: &[Trajectory]) -> usize {
    trajectories.len()
}

/// Broadcasts each trajectory's terminal correctness to every one of its
/// round samples: reward 1.0 when the final answer is judged correct, else
/// 0.0.
pub fn assign_rewards(
    samples: Vec<TrainingSample>,
    trajectories: &[Trajectory],
    judge: &dyn AnswerJudge,
    strict_exact: bool,
) -> Result<Vec<TrainingSample>, CorpusError> {
    let indices = rollout_indices(trajectories);
    let mut rewards: HashMap<(String, u32), f64> = HashMap::new();
    for (trajectory, rollout_index) in trajectories.iter().zip(indices) {
        let correct = trajectory_is_correct(trajectory, judge, strict_exact)?;
        rewards.insert(
            (trajectory.question.id.clone(), rollout_index),
            if correct { 1.0 } else { 0.0 },
        );
    }
    samples
        .into_iter()
        .map(|mut sample| {
            let key = (sample.question_id.clone(), sample.rollout_index);
            match rewards.get(&key) {
                Some(reward) => {
                    sample.reward = *reward;
                    Ok(sample)
                }
                None => Err(CorpusError::UnknownRollout {
                    question_id: key.0,
                    rollout_index: key.1,
                }),
            }
        })
        .collect()
}

/// Normalizes advantages over one question group: every round of every
/// rollout for the question forms a single group, and the advantage is
/// `(r − μ) / σ` with population statistics over the whole group. Degenerate
/// groups (σ below `sigma_floor`) get all-zero advantages.
pub fn normalize_advantages(
    mut samples: Vec<TrainingSample>,
    sigma_floor: f64,
) -> Result<Vec<TrainingSample>, CorpusError> {
    if samples.is_empty() {
        return Err(CorpusError::EmptyGroup);
    }
    let question_id = samples[0].question_id.clone();
    if samples.iter().any(|s| s.question_id != question_id) {
        return Err(CorpusError::MixedGroup);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().map(|s| s.reward).sum::<f64>() / n;
    let variance = samples.iter().map(|s| (s.reward - mean).powi(2)).sum::<f64>() / n;
    let sigma = variance.sqrt();
    for sample in &mut samples {
        sample.advantage =
            Some(if sigma < sigma_floor { 0.0 } else { (sample.reward - mean) / sigma });
    }
    Ok(samples)
}

/// Applies [`normalize_advantages`] to every question group in a mixed
/// corpus, preserving sample order.
pub fn normalize_advantages_grouped(
    samples: Vec<TrainingSample>,
    sigma_floor: f64,
) -> Result<Vec<TrainingSample>, CorpusError> {
    if samples.is_empty() {
        return Err(CorpusError::EmptyGroup);
    }
    let mut group_stats: HashMap<String, (f64, f64, f64)> = HashMap::new();
    for sample in &samples {
        let entry = group_stats.entry(sample.question_id.clone()).or_insert((0.0, 0.0, 0.0));
        entry.0 += 1.0;
        entry.1 += sample.reward;
        entry.2 += sample.reward * sample.reward;
    }
    let mut samples = samples;
    for sample in &mut samples {
        let (n, sum, sum_sq) = group_stats[&sample.question_id];
        let mean = sum / n;
        let variance = (sum_sq / n - mean * mean).max(0.0);
        let sigma = variance.sqrt();
        sample.advantage =
            Some(if sigma < sigma_floor { 0.0 } else { (sample.reward - mean) / sigma });
    }
    Ok(samples)
}

/// Minimal-loss downsampling: a seeded uniform shuffle followed by
/// truncation to the largest multiple of `dp_size` not exceeding the input
/// size. Deterministic for a fixed seed; the loss is always `< dp_size`.
pub fn downsample(
    samples: Vec<TrainingSample>,
    dp_size: usize,
    seed: u64,
) -> Result<Vec<TrainingSample>, CorpusError> {
    if dp_size < 1 {
        return Err(CorpusError::InvalidConfig("dp_size must be >= 1".into()));
    }
    if samples.len() < dp_size {
        return Err(CorpusError::InsufficientSamples { got: samples.len(), dp_size });
    }
    let retained_count = (samples.len() / dp_size) * dp_size;
    let mut samples = samples;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    samples.shuffle(&mut rng);
    samples.truncate(retained_count);
    Ok(samples)
}

/// The clipped importance-weighted surrogate as a pure scalar:
/// `(1/|C|) Σ min(ρÂ, clip(ρ, 1−ε, 1+ε)Â)`. Ratios are supplied externally;
/// likelihood computation is out of scope by design.
pub fn gspo_surrogate(
    advantages: &[f64],
    ratios: &[f64],
    epsilon: f64,
) -> Result<f64, CorpusError> {
    if advantages.len() != ratios.len() {
        return Err(CorpusError::LengthMismatch {
            advantages: advantages.len(),
            ratios: ratios.len(),
        });
    }
    if advantages.is_empty() {
        return Err(CorpusError::EmptyGroup);
    }
    if epsilon <= 0.0 {
        return Err(CorpusError::InvalidConfig("epsilon must be positive".into()));
    }
    for (i, ratio) in ratios.iter().enumerate() {
        if !ratio.is_finite() || *ratio <= 0.0 {
            return Err(CorpusError::NonPositiveRatio(i));
        }
    }
    let total: f64 = advantages
        .iter()
        .zip(ratios)
        .map(|(advantage, ratio)| {
            let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
            (ratio * advantage).min(clipped * advantage)
        })
        .sum();
    Ok(total / advantages.len() as f64)
}

/// Summary of a corpus build over the post-filter trajectories.
pub fn corpus_stats(trajectories: &[Trajectory], retained_samples: usize) -> CorpusStats {
    let mut group_sizes: HashMap<&str, usize> = HashMap::new();
    let mut total_samples = 0;
    for trajectory in trajectories {
        *group_sizes.entry(trajectory.question.id.as_str()).or_insert(0) += 1;
        total_samples += trajectory.rounds.len();
    }
    CorpusStats {
        num_questions: group_sizes.len(),
        rollouts_per_question: group_sizes.values().copied().max().unwrap_or(0),
        total_samples,
        retained_samples,
        dropped: total_samples.saturating_sub(retained_samples),
    }
}

/// Options for the end-to-end corpus pipeline.
#[derive(Debug, Clone)]
pub struct CorpusBuildOptions {
    pub apply_rft: bool,
    pub strict_exact: bool,
    pub dp_size: usize,
    pub seed: u64,
    pub sigma_floor: f64,
}

impl Default for CorpusBuildOptions {
    fn default() -> Self {
        Self { apply_rft: true, strict_exact: true, dp_size: 8, seed: 0, sigma_floor: 1e-6 }
    }
}

/// Full pipeline: optional rejection filtering, round decomposition, reward
/// broadcast, per-group advantage normalization, and minimal-loss
/// downsampling.
pub fn build_corpus(
    trajectories: &[Trajectory],
    specs: &[ToolSpec],
    judge: &dyn AnswerJudge,
    options: &CorpusBuildOptions,
) -> Result<(Vec<TrainingSample>, CorpusStats), CorpusError> {
    let filtered;
    let working: &[Trajectory] = if options.apply_rft {
        filtered = rft_filter(trajectories, judge, options.strict_exact)?;
        &filtered
    } else {
        trajectories
    };
    let samples = decompose_rounds(working, specs)?;
    let samples = assign_rewards(samples, working, judge, options.strict_exact)?;
    let samples = normalize_advantages_grouped(samples, options.sigma_floor)?;
    let samples = downsample(samples, options.dp_size, options.seed)?;
    let stats = corpus_stats(working, samples.len());
    Ok((samples, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::ExactMatchJudge;
    use crate::model::Termination;
    use crate::testutil::make_trajectory;

    fn judge() -> ExactMatchJudge {
        ExactMatchJudge
    }

    #[test]
    fn rft_retains_exact_match_without_judge() {
        let keep = make_trajectory("q1", "t1", 2, "42");
        let drop = make_trajectory("q1", "t2", 2, "7");
        let out = rft_filter(&[keep.clone(), drop], &judge(), true).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].id, "t1");
    }

    #[test]
    fn rft_drops_parse_failures() {
        let mut t = make_trajectory("q1", "t1", 2, "42");
        t.final_answer = None;
        t.termination = Some(Termination::ParseFailure);
        let out = rft_filter(&[t], &judge(), true).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn rft_is_idempotent() {
        let set = vec![
            make_trajectory("q1", "t1", 2, "42"),
            make_trajectory("q1", "t2", 3, "no"),
            make_trajectory("q2", "t3", 1, "42"),
        ];
        let once = rft_filter(&set, &judge(), true).unwrap();
        let twice = rft_filter(&once, &judge(), true).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn rft_requires_reference() {
        let mut t = make_trajectory("q1", "t1", 1, "42");
        t.question.reference_answer = None;
        assert!(matches!(
            rft_filter(&[t], &judge(), true),
            Err(CorpusError::MissingReference(_))
        ));
    }

    #[test]
    fn decompose_counts_sum_of_rounds() {
        let set = vec![
            make_trajectory("q1", "t1", 3, "42"),
            make_trajectory("q1", "t2", 5, "42"),
            make_trajectory("q1", "t3", 2, "42"),
        ];
        let samples = decompose_rounds(&set, &[]).unwrap();
        assert_eq!(samples.len(), 10);
        assert_eq!(mono_equivalent_sample_count(&set), 3);
        // Amplification: 10 round-level samples vs 3 trajectory-level ones.
        assert!((samples.len() as f64 / 3.0 - 10.0 / 3.0).abs() < 1e-12);
        let g: Vec<u32> = samples.iter().map(|s| s.rollout_index).collect();
        assert_eq!(&g[..3], &[1, 1, 1]);
        assert_eq!(&g[3..8], &[2, 2, 2, 2, 2]);
        assert_eq!(&g[8..], &[3, 3]);
    }

    #[test]
    fn rft_retains_budget_exhausted_with_answer() {
        let mut t = make_trajectory("q1", "t1", 2, "ignored");
        // Simulate a forced-final answer: last round stays a tool call.
        t.rounds[1].response.action =
            crate::model::Action::tool_call("search", serde_json::json!({"queries": ["x"]}));
        t.rounds[1].tool_response = Some(crate::model::ToolResponse::ok("search", "obs"));
        t.final_answer = Some("42".into());
        t.termination = Some(Termination::BudgetExhausted);
        let out = rft_filter(&[t], &judge(), true).unwrap();
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn decompose_rejects_zero_round_trajectory() {
        let mut t = make_trajectory("q1", "t1", 1, "42");
        t.rounds.clear();
        t.final_answer = None;
        t.termination = Some(Termination::ParseFailure);
        assert!(matches!(
            decompose_rounds(&[t], &[]),
            Err(CorpusError::EmptyTrajectory(_))
        ));
    }

    #[test]
    fn decompose_rejects_mono_mode() {
        let t = make_trajectory("q1", "t1", 2, "42").with_mode(crate::model::RunMode::Mono);
        assert!(matches!(
            decompose_rounds(&[t], &[]),
            Err(CorpusError::MonoTrajectory(_))
        ));
    }

    #[test]
    fn decompose_flags_render_mismatch() {
        let mut t = make_trajectory("q1", "t1", 2, "42");
        t.rounds[0].prompt_sha256 = Some("not-the-real-fingerprint".into());
        assert!(matches!(
            decompose_rounds(&[t], &[]),
            Err(CorpusError::RenderMismatch { round: 1, .. })
        ));
    }

    #[test]
    fn decompose_response_text_excludes_tool_output() {
        let t = make_trajectory("q1", "t1", 2, "42");
        let samples = decompose_rounds(&[t], &[]).unwrap();
        assert!(samples[0].response_text.contains("<report>report 1</report>"));
        assert!(!samples[0].response_text.contains("obs 1"));
    }

    #[test]
    fn rewards_broadcast_terminal_correctness() {
        let correct = make_trajectory("q1", "t1", 5, "42");
        let wrong = make_trajectory("q1", "t2", 3, "7");
        let set = vec![correct, wrong];
        let samples = decompose_rounds(&set, &[]).unwrap();
        let samples = assign_rewards(samples, &set, &judge(), true).unwrap();
        assert!(samples.iter().filter(|s| s.rollout_index == 1).all(|s| s.reward == 1.0));
        assert!(samples.iter().filter(|s| s.rollout_index == 2).all(|s| s.reward == 0.0));
    }

    #[test]
    fn normalize_closed_form_group() {
        let samples: Vec<TrainingSample> = [1.0, 0.0, 0.0, 1.0]
            .iter()
            .enumerate()
            .map(|(i, r)| TrainingSample {
                question_id: "q".into(),
                rollout_index: i as u32 + 1,
                round_index: 1,
                state_render: "s".into(),
                response_text: "r".into(),
                reward: *r,
                advantage: None,
            })
            .collect();
        let out = normalize_advantages(samples, 1e-6).unwrap();
        let advantages: Vec<f64> = out.iter().map(|s| s.advantage.unwrap()).collect();
        assert_eq!(advantages, vec![1.0, -1.0, -1.0, 1.0]);
    }

    #[test]
    fn normalize_all_equal_is_zero() {
        let samples: Vec<TrainingSample> = (0..4)
            .map(|i| TrainingSample {
                question_id: "q".into(),
                rollout_index: i + 1,
                round_index: 1,
                state_render: "s".into(),
                response_text: "r".into(),
                reward: 1.0,
                advantage: None,
            })
            .collect();
        let out = normalize_advantages(samples, 1e-6).unwrap();
        assert!(out.iter().all(|s| s.advantage == Some(0.0)));
    }

    #[test]
    fn normalize_two_sample_group() {
        let samples: Vec<TrainingSample> = [1.0, 0.0]
            .iter()
            .enumerate()
            .map(|(i, r)| TrainingSample {
                question_id: "q".into(),
                rollout_index: i as u32 + 1,
                round_index: 1,
                state_render: "s".into(),
                response_text: "r".into(),
                reward: *r,
                advantage: None,
            })
            .collect();
        let out = normalize_advantages(samples, 1e-6).unwrap();
        let advantages: Vec<f64> = out.iter().map(|s| s.advantage.unwrap()).collect();
        assert_eq!(advantages, vec![1.0, -1.0]);
    }

    fn dummy_samples(n: usize) -> Vec<TrainingSample> {
        (0..n)
            .map(|i| TrainingSample {
                question_id: "q".into(),
                rollout_index: 1,
                round_index: i as u32 + 1,
                state_render: format!("s{i}"),
                response_text: format!("r{i}"),
                reward: 0.0,
                advantage: None,
            })
            .collect()
    }

    #[test]
    fn downsample_floor_arithmetic() {
        let out = downsample(dummy_samples(103), 8, 7).unwrap();
        assert_eq!(out.len(), 96);
    }

    #[test]
    fn downsample_exact_multiple_keeps_all() {
        let input = dummy_samples(96);
        let out = downsample(input.clone(), 8, 7).unwrap();
        assert_eq!(out.len(), 96);
        let mut sorted: Vec<u32> = out.iter().map(|s| s.round_index).collect();
        sorted.sort_unstable();
        assert_eq!(sorted, (1..=96).collect::<Vec<_>>());
    }

    #[test]
    fn downsample_insufficient_samples() {
        assert!(matches!(
            downsample(dummy_samples(7), 8, 0),
            Err(CorpusError::InsufficientSamples { got: 7, dp_size: 8 })
        ));
    }

    #[test]
    fn downsample_is_seed_deterministic() {
        let a = downsample(dummy_samples(20), 8, 5).unwrap();
        let b = downsample(dummy_samples(20), 8, 5).unwrap();
        let c = downsample(dummy_samples(20), 8, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    /// Independent element-wise oracle: both branch values enumerated
    /// explicitly, clip spelled out, mean accumulated separately.
    fn gspo_oracle(advantages: &[f64], ratios: &[f64], epsilon: f64) -> f64 {
        let mut acc = 0.0;
        for i in 0..advantages.len() {
            let rho = ratios[i];
            let clip = if rho < 1.0 - epsilon {
                1.0 - epsilon
            } else if rho > 1.0 + epsilon {
                1.0 + epsilon
            } else {
                rho
            };
            let branch_unclipped = rho * advantages[i];
            let branch_clipped = clip * advantages[i];
            acc += if branch_unclipped <= branch_clipped { branch_unclipped } else { branch_clipped };
        }
        acc / advantages.len() as f64
    }

    #[test]
    fn gspo_unit_ratio_collapses_min() {
        let value = gspo_surrogate(&[1.0, -1.0], &[1.0, 1.0], 0.2).unwrap();
        assert_eq!(value, 0.0);
    }

    #[test]
    fn gspo_upper_clip_binds() {
        let value = gspo_surrogate(&[1.0], &[1.5], 0.2).unwrap();
        assert!((value - 1.2).abs() < 1e-15);
    }

    #[test]
    fn gspo_negative_advantage_case_matches_oracle() {
        // min(0.5 * -1, clip(0.5, 0.8, 1.2) * -1) = min(-0.5, -0.8) = -0.8
        let value = gspo_surrogate(&[-1.0], &[0.5], 0.2).unwrap();
        assert_eq!(value, gspo_oracle(&[-1.0], &[0.5], 0.2));
        assert!((value - (-0.8)).abs() < 1e-15);
    }

    #[test]
    fn gspo_identity_at_unit_ratio() {
        let advantages = [0.3, -0.7, 1.9, 0.0];
        let ratios = [1.0; 4];
        let value = gspo_surrogate(&advantages, &ratios, 0.2).unwrap();
        let mean = advantages.iter().sum::<f64>() / 4.0;
        assert_eq!(value, mean);
    }

    #[test]
    fn gspo_identity_at_huge_epsilon() {
        let advantages = [0.5, -1.5, 2.0];
        let ratios = [0.1, 3.0, 0.7];
        let value = gspo_surrogate(&advantages, &ratios, 1e6).unwrap();
        let mean: f64 =
            advantages.iter().zip(&ratios).map(|(a, r)| a * r).sum::<f64>() / 3.0;
        assert!((value - mean).abs() < 1e-12);
    }

    #[test]
    fn gspo_rejects_bad_inputs() {
        assert!(matches!(
            gspo_surrogate(&[1.0], &[1.0, 2.0], 0.2),
            Err(CorpusError::LengthMismatch { .. })
        ));
        assert!(matches!(
            gspo_surrogate(&[1.0], &[0.0], 0.2),
            Err(CorpusError::NonPositiveRatio(0))
        ));
        assert!(matches!(gspo_surrogate(&[], &[], 0.2), Err(CorpusError::EmptyGroup)));
    }

    #[test]
    fn build_corpus_end_to_end() {
        let set = vec![
            make_trajectory("q1", "t1", 3, "42"),
            make_trajectory("q1", "t2", 5, "7"),
            make_trajectory("q1", "t3", 2, "42"),
            make_trajectory("q2", "t4", 4, "42"),
        ];
        let options = CorpusBuildOptions { dp_size: 4, ..Default::default() };
        let (samples, stats) = build_corpus(&set, &[], &judge(), &options).unwrap();
        // RFT drops t2; 3 + 2 + 4 = 9 samples total, 8 retained at dp=4.
        assert_eq!(stats.total_samples, 9);
        assert_eq!(samples.len(), 8);
        assert_eq!(stats.retained_samples, 8);
        assert_eq!(stats.dropped, 1);
        assert_eq!(stats.num_questions, 2);
        assert_eq!(stats.rollouts_per_question, 2);
        // Everything retained was correct, so each group is degenerate and
        // advantages are zero.
        assert!(samples.iter().all(|s| s.advantage == Some(0.0)));
    }
}
