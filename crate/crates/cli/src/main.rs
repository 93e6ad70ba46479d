//! `research` — iterative deep-research runs, benchmark evaluation, corpus
//! building, and trajectory analytics from the command line.

mod config;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use config::Config;
use research_core::corpus::{build_corpus, CorpusBuildOptions};
use research_core::engine::{run_iter_research, run_mono_baseline};
use research_core::harness::store::JsonlWriter;
use research_core::harness::{
    read_jsonl, run_benchmark, trajectory_stats, AnswerJudge, BenchMode, BenchSetup,
    ExactMatchJudge, LlmJudge,
};
use research_core::model::{Question, Trajectory};
use research_core::synthesis::{run_parallel_research_full, synthesize, SynthesisError};

#[derive(Parser)]
#[command(name = "research", version, about = "Iterative deep-research runtime")]
struct Cli {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Log filter (overridden by RUST_LOG).
    #[arg(long, global = true, default_value = "info")]
    log: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Research a single question.
    Run {
        #[arg(long)]
        question: String,
        /// Question id used in trajectory ids and stores.
        #[arg(long, default_value = "q0")]
        id: String,
        /// iter or mono.
        #[arg(long, default_value = "iter")]
        mode: String,
        /// Number of parallel research agents; above 1 adds a synthesis pass.
        #[arg(long, default_value_t = 1)]
        parallel: u32,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for trajectory/outcome JSONL output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a JSONL dataset (id/question/answer per line).
    Bench {
        #[arg(long)]
        dataset: PathBuf,
        /// iter, mono, or synthesis-<n>.
        #[arg(long, default_value = "iter")]
        mode: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Persistence directory; enables resumption by item id.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Training-corpus construction from persisted trajectories.
    Corpus {
        #[command(subcommand)]
        command: CorpusCommand,
    },
    /// Analytics over a persisted trajectory store.
    Stats {
        #[arg(long)]
        trajectories: PathBuf,
    },
}

#[derive(Subcommand)]
enum CorpusCommand {
    /// Filter, decompose, reward, normalize, and downsample.
    Build {
        #[arg(long)]
        trajectories: PathBuf,
        #[arg(long)]
        dp_size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output samples JSONL.
        #[arg(long)]
        out: PathBuf,
        /// Optional stats JSON path.
        #[arg(long)]
        stats: Option<PathBuf>,
        /// Skip rejection filtering (keep incorrect trajectories).
        #[arg(long)]
        no_rft: bool,
        /// Adjudicate non-exact answers with the judge backend.
        #[arg(long)]
        llm_judge: bool,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(cli.log.clone()));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();

    let config = Config::load(cli.config.as_deref())?;
    match cli.command {
        Command::Run { question, id, mode, parallel, seed, out } => {
            run_single(&config, question, id, mode, parallel, seed, out)
        }
        Command::Bench { dataset, mode, seed, out } => {
            bench(&config, dataset, mode, seed, out)
        }
        Command::Corpus { command } => match command {
            CorpusCommand::Build { trajectories, dp_size, seed, out, stats, no_rft, llm_judge } => {
                corpus_build(&config, trajectories, dp_size, seed, out, stats, no_rft, llm_judge)
            }
        },
        Command::Stats { trajectories } => stats(trajectories),
    }
}

#[allow(clippy::too_many_arguments)]
fn run_single(
    config: &Config,
    question_text: String,
    id: String,
    mode: String,
    parallel: u32,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<()> {
    let registry = config.build_registry()?;
    let backend = config.research_backend()?;
    let mut sampling = config.sampling.clone();
    if let Some(seed) = seed {
        sampling.seed = seed;
    }
    let question = Question::new(id, question_text);

    let (answer, trajectories) = match (mode.as_str(), parallel) {
        ("mono", 0 | 1) => {
            let trajectory =
                run_mono_baseline(&question, &config.budget, backend.as_ref(), &registry, &sampling);
            (trajectory.final_answer.clone(), vec![trajectory])
        }
        ("mono", _) => anyhow::bail!("--parallel applies to iter mode only"),
        ("iter", 0 | 1) => {
            let trajectory =
                run_iter_research(&question, &config.budget, backend.as_ref(), &registry, &sampling);
            (trajectory.final_answer.clone(), vec![trajectory])
        }
        ("iter", n) => {
            let factory = {
                let backend = backend.clone();
                move |_: u32| backend.clone()
            };
            let run = run_parallel_research_full(
                &question,
                n,
                &config.budget,
                &sampling,
                &registry,
                &factory,
                config.harness.synthesis_permits,
            );
            if let Some(dir) = &out {
                let outcomes = JsonlWriter::append_to(&dir.join("outcomes.jsonl"))?;
                for outcome in &run.outcomes {
                    outcomes.append(outcome)?;
                }
            }
            let synthesis_backend = config.synthesis_backend()?;
            let answer = match synthesize(&question, &run.outcomes, synthesis_backend.as_ref()) {
                Ok(result) => {
                    if let Some(dir) = &out {
                        let prompt = if result.outcomes_used >= 2 {
                            let usable =
                                research_core::synthesis::usable_outcomes(&run.outcomes);
                            research_core::synthesis::synthesis_prompt(&question, &usable)
                                .messages()
                                .iter()
                                .map(|m| m.content.as_str())
                                .collect::<Vec<_>>()
                                .join("\n")
                        } else {
                            String::new()
                        };
                        JsonlWriter::append_to(&dir.join("synthesis.jsonl"))?.append(
                            &research_core::harness::SynthesisRecord {
                                item_id: question.id.clone(),
                                final_answer: result.final_answer.clone(),
                                outcomes_used: result.outcomes_used,
                                synthesis_prompt_chars: result.synthesis_prompt_chars,
                                prompt,
                            },
                        )?;
                    }
                    Some(result.final_answer)
                }
                Err(SynthesisError::NoUsableOutcomes) => None,
                Err(e) => return Err(e.into()),
            };
            (answer, run.trajectories)
        }
        (other, _) => anyhow::bail!("unknown mode {other:?}: expected iter or mono"),
    };

    if let Some(dir) = &out {
        let writer = JsonlWriter::append_to(&dir.join("trajectories.jsonl"))?;
        for trajectory in &trajectories {
            writer.append(trajectory)?;
        }
        tracing::info!(dir = %dir.display(), "run persisted");
    }

    for trajectory in &trajectories {
        tracing::info!(
            id = %trajectory.id,
            rounds = trajectory.num_rounds(),
            termination = ?trajectory.termination,
            "trajectory complete"
        );
    }
    match answer {
        Some(answer) => println!("{answer}"),
        None => {
            println!("(no final answer produced)");
            std::process::exit(2);
        }
    }
    Ok(())
}

fn bench(
    config: &Config,
    dataset: PathBuf,
    mode: String,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<()> {
    let mode: BenchMode = mode.parse().map_err(|e: String| anyhow::anyhow!(e))?;
    let registry = config.build_registry()?;
    let backends = research_core::harness::SharedBackends {
        research: config.research_backend()?,
        synthesis: config.synthesis_backend()?,
        judge: config.judge_backend()?,
    };
    let mut setup = BenchSetup::new(&registry, &backends);
    setup.budget = config.budget.clone();
    setup.sampling = config.sampling.clone();
    if let Some(seed) = seed {
        setup.sampling.seed = seed;
    }
    setup.permits = config.harness.permits;
    setup.synthesis_permits = config.harness.synthesis_permits;
    setup.count_forced_final = config.harness.count_forced_final;
    setup.out_dir = out;
    setup.config_snapshot = config.snapshot();

    let report = run_benchmark(&dataset, mode, &setup)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn corpus_build(
    config: &Config,
    trajectories_path: PathBuf,
    dp_size: Option<usize>,
    seed: Option<u64>,
    out: PathBuf,
    stats_path: Option<PathBuf>,
    no_rft: bool,
    llm_judge: bool,
) -> Result<()> {
    let trajectories: Vec<Trajectory> = read_jsonl(&trajectories_path)
        .with_context(|| format!("reading {}", trajectories_path.display()))?;
    let registry = config.build_registry()?;
    let specs = registry.specs();

    let judge: Box<dyn AnswerJudge> = if llm_judge {
        Box::new(LlmJudge::new(config.judge_backend()?))
    } else {
        Box::new(ExactMatchJudge)
    };
    let options = CorpusBuildOptions {
        apply_rft: !no_rft,
        strict_exact: !llm_judge && config.harness.strict_exact,
        dp_size: dp_size.unwrap_or(config.corpus.dp_size),
        seed: seed.unwrap_or(0),
        sigma_floor: config.corpus.sigma_floor,
    };
    let (samples, stats) = build_corpus(&trajectories, &specs, judge.as_ref(), &options)?;

    let writer = JsonlWriter::append_to(&out)?;
    for sample in &samples {
        writer.append(sample)?;
    }
    let stats_json = serde_json::to_string_pretty(&stats)?;
    if let Some(path) = stats_path {
        std::fs::write(&path, &stats_json)?;
    }
    println!("{stats_json}");
    Ok(())
}

fn stats(trajectories_path: PathBuf) -> Result<()> {
    let trajectories: Vec<Trajectory> = read_jsonl(&trajectories_path)
        .with_context(|| format!("reading {}", trajectories_path.display()))?;
    let stats = trajectory_stats(&trajectories)?;
    println!("{}", serde_json::to_string_pretty(&stats)?);
    Ok(())
}
