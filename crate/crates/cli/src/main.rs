//! Command-line front end: synthetic data generation, training, embedding,
//! indexing, retrieval, scenario evaluation, gradient checking, and paired
//! ablation runs. Machine-parseable results go to stdout, diagnostics to
//! stderr. Exit codes: 0 ok, 1 runtime failure, 2 usage error.

mod config;
mod data;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use config::{load_config, RunConfig};
use uniembed::corpus::tokenize;
use uniembed::encoder::{encode, init_params, Embedding, EncoderParams, TaskSpec};
use uniembed::harness::{
    eval_convsearch, eval_icl, eval_knowledge, eval_memory, eval_tool, EvalReport, MemoryCfg,
};
use uniembed::index::{build, search, VectorIndex};
use uniembed::losses::LossConfig;
use uniembed::oracle::fit_oracle;
use uniembed::pipeline::{
    apply_ablation, batch_config_for, heldout_recall_by_task, run_arm, AblationAxis,
};
use uniembed::synth::{
    derive_conv_suite, derive_icl_suite, derive_qa_suite, derive_tool_suite, synthesize_corpus,
    synthesize_memory_suite, ConvSuite, IclSuite, MemorySuite, QaSuite, SynthParams, ToolSuite,
};
use uniembed::trainer::{grad_check, load_checkpoint, save_checkpoint, train, write_loss_log};

#[derive(Parser)]
#[command(name = "uniembed", version, about = "Multi-task retrieval embedder toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Side {
    Query,
    Key,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scenario {
    Knowledge,
    Memory,
    Icl,
    Tool,
    Convsearch,
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Reward,
    Instruction,
    Homogeneous,
    Stabilized,
}

impl From<Axis> for AblationAxis {
    fn from(a: Axis) -> Self {
        match a {
            Axis::Reward => AblationAxis::Reward,
            Axis::Instruction => AblationAxis::Instruction,
            Axis::Homogeneous => AblationAxis::Homogeneous,
            Axis::Stabilized => AblationAxis::Stabilized,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic multi-task corpus and evaluation suites.
    SynthData {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        tasks: usize,
        #[arg(long = "per-task", default_value_t = 500)]
        per_task: usize,
        #[arg(long, default_value_t = 200)]
        vocab: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an encoder on the corpus in the config's data directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "out-checkpoint")]
        out_checkpoint: PathBuf,
        /// Loss log CSV path (default: <out-checkpoint>.losses.csv).
        #[arg(long = "out-losses")]
        out_losses: Option<PathBuf>,
        #[arg(long = "max-steps")]
        max_steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Encode texts from a JSONL file ({"id", "text"} per line).
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        task: String,
        #[arg(long, value_enum)]
        side: Side,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
        /// tasks.json describing the task instructions.
        #[arg(long)]
        tasks: PathBuf,
    },
    /// Build a flat index from an embeddings JSONL file.
    Index {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Retrieve top-k entries for a query string.
    Retrieve {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        task: String,
        #[arg(long)]
        query: String,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long)]
        tasks: PathBuf,
    },
    /// Run one evaluation scenario and print its report as JSON.
    Eval {
        #[arg(long, value_enum)]
        scenario: Scenario,
        #[arg(long)]
        config: PathBuf,
    },
    /// Compare the analytic composite gradient to finite differences.
    GradCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the full recipe and one ablated arm, printing both reports.
    Ablate {
        #[arg(long, value_enum)]
        axis: Axis,
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "max-steps")]
        max_steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

enum CliError {
    Usage(String),
    Runtime(String),
}

impl<E: std::fmt::Display> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn load_config_usage(path: &std::path::Path) -> Result<RunConfig, CliError> {
    load_config(path).map_err(usage)
}

#[derive(Serialize, Deserialize)]
struct EmbedLine {
    id: String,
    text: String,
}

#[derive(Serialize, Deserialize)]
struct EmbeddingLine {
    id: String,
    embedding: Vec<f64>,
    #[serde(default)]
    payload: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct TasksFileView {
    tasks: Vec<TaskSpec>,
    #[serde(default)]
    repetition: BTreeMap<String, usize>,
}

fn find_task(tasks: &[TaskSpec], task_id: &str) -> Result<TaskSpec, CliError> {
    tasks
        .iter()
        .find(|t| t.task_id == task_id)
        .cloned()
        .ok_or_else(|| usage(format!("unknown task {task_id}")))
}

fn doc_index(
    docs: &[uniembed::synth::CorpusDoc],
    task: &TaskSpec,
    params: &EncoderParams,
) -> Result<VectorIndex, CliError> {
    let items: Vec<(String, Embedding, String)> = docs
        .iter()
        .map(|d| (d.id.clone(), encode(&task.key_instruction, &d.text, params), d.text.clone()))
        .collect();
    Ok(build(items)?)
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::SynthData { seed, tasks, per_task, vocab, out } => {
            let params = SynthParams::new(seed, tasks, per_task, vocab);
            let corpus = synthesize_corpus(&params).map_err(|e| usage(e.to_string()))?;
            std::fs::create_dir_all(&out).map_err(|e| CliError::Runtime(e.to_string()))?;
            data::write_corpus_dir(&out, &corpus)?;
            let suites = || -> Result<(), CliError> {
                data::write_json(&out.join("qa_eval.json"), &derive_qa_suite(&corpus, &params, 100)?)?;
                data::write_json(&out.join("icl_eval.json"), &derive_icl_suite(&corpus, &params, 100)?)?;
                data::write_json(&out.join("tool_eval.json"), &derive_tool_suite(&corpus, &params, 50)?)?;
                data::write_json(&out.join("conv_eval.json"), &derive_conv_suite(&corpus, &params, 50)?)?;
                Ok(())
            };
            match suites() {
                Ok(()) => {}
                // Fewer than five tasks means some scenario profiles are
                // absent; the core corpus is still written.
                Err(CliError::Runtime(msg)) if msg.contains("profile") => {
                    eprintln!("note: skipping scenario suites: {msg}");
                }
                Err(e) => return Err(e),
            }
            data::write_json(&out.join("memory.json"), &synthesize_memory_suite(seed, 40, 16))?;
            eprintln!(
                "wrote {} train instances, {} held-out queries, {} tasks to {}",
                corpus.n_train_instances(),
                corpus.heldout.len(),
                corpus.tasks.len(),
                out.display()
            );
            Ok(())
        }

        Command::Train { config, out_checkpoint, out_losses, max_steps, seed } => {
            let mut cfg = load_config_usage(&config)?;
            if let Some(steps) = max_steps {
                cfg.train.max_steps = steps;
            }
            if let Some(seed) = seed {
                cfg.encoder_seed = seed;
                cfg.batch.seed = seed;
            }
            let corpus = data::read_corpus_dir(&cfg.data_dir)?;
            let batch = batch_config_for(&corpus, &cfg.batch);
            let outcome = train(
                &corpus.train,
                &corpus.tasks,
                cfg.encoder_seed,
                &cfg.encoder,
                &cfg.loss,
                &cfg.train,
                &batch,
            )?;
            save_checkpoint(&outcome.params, &out_checkpoint)?;
            let losses_path =
                out_losses.unwrap_or_else(|| out_checkpoint.with_extension("losses.csv"));
            let mut w = BufWriter::new(File::create(&losses_path)?);
            write_loss_log(&mut w, &outcome.log)?;
            w.flush().map_err(|e| CliError::Runtime(e.to_string()))?;
            let final_loss = outcome.log.last().map(|r| r.loss);
            println!(
                "{}",
                serde_json::json!({
                    "steps": outcome.log.len(),
                    "final_loss": final_loss,
                    "checkpoint": out_checkpoint,
                    "loss_log": losses_path,
                })
            );
            Ok(())
        }

        Command::Embed { checkpoint, task, side, input, output, tasks } => {
            let tasks_file: TasksFileView = data::read_json(&tasks)?;
            let spec = find_task(&tasks_file.tasks, &task)?;
            let instruction = match side {
                Side::Query => &spec.query_instruction,
                Side::Key => &spec.key_instruction,
            };
            let params = load_checkpoint(&checkpoint)?;
            let reader = BufReader::new(File::open(&input)?);
            let mut w = BufWriter::new(File::create(&output)?);
            let mut n = 0usize;
            for line in reader.lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let item: EmbedLine = serde_json::from_str(&line)?;
                let e = encode(instruction, &item.text, &params);
                serde_json::to_writer(
                    &mut w,
                    &EmbeddingLine { id: item.id, embedding: e.vector, payload: Some(item.text) },
                )?;
                w.write_all(b"\n")?;
                n += 1;
            }
            w.flush().map_err(|e| CliError::Runtime(e.to_string()))?;
            eprintln!("embedded {n} texts");
            Ok(())
        }

        Command::Index { embeddings, out } => {
            let reader = BufReader::new(File::open(&embeddings)?);
            let mut items = Vec::new();
            for line in reader.lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let item: EmbeddingLine = serde_json::from_str(&line)?;
                items.push((
                    item.id,
                    Embedding { vector: item.embedding },
                    item.payload.unwrap_or_default(),
                ));
            }
            let index = build(items)?;
            uniembed::index::save(&index, &out)?;
            eprintln!("indexed {} entries", index.len());
            Ok(())
        }

        Command::Retrieve { index, checkpoint, task, query, k, tasks } => {
            if k < 1 {
                return Err(usage("k must be >= 1"));
            }
            let tasks_file: TasksFileView = data::read_json(&tasks)?;
            let spec = find_task(&tasks_file.tasks, &task)?;
            let params = load_checkpoint(&checkpoint)?;
            let store = uniembed::index::load(&index)?;
            let q = encode(&spec.query_instruction, &query, &params);
            let hits = search(&store, &q, k)?;
            let mut out = std::io::stdout().lock();
            for (rank, (id, score)) in hits.iter().enumerate() {
                writeln!(out, "{}\t{id}\t{score}", rank + 1)?;
            }
            Ok(())
        }

        Command::Eval { scenario, config } => {
            let cfg = load_config_usage(&config)?;
            let report = run_eval(scenario, &cfg)?;
            println!("{}", serde_json::to_string(&report)?);
            Ok(())
        }

        Command::GradCheck { seed } => {
            use uniembed::corpus::{Candidate, TrainingInstance};
            let params = init_params(seed, 32, 8, 4);
            let task = TaskSpec {
                task_id: "probe".into(),
                query_instruction: "match the probe query".into(),
                key_instruction: "store the probe entry".into(),
                use_stabilized_distillation: true,
                reward_temperature_alpha: 1.0,
            };
            let instance = TrainingInstance {
                task_id: "probe".into(),
                query_text: format!("query token{} filler", seed % 17),
                candidates: (0..3)
                    .map(|c| Candidate {
                        text: format!("entry token{} pad{c}", (seed + c as u64) % 23),
                        is_hard_label_positive: c == 0,
                    })
                    .collect(),
                log_rewards: Some(vec![-0.3, -1.1, -2.4]),
            };
            let loss_cfg = LossConfig { tau: 0.2, ..LossConfig::default() };
            let report = grad_check(&instance, &task, &params, &loss_cfg, seed, 120)?;
            println!(
                "{}",
                serde_json::json!({
                    "max_rel_error": report.max_rel_error,
                    "entries_checked": report.entries_checked,
                })
            );
            Ok(())
        }

        Command::Ablate { axis, config, max_steps, seed } => {
            let mut cfg = load_config_usage(&config)?;
            if let Some(steps) = max_steps {
                cfg.train.max_steps = steps;
            }
            if let Some(seed) = seed {
                cfg.encoder_seed = seed;
                cfg.batch.seed = seed;
            }
            let axis: AblationAxis = axis.into();
            let corpus = data::read_corpus_dir(&cfg.data_dir)?;
            let qa_path = cfg.data_dir.join("qa_eval.json");
            let qa_suite: Option<QaSuite> = qa_path
                .exists()
                .then(|| data::read_json::<QaSuite>(&qa_path))
                .transpose()?;
            let batch = batch_config_for(&corpus, &cfg.batch);
            for (arm_name, train_cfg) in
                [("full", cfg.train), ("ablated", apply_ablation(&cfg.train, axis))]
            {
                let arm = run_arm(
                    &corpus,
                    qa_suite.as_ref(),
                    cfg.encoder_seed,
                    &cfg.encoder,
                    &cfg.loss,
                    &train_cfg,
                    &batch,
                    cfg.eval.knowledge_k,
                    cfg.oracle_lambda,
                )?;
                let report = match axis {
                    AblationAxis::Reward => EvalReport {
                        scenario: format!("ablate-{}-{arm_name}", axis.as_str()),
                        metric: "accuracy".into(),
                        value: arm.qa_accuracy.unwrap_or(f64::NAN),
                        n: qa_suite.as_ref().map(|s| s.items.len()).unwrap_or(0),
                        per_item: vec![],
                    },
                    _ => {
                        let per_task = heldout_recall_by_task(
                            &corpus,
                            &arm.params,
                            train_cfg.use_instruction_ft,
                        )?;
                        EvalReport {
                            scenario: format!("ablate-{}-{arm_name}", axis.as_str()),
                            metric: "recall@1".into(),
                            value: arm.recall_at_1,
                            n: per_task.values().map(|(_, t)| t).sum(),
                            per_item: per_task
                                .values()
                                .map(|(h, t)| *h as f64 / (*t).max(1) as f64)
                                .collect(),
                        }
                    }
                };
                println!("{}", serde_json::to_string(&report)?);
            }
            Ok(())
        }
    }
}

fn run_eval(scenario: Scenario, cfg: &RunConfig) -> Result<EvalReport, CliError> {
    let params = load_checkpoint(&cfg.checkpoint).map_err(|e| {
        CliError::Runtime(format!("loading checkpoint {}: {e}", cfg.checkpoint.display()))
    })?;
    let dir = &cfg.data_dir;
    match scenario {
        Scenario::Knowledge => {
            let suite: QaSuite = data::read_json(&dir.join("qa_eval.json"))?;
            let corpus = data::read_corpus_dir(dir)?;
            let task = find_task(&corpus.tasks, &suite.task_id)?;
            let docs = &corpus.corpora[&suite.task_id];
            let oracle = fit_oracle(
                &docs.iter().map(|d| tokenize(&d.text)).collect::<Vec<_>>(),
                cfg.oracle_lambda,
            );
            let index = doc_index(docs, &task, &params)?;
            Ok(eval_knowledge(&suite.items, &index, &params, &task, &oracle, cfg.eval.knowledge_k)?)
        }
        Scenario::Icl => {
            let suite: IclSuite = data::read_json(&dir.join("icl_eval.json"))?;
            let corpus = data::read_corpus_dir(dir)?;
            let task = find_task(&corpus.tasks, &suite.task_id)?;
            let docs = &corpus.corpora[&suite.task_id];
            let oracle = fit_oracle(
                &docs.iter().map(|d| tokenize(&d.text)).collect::<Vec<_>>(),
                cfg.oracle_lambda,
            );
            let index = doc_index(docs, &task, &params)?;
            Ok(eval_icl(&suite.items, &index, &params, &task, &oracle, cfg.eval.icl_k)?)
        }
        Scenario::Tool => {
            let suite: ToolSuite = data::read_json(&dir.join("tool_eval.json"))?;
            let corpus = data::read_corpus_dir(dir)?;
            let task = find_task(&corpus.tasks, &suite.task_id)?;
            let index = doc_index(&corpus.corpora[&suite.task_id], &task, &params)?;
            Ok(eval_tool(&suite.requests, &index, &params, &task, cfg.eval.tool_k)?)
        }
        Scenario::Convsearch => {
            let suite: ConvSuite = data::read_json(&dir.join("conv_eval.json"))?;
            let corpus = data::read_corpus_dir(dir)?;
            let task = find_task(&corpus.tasks, &suite.task_id)?;
            let index = doc_index(&corpus.corpora[&suite.task_id], &task, &params)?;
            Ok(eval_convsearch(&suite.conversations, &index, &params, &task, cfg.eval.conv_k)?)
        }
        Scenario::Memory => {
            let suite: MemorySuite = data::read_json(&dir.join("memory.json"))?;
            let corpus = data::read_corpus_dir(dir)?;
            // The long-range modeling task's instructions drive chunk
            // retrieval.
            let task = corpus
                .tasks
                .iter()
                .find(|t| t.reward_temperature_alpha < 1.0)
                .or_else(|| corpus.tasks.first())
                .cloned()
                .ok_or_else(|| usage("no tasks in data directory"))?;
            let oracle = fit_oracle(
                &suite.documents.iter().map(|d| tokenize(d)).collect::<Vec<_>>(),
                cfg.oracle_lambda,
            );
            let mem_cfg = MemoryCfg {
                n_chunks: cfg.eval.memory_chunks.unwrap_or(suite.n_chunks),
                chunk_size: cfg.eval.memory_chunk_size.unwrap_or(suite.chunk_size),
                recent_window: cfg.eval.memory_window.unwrap_or(suite.recent_window),
                augmentation: cfg.eval.memory_augmentation,
                backfill: cfg.eval.memory_backfill,
            };
            let (report, skipped) = eval_memory(&suite.documents, &params, &task, &oracle, &mem_cfg)?;
            if skipped > 0 {
                eprintln!("skipped {skipped} documents shorter than the window");
            }
            Ok(report)
        }
    }
}
