//! End-to-end experiment wiring shared by the CLI and the acceptance tests:
//! train on a synthetic corpus, measure held-out retrieval recall@1 and
//! QA accuracy, and run paired full-vs-ablated arms.

use std::str::FromStr;

use crate::batching::BatchConfig;
use crate::encoder::{encode_batch, EncoderParams};
use crate::error::{Error, Result};
use crate::harness::{eval_knowledge, eval_memory, EvalReport, MemoryAugmentation, MemoryCfg};
use crate::index::{build, search_batch, VectorIndex};
use crate::losses::LossConfig;
use crate::oracle::fit_oracle;
use crate::corpus::tokenize;
use crate::encoder::TaskSpec;
use crate::synth::{CorpusDoc, MemorySuite, QaSuite, SyntheticCorpus};
use crate::trainer::{train, EncoderConfig, TrainConfig, TrainOutcome};

/// Fills the per-task repetition factors from the corpus into a batch config.
pub fn batch_config_for(corpus: &SyntheticCorpus, base: &BatchConfig) -> BatchConfig {
    let mut cfg = base.clone();
    cfg.repetition = corpus.repetition.clone();
    cfg
}

/// Trains on the corpus's per-task datasets.
pub fn train_on_corpus(
    corpus: &SyntheticCorpus,
    encoder_seed: u64,
    encoder_cfg: &EncoderConfig,
    loss_cfg: &LossConfig,
    train_cfg: &TrainConfig,
    batch_cfg: &BatchConfig,
) -> Result<TrainOutcome> {
    let batch_cfg = batch_config_for(corpus, batch_cfg);
    train(&corpus.train, &corpus.tasks, encoder_seed, encoder_cfg, loss_cfg, train_cfg, &batch_cfg)
}

fn doc_index(
    docs: &[CorpusDoc],
    task: &TaskSpec,
    params: &EncoderParams,
    use_instructions: bool,
) -> Result<VectorIndex> {
    let key_instr = if use_instructions { task.key_instruction.as_str() } else { "" };
    let jobs: Vec<(String, String)> = docs
        .iter()
        .map(|d| (key_instr.to_string(), d.text.clone()))
        .collect();
    let embeddings = encode_batch(params, &jobs);
    build(
        docs.iter()
            .zip(embeddings)
            .map(|(d, e)| (d.id.clone(), e, d.text.clone()))
            .collect(),
    )
}

/// Builds an index over a task's corpus docs with key instructions.
pub fn task_index(corpus: &SyntheticCorpus, task_id: &str, params: &EncoderParams) -> Result<VectorIndex> {
    let task = corpus
        .task_spec(task_id)
        .ok_or_else(|| Error::invalid(format!("unknown task {task_id}")))?;
    let docs = &corpus.corpora[task_id];
    doc_index(docs, task, params, true)
}

/// Mean held-out retrieval recall@1 across all tasks: for each held-out
/// query, does the top-1 document of its task's index match a gold id?
/// `use_instructions` must mirror how the encoder was trained.
pub fn heldout_recall_at_1(
    corpus: &SyntheticCorpus,
    params: &EncoderParams,
    use_instructions: bool,
) -> Result<f64> {
    let per_task = heldout_recall_by_task(corpus, params, use_instructions)?;
    let hits: usize = per_task.values().map(|(h, _)| h).sum();
    let total: usize = per_task.values().map(|(_, t)| t).sum();
    if total == 0 {
        return Err(Error::invalid("corpus has no held-out queries"));
    }
    Ok(hits as f64 / total as f64)
}

/// Held-out hits and totals per task.
pub fn heldout_recall_by_task(
    corpus: &SyntheticCorpus,
    params: &EncoderParams,
    use_instructions: bool,
) -> Result<std::collections::BTreeMap<String, (usize, usize)>> {
    let mut per_task = std::collections::BTreeMap::new();
    for task in &corpus.tasks {
        let queries: Vec<&crate::synth::HeldoutQuery> = corpus
            .heldout
            .iter()
            .filter(|h| h.task_id == task.task_id)
            .collect();
        if queries.is_empty() {
            continue;
        }
        let index = doc_index(&corpus.corpora[&task.task_id], task, params, use_instructions)?;
        let q_instr = if use_instructions { task.query_instruction.as_str() } else { "" };
        let jobs: Vec<(String, String)> = queries
            .iter()
            .map(|h| (q_instr.to_string(), h.query_text.clone()))
            .collect();
        let embeddings = encode_batch(params, &jobs);
        let results = search_batch(&index, &embeddings, 1)?;
        let mut hits = 0usize;
        for (h, hit) in queries.iter().zip(&results) {
            if let Some((id, _)) = hit.first() {
                if h.gold_ids.contains(id) {
                    hits += 1;
                }
            }
        }
        per_task.insert(task.task_id.clone(), (hits, queries.len()));
    }
    Ok(per_task)
}

/// QA accuracy of the knowledge harness over the QA suite, retrieving from
/// the suite task's corpus with the given encoder.
pub fn qa_accuracy(
    corpus: &SyntheticCorpus,
    suite: &QaSuite,
    params: &EncoderParams,
    k: usize,
    lambda: f64,
) -> Result<f64> {
    let task = corpus
        .task_spec(&suite.task_id)
        .ok_or_else(|| Error::invalid(format!("unknown task {}", suite.task_id)))?;
    let docs = &corpus.corpora[&suite.task_id];
    let oracle = fit_oracle(&docs.iter().map(|d| tokenize(&d.text)).collect::<Vec<_>>(), lambda);
    let index = doc_index(docs, task, params, true)?;
    let report = eval_knowledge(&suite.items, &index, params, task, &oracle, k)?;
    Ok(report.value)
}

/// Per-document memory perplexities under the three augmentation modes, in
/// suite document order.
pub fn memory_reports(
    suite: &MemorySuite,
    params: &EncoderParams,
    task: &TaskSpec,
    lambda: f64,
) -> Result<[EvalReport; 3]> {
    let oracle = fit_oracle(
        &suite.documents.iter().map(|d| tokenize(d)).collect::<Vec<_>>(),
        lambda,
    );
    let mut out = Vec::new();
    for augmentation in [
        MemoryAugmentation::None,
        MemoryAugmentation::Recency,
        MemoryAugmentation::Retrieval,
    ] {
        let cfg = MemoryCfg {
            n_chunks: suite.n_chunks,
            chunk_size: suite.chunk_size,
            recent_window: suite.recent_window,
            augmentation,
            ..MemoryCfg::default()
        };
        let (report, _skipped) = eval_memory(&suite.documents, params, task, &oracle, &cfg)?;
        out.push(report);
    }
    Ok([out.remove(0), out.remove(0), out.remove(0)])
}

/// The four ablation axes. Each disables exactly one ingredient of the
/// training recipe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationAxis {
    Reward,
    Instruction,
    Homogeneous,
    Stabilized,
}

impl AblationAxis {
    pub const ALL: [AblationAxis; 4] = [
        AblationAxis::Reward,
        AblationAxis::Instruction,
        AblationAxis::Homogeneous,
        AblationAxis::Stabilized,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AblationAxis::Reward => "reward",
            AblationAxis::Instruction => "instruction",
            AblationAxis::Homogeneous => "homogeneous",
            AblationAxis::Stabilized => "stabilized",
        }
    }
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reward" => Ok(AblationAxis::Reward),
            "instruction" => Ok(AblationAxis::Instruction),
            "homogeneous" => Ok(AblationAxis::Homogeneous),
            "stabilized" => Ok(AblationAxis::Stabilized),
            other => Err(Error::invalid(format!(
                "unknown ablation axis {other} (expected reward|instruction|homogeneous|stabilized)"
            ))),
        }
    }
}

/// Returns the train config with the axis's flag turned off.
pub fn apply_ablation(cfg: &TrainConfig, axis: AblationAxis) -> TrainConfig {
    let mut ablated = *cfg;
    match axis {
        AblationAxis::Reward => ablated.use_llm_reward = false,
        AblationAxis::Instruction => ablated.use_instruction_ft = false,
        AblationAxis::Homogeneous => ablated.use_homogeneous_ns = false,
        AblationAxis::Stabilized => ablated.use_stabilized_distill = false,
    }
    ablated
}

/// One trained arm with its evaluation metrics.
pub struct ArmResult {
    pub params: EncoderParams,
    pub recall_at_1: f64,
    pub qa_accuracy: Option<f64>,
}

/// Trains one arm and evaluates held-out recall (respecting the arm's own
/// instruction mode) plus QA accuracy when a suite is supplied.
#[allow(clippy::too_many_arguments)]
pub fn run_arm(
    corpus: &SyntheticCorpus,
    qa_suite: Option<&QaSuite>,
    encoder_seed: u64,
    encoder_cfg: &EncoderConfig,
    loss_cfg: &LossConfig,
    train_cfg: &TrainConfig,
    batch_cfg: &BatchConfig,
    qa_k: usize,
    qa_lambda: f64,
) -> Result<ArmResult> {
    let outcome = train_on_corpus(corpus, encoder_seed, encoder_cfg, loss_cfg, train_cfg, batch_cfg)?;
    let recall = heldout_recall_at_1(corpus, &outcome.params, train_cfg.use_instruction_ft)?;
    let qa = match qa_suite {
        Some(suite) => Some(qa_accuracy(corpus, suite, &outcome.params, qa_k, qa_lambda)?),
        None => None,
    };
    Ok(ArmResult { params: outcome.params, recall_at_1: recall, qa_accuracy: qa })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::init_params;
    use crate::synth::{synthesize_corpus, SynthParams};

    #[test]
    fn ablation_axis_round_trip() {
        for axis in AblationAxis::ALL {
            assert_eq!(axis.as_str().parse::<AblationAxis>().unwrap(), axis);
        }
        assert!("bogus".parse::<AblationAxis>().is_err());
    }

    #[test]
    fn apply_ablation_flips_one_flag() {
        let base = TrainConfig::default();
        let ablated = apply_ablation(&base, AblationAxis::Homogeneous);
        assert!(!ablated.use_homogeneous_ns);
        assert!(ablated.use_llm_reward && ablated.use_instruction_ft && ablated.use_stabilized_distill);
    }

    #[test]
    fn untrained_recall_is_near_chance() {
        let corpus = synthesize_corpus(&SynthParams::new(3, 5, 40, 200)).unwrap();
        let params = init_params(1, 2048, 32, 16);
        let recall = heldout_recall_at_1(&corpus, &params, true).unwrap();
        // 32 docs per task corpus; the ICL task retrieves lexically, so allow
        // slack above 1/32.
        assert!(recall < 0.45, "untrained recall {recall}");
    }

    #[test]
    fn learning_improves_recall_and_loss_per_seed() {
        for seed in [5u64, 6] {
            let corpus = synthesize_corpus(&SynthParams::new(seed, 5, 60, 200)).unwrap();
            let enc = EncoderConfig { feature_dim: 2048, hidden_dim: 32, embedding_dim: 16 };
            let loss = LossConfig::default();
            let train_cfg =
                TrainConfig { max_steps: 300, learning_rate: 3e-3, ..TrainConfig::default() };
            let batch = BatchConfig { batch_size: 4, shards: 2, seed, ..Default::default() };
            let outcome = train_on_corpus(&corpus, seed, &enc, &loss, &train_cfg, &batch).unwrap();

            // Mean loss over the final 10% of steps must undercut the first 10%.
            let tenth = outcome.log.len() / 10;
            let head: Vec<f64> = outcome.log.iter().take(tenth).map(|r| r.loss).collect();
            let tail: Vec<f64> = outcome.log.iter().rev().take(tenth).map(|r| r.loss).collect();
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            assert!(
                mean(&tail) < mean(&head),
                "seed {seed}: late loss {} should be below early loss {}",
                mean(&tail),
                mean(&head)
            );

            let trained = heldout_recall_at_1(&corpus, &outcome.params, true).unwrap();
            let untrained =
                heldout_recall_at_1(&corpus, &init_params(seed, 2048, 32, 16), true).unwrap();
            assert!(
                trained > untrained + 0.2,
                "seed {seed}: trained {trained} should beat untrained {untrained}"
            );
        }
    }
}
