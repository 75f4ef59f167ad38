//! Run configuration: a single JSON file with presets and per-section
//! overrides. Every training hyperparameter has a named key; the `paper`
//! preset records the full-scale reference values (AdamW at 5e-6, weight
//! decay 0.01, linear schedule with 0.2 warmup, 10000 steps, batch 100 per
//! shard on 8 shards, 7 hard negatives) while `desk` is sized for laptop
//! runs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use uniembed::batching::BatchConfig;
use uniembed::harness::{BackfillOrder, MemoryAugmentation};
use uniembed::losses::LossConfig;
use uniembed::trainer::{EncoderConfig, TrainConfig};

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub encoder: EncoderConfig,
    pub encoder_seed: u64,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub batch: BatchConfig,
    pub oracle_lambda: f64,
    pub eval: EvalSettings,
}

#[derive(Debug, Clone, Copy)]
pub struct EvalSettings {
    pub knowledge_k: usize,
    pub icl_k: usize,
    pub tool_k: usize,
    pub conv_k: usize,
    pub memory_chunks: Option<usize>,
    pub memory_chunk_size: Option<usize>,
    pub memory_window: Option<usize>,
    pub memory_augmentation: MemoryAugmentation,
    pub memory_backfill: BackfillOrder,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    preset: Option<String>,
    data_dir: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    #[serde(default)]
    encoder: EncoderSection,
    #[serde(default)]
    loss: LossSection,
    #[serde(default)]
    train: TrainSection,
    #[serde(default)]
    batch: BatchSection,
    #[serde(default)]
    oracle: OracleSection,
    #[serde(default)]
    eval: EvalSection,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct EncoderSection {
    feature_dim: Option<usize>,
    hidden_dim: Option<usize>,
    embedding_dim: Option<usize>,
    seed: Option<u64>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct LossSection {
    tau: Option<f64>,
    contrastive_weight: Option<f64>,
    distill_weight: Option<f64>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct TrainSection {
    learning_rate: Option<f64>,
    weight_decay: Option<f64>,
    warmup_fraction: Option<f64>,
    max_steps: Option<usize>,
    beta1: Option<f64>,
    beta2: Option<f64>,
    epsilon: Option<f64>,
    use_llm_reward: Option<bool>,
    use_instruction_ft: Option<bool>,
    use_homogeneous_ns: Option<bool>,
    use_stabilized_distill: Option<bool>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct BatchSection {
    batch_size: Option<usize>,
    shards: Option<usize>,
    candidates_per_instance: Option<usize>,
    seed: Option<u64>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct OracleSection {
    lambda: Option<f64>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct EvalSection {
    knowledge_k: Option<usize>,
    icl_k: Option<usize>,
    tool_k: Option<usize>,
    conv_k: Option<usize>,
    memory_chunks: Option<usize>,
    memory_chunk_size: Option<usize>,
    memory_window: Option<usize>,
    memory_augmentation: Option<MemoryAugmentation>,
    memory_backfill: Option<BackfillOrder>,
}

struct Preset {
    encoder: EncoderConfig,
    train: TrainConfig,
    batch: BatchConfig,
}

fn preset(name: &str) -> Result<Preset, String> {
    match name {
        "desk" => Ok(Preset {
            encoder: EncoderConfig { feature_dim: 1 << 13, hidden_dim: 64, embedding_dim: 32 },
            train: TrainConfig { learning_rate: 3e-3, max_steps: 2000, ..TrainConfig::default() },
            batch: BatchConfig {
                batch_size: 4,
                shards: 2,
                candidates_per_instance: 2,
                seed: 0,
                repetition: BTreeMap::new(),
            },
        }),
        // Reference hyperparameters of the full-scale setup: batch 100 per
        // shard across 8 shards with 1 positive + 7 hard negatives.
        "paper" => Ok(Preset {
            encoder: EncoderConfig::default(),
            train: TrainConfig::paper_preset(),
            batch: BatchConfig {
                batch_size: 100,
                shards: 8,
                candidates_per_instance: 8,
                seed: 0,
                repetition: BTreeMap::new(),
            },
        }),
        other => Err(format!("unknown preset {other} (expected desk or paper)")),
    }
}

/// Parses and resolves a config file; every missing key falls back to the
/// preset (default `desk`).
pub fn load_config(path: &Path) -> Result<RunConfig, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    let file: FileConfig =
        serde_json::from_str(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))?;
    let preset = preset(file.preset.as_deref().unwrap_or("desk"))?;

    let encoder = EncoderConfig {
        feature_dim: file.encoder.feature_dim.unwrap_or(preset.encoder.feature_dim),
        hidden_dim: file.encoder.hidden_dim.unwrap_or(preset.encoder.hidden_dim),
        embedding_dim: file.encoder.embedding_dim.unwrap_or(preset.encoder.embedding_dim),
    };
    let loss = LossConfig {
        tau: file.loss.tau.unwrap_or(0.02),
        contrastive_weight: file.loss.contrastive_weight.unwrap_or(1.0),
        distill_weight: file.loss.distill_weight.unwrap_or(1.0),
    };
    let train = TrainConfig {
        learning_rate: file.train.learning_rate.unwrap_or(preset.train.learning_rate),
        weight_decay: file.train.weight_decay.unwrap_or(preset.train.weight_decay),
        warmup_fraction: file.train.warmup_fraction.unwrap_or(preset.train.warmup_fraction),
        max_steps: file.train.max_steps.unwrap_or(preset.train.max_steps),
        beta1: file.train.beta1.unwrap_or(preset.train.beta1),
        beta2: file.train.beta2.unwrap_or(preset.train.beta2),
        epsilon: file.train.epsilon.unwrap_or(preset.train.epsilon),
        use_llm_reward: file.train.use_llm_reward.unwrap_or(true),
        use_instruction_ft: file.train.use_instruction_ft.unwrap_or(true),
        use_homogeneous_ns: file.train.use_homogeneous_ns.unwrap_or(true),
        use_stabilized_distill: file.train.use_stabilized_distill.unwrap_or(true),
    };
    let batch = BatchConfig {
        batch_size: file.batch.batch_size.unwrap_or(preset.batch.batch_size),
        shards: file.batch.shards.unwrap_or(preset.batch.shards),
        candidates_per_instance: file
            .batch
            .candidates_per_instance
            .unwrap_or(preset.batch.candidates_per_instance),
        seed: file.batch.seed.unwrap_or(preset.batch.seed),
        repetition: BTreeMap::new(),
    };
    let cfg = RunConfig {
        data_dir: file.data_dir.unwrap_or_else(|| PathBuf::from("data")),
        checkpoint: file.checkpoint.unwrap_or_else(|| PathBuf::from("model.uemb")),
        encoder,
        encoder_seed: file.encoder.seed.unwrap_or(0),
        loss,
        train,
        batch,
        oracle_lambda: file.oracle.lambda.unwrap_or(0.9),
        eval: EvalSettings {
            knowledge_k: file.eval.knowledge_k.unwrap_or(3),
            icl_k: file.eval.icl_k.unwrap_or(8),
            tool_k: file.eval.tool_k.unwrap_or(5),
            conv_k: file.eval.conv_k.unwrap_or(3),
            memory_chunks: file.eval.memory_chunks,
            memory_chunk_size: file.eval.memory_chunk_size,
            memory_window: file.eval.memory_window,
            memory_augmentation: file
                .eval
                .memory_augmentation
                .unwrap_or(MemoryAugmentation::Retrieval),
            memory_backfill: file.eval.memory_backfill.unwrap_or(BackfillOrder::Chronological),
        },
    };
    if !(0.0..=1.0).contains(&cfg.oracle_lambda) {
        return Err("oracle.lambda must be in [0, 1]".into());
    }
    cfg.encoder.validate().map_err(|e| e.to_string())?;
    cfg.loss.validate().map_err(|e| e.to_string())?;
    cfg.train.validate().map_err(|e| e.to_string())?;
    cfg.batch.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}
