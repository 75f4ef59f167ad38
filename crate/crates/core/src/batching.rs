//! Mini-batch scheduling and negative-pool assembly.
//!
//! Homogeneous scheduling cuts each task's (repetition-expanded, seeded-
//! shuffled) instances into single-task batches of B*K and then shuffles the
//! batch order across tasks. The heterogeneous variant pools instances across
//! tasks before cutting, deliberately waiving the homogeneity invariant.
//!
//! K shards are logical partitions within one process: shard boundaries are
//! recorded on each batch, but gradients flow through all shards' embeddings,
//! which is equivalent to K = 1 with batch size B*K and keeps training
//! deterministic.

use std::collections::BTreeMap;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::TrainingInstance;
use crate::encoder::fnv1a_64;
use crate::error::{Error, Result};

/// Batch geometry: B instances per shard, K logical shards, N candidates per
/// instance (1 positive + hard negatives), plus per-task repetition factors.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchConfig {
    pub batch_size: usize,
    pub shards: usize,
    pub candidates_per_instance: usize,
    pub seed: u64,
    /// Tasks absent from the map default to repetition 1.
    pub repetition: BTreeMap<String, usize>,
}

impl Default for BatchConfig {
    fn default() -> Self {
        BatchConfig {
            batch_size: 8,
            shards: 2,
            candidates_per_instance: 2,
            seed: 0,
            repetition: BTreeMap::new(),
        }
    }
}

impl BatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 || self.shards < 1 || self.candidates_per_instance < 1 {
            return Err(Error::invalid("batch_size, shards, and candidates_per_instance must be >= 1"));
        }
        Ok(())
    }

    pub fn repetition_for(&self, task: &str) -> usize {
        self.repetition.get(task).copied().unwrap_or(1)
    }

    fn batch_capacity(&self) -> usize {
        self.batch_size * self.shards
    }
}

/// Task marker of a mini-batch: a single task id for homogeneous batches, or
/// `Mixed` when the heterogeneity is deliberate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BatchTask {
    Single(String),
    Mixed,
}

impl BatchTask {
    pub fn label(&self) -> &str {
        match self {
            BatchTask::Single(t) => t,
            BatchTask::Mixed => "mixed",
        }
    }
}

/// A scheduled mini-batch of at most B*K instances with logical shard
/// boundaries partitioning the instance list.
#[derive(Debug, Clone)]
pub struct MiniBatch {
    pub task: BatchTask,
    pub instances: Vec<TrainingInstance>,
    pub shard_boundaries: Vec<Range<usize>>,
}

impl MiniBatch {
    pub fn is_single_task(&self) -> bool {
        match &self.task {
            BatchTask::Mixed => false,
            BatchTask::Single(t) => self.instances.iter().all(|i| &i.task_id == t),
        }
    }
}

fn shard_ranges(len: usize, batch_size: usize, shards: usize) -> Vec<Range<usize>> {
    (0..shards)
        .map(|s| {
            let start = (s * batch_size).min(len);
            let end = ((s + 1) * batch_size).min(len);
            start..end
        })
        .collect()
}

fn task_rng(seed: u64, task: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ fnv1a_64(task.as_bytes()))
}

fn expand_and_shuffle(
    task: &str,
    instances: &[TrainingInstance],
    cfg: &BatchConfig,
) -> Vec<TrainingInstance> {
    let rep = cfg.repetition_for(task);
    let mut expanded: Vec<TrainingInstance> = Vec::with_capacity(instances.len() * rep);
    for _ in 0..rep {
        expanded.extend(instances.iter().cloned());
    }
    expanded.shuffle(&mut task_rng(cfg.seed, task));
    expanded
}

fn cut_batches(task: BatchTask, instances: Vec<TrainingInstance>, cfg: &BatchConfig) -> Vec<MiniBatch> {
    let cap = cfg.batch_capacity();
    instances
        .chunks(cap)
        .map(|chunk| MiniBatch {
            task: task.clone(),
            instances: chunk.to_vec(),
            shard_boundaries: shard_ranges(chunk.len(), cfg.batch_size, cfg.shards),
        })
        .collect()
}

fn validate_datasets(datasets: &BTreeMap<String, Vec<TrainingInstance>>) -> Result<()> {
    if datasets.values().all(|v| v.is_empty()) {
        return Err(Error::invalid("all datasets are empty"));
    }
    Ok(())
}

/// One epoch of homogeneous batches: every instance appears exactly
/// `repetition(task)` times, every batch is single-task (the final partial
/// batch of each task is kept), and the batch order across tasks is a seeded
/// shuffle.
pub fn schedule_epoch(
    datasets: &BTreeMap<String, Vec<TrainingInstance>>,
    cfg: &BatchConfig,
) -> Result<Vec<MiniBatch>> {
    cfg.validate()?;
    validate_datasets(datasets)?;
    let mut batches = Vec::new();
    for (task, instances) in datasets {
        if instances.is_empty() {
            continue;
        }
        let expanded = expand_and_shuffle(task, instances, cfg);
        batches.extend(cut_batches(BatchTask::Single(task.clone()), expanded, cfg));
    }
    batches.shuffle(&mut task_rng(cfg.seed, "batch-order"));
    Ok(batches)
}

/// Heterogeneous variant: instances pooled across tasks before cutting, so
/// batches mix tasks. A single-task input degenerates to [`schedule_epoch`]
/// exactly.
pub fn heterogeneous_schedule(
    datasets: &BTreeMap<String, Vec<TrainingInstance>>,
    cfg: &BatchConfig,
) -> Result<Vec<MiniBatch>> {
    cfg.validate()?;
    validate_datasets(datasets)?;
    let nonempty = datasets.values().filter(|v| !v.is_empty()).count();
    if nonempty <= 1 {
        return schedule_epoch(datasets, cfg);
    }
    let mut pool = Vec::new();
    for (task, instances) in datasets {
        let rep = cfg.repetition_for(task);
        for _ in 0..rep {
            pool.extend(instances.iter().cloned());
        }
    }
    pool.shuffle(&mut task_rng(cfg.seed, "mixed-pool"));
    let mut batches = cut_batches(BatchTask::Mixed, pool, cfg);
    batches.shuffle(&mut task_rng(cfg.seed, "batch-order"));
    Ok(batches)
}

/// All candidates of all instances in the batch minus the query's own
/// positive, as `(instance_index, candidate_index)` references. For a full
/// batch this is exactly B*K*N - 1 negatives; partial batches scale with the
/// realized instance count.
pub fn assemble_negative_pool(batch: &MiniBatch, query_index: usize) -> Result<Vec<(usize, usize)>> {
    if query_index >= batch.instances.len() {
        return Err(Error::invalid(format!(
            "query_index {query_index} out of range for batch of {}",
            batch.instances.len()
        )));
    }
    let n = batch.instances[0].candidates.len();
    for (i, inst) in batch.instances.iter().enumerate() {
        if inst.candidates.len() != n {
            return Err(Error::invalid(format!(
                "instance {i} has {} candidates, expected {n}",
                inst.candidates.len()
            )));
        }
    }
    let positive = batch.instances[query_index]
        .positive_index()
        .ok_or_else(|| Error::invalid("query instance has no hard-labeled positive"))?;
    let mut pool = Vec::with_capacity(batch.instances.len() * n - 1);
    for (i, _) in batch.instances.iter().enumerate() {
        for c in 0..n {
            if i == query_index && c == positive {
                continue;
            }
            pool.push((i, c));
        }
    }
    Ok(pool)
}
