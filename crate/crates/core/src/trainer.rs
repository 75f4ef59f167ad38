//! Optimization loop: encodes each mini-batch, assembles per-instance losses
//! with pooled in-batch negatives, and updates parameters with bias-corrected
//! Adam plus decoupled weight decay under a linear warmup/decay schedule.
//!
//! Training is a deterministic function of (corpus, encoder seed, schedule
//! seed, config): iteration order is fixed everywhere, parallel sections
//! preserve input order, and gradient accumulation is sequential.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::batching::{heterogeneous_schedule, schedule_epoch, BatchConfig, MiniBatch};
use crate::corpus::TrainingInstance;
use crate::encoder::{
    accumulate_local, backward_local, encode_with_cache, init_params, EncoderParams, Embedding,
    ForwardCache, TaskSpec,
};
use crate::error::{Error, Result};
use crate::losses::{composite_loss, contrastive_loss, LossConfig, LossGrads, ScoredCandidates};
use crate::par;

/// Encoder dimensions. The defaults match the library-wide defaults; desk
/// runs typically shrink them for speed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub embedding_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { feature_dim: 1 << 15, hidden_dim: 128, embedding_dim: 64 }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim < 2 || self.hidden_dim < 1 || self.embedding_dim < 1 {
            return Err(Error::invalid("encoder dims must be >= 1 (feature_dim >= 2)"));
        }
        Ok(())
    }
}

/// Optimizer hyperparameters and the four ablation axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_fraction: f64,
    pub max_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub use_llm_reward: bool,
    pub use_instruction_ft: bool,
    pub use_homogeneous_ns: bool,
    pub use_stabilized_distill: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-2,
            weight_decay: 0.01,
            warmup_fraction: 0.2,
            max_steps: 2000,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            use_llm_reward: true,
            use_instruction_ft: true,
            use_homogeneous_ns: true,
            use_stabilized_distill: true,
        }
    }
}

impl TrainConfig {
    /// The hyperparameter set used for the full-scale reference run: AdamW at
    /// 5e-6 with 0.01 weight decay, linear schedule with 0.2 warmup, 10000
    /// steps.
    pub fn paper_preset() -> Self {
        TrainConfig {
            learning_rate: 5e-6,
            weight_decay: 0.01,
            warmup_fraction: 0.2,
            max_steps: 10000,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return Err(Error::invalid("beta1 and beta2 must be in (0, 1)"));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::invalid("epsilon must be > 0"));
        }
        if self.learning_rate < 0.0 || self.weight_decay < 0.0 {
            return Err(Error::invalid("learning_rate and weight_decay must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::invalid("warmup_fraction must be in [0, 1]"));
        }
        Ok(())
    }
}

/// Linear warmup from 0 to `learning_rate` over `ceil(warmup_fraction *
/// max_steps)` steps, then linear decay back to 0 at `max_steps`.
pub fn lr_at(step: usize, cfg: &TrainConfig) -> f64 {
    if cfg.max_steps == 0 || step >= cfg.max_steps {
        return 0.0;
    }
    let warmup = (cfg.warmup_fraction * cfg.max_steps as f64).ceil() as usize;
    if step < warmup {
        return cfg.learning_rate * step as f64 / warmup as f64;
    }
    if cfg.max_steps == warmup {
        return 0.0;
    }
    cfg.learning_rate * (cfg.max_steps - step) as f64 / (cfg.max_steps - warmup) as f64
}

/// First and second moment estimates for Adam.
struct AdamState {
    m: EncoderParams,
    v: EncoderParams,
    t: u32,
}

impl AdamState {
    fn new(like: &EncoderParams) -> Self {
        AdamState { m: like.zeros_like(), v: like.zeros_like(), t: 0 }
    }

    fn step(&mut self, params: &mut EncoderParams, grads: &EncoderParams, lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        let m_groups = self.m.flat_mut();
        let v_groups = self.v.flat_mut();
        let p_groups = params.flat_mut();
        let g_groups = grads.flat();
        for (((p, g), m), v) in p_groups.into_iter().zip(g_groups).zip(m_groups).zip(v_groups) {
            for i in 0..p.len() {
                let grad = g[i];
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad * grad;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * (m_hat / (v_hat.sqrt() + cfg.epsilon)) + lr * cfg.weight_decay * p[i];
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub task: String,
    pub loss: f64,
    pub lr: f64,
}

pub struct TrainOutcome {
    pub params: EncoderParams,
    pub log: Vec<StepRecord>,
}

/// Writes the loss log as CSV with header `step,task,loss,lr`.
pub fn write_loss_log<W: Write>(mut w: W, records: &[StepRecord]) -> Result<()> {
    writeln!(w, "step,task,loss,lr")?;
    for r in records {
        writeln!(w, "{},{},{},{}", r.step, r.task, r.loss, r.lr)?;
    }
    Ok(())
}

pub fn save_checkpoint(params: &EncoderParams, path: &Path) -> Result<()> {
    params.save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<EncoderParams> {
    EncoderParams::load(path)
}

fn task_map<'a>(tasks: &'a [TaskSpec]) -> Result<BTreeMap<&'a str, &'a TaskSpec>> {
    let mut map = BTreeMap::new();
    for task in tasks {
        task.validate()?;
        if map.insert(task.task_id.as_str(), task).is_some() {
            return Err(Error::invalid(format!("duplicate task id {}", task.task_id)));
        }
    }
    Ok(map)
}

/// Per-instance loss dispatch honoring the ablation flags. With
/// `use_llm_reward` off, the distillation term is replaced by contrastive
/// learning against the highest-reward candidate (ties keep the first).
fn instance_loss(
    sc: &ScoredCandidates,
    instance: &TrainingInstance,
    task: &TaskSpec,
    loss_cfg: &LossConfig,
    train_cfg: &TrainConfig,
) -> Result<(f64, LossGrads)> {
    let positive = instance.positive_index();
    let rewards = instance.log_rewards.as_deref();
    if train_cfg.use_llm_reward {
        let mut effective = task.clone();
        effective.use_stabilized_distillation =
            task.use_stabilized_distillation && train_cfg.use_stabilized_distill;
        return composite_loss(sc, positive, rewards, &effective, loss_cfg);
    }
    if positive.is_none() && rewards.is_none() {
        return Err(Error::invalid("instance carries neither hard label nor rewards"));
    }
    let d = sc.query_embedding.dim();
    let mut total = 0.0;
    let mut grads = LossGrads {
        query: vec![0.0; d],
        candidates: vec![vec![0.0; d]; sc.candidate_embeddings.len()],
        in_batch: vec![vec![0.0; d]; sc.in_batch_negative_embeddings.len()],
    };
    if let Some(pos) = positive {
        if loss_cfg.contrastive_weight != 0.0 {
            let (loss, g) = contrastive_loss(sc, pos, loss_cfg)?;
            total += loss_cfg.contrastive_weight * loss;
            grads.axpy(loss_cfg.contrastive_weight, &g);
        }
    }
    if let Some(r) = rewards {
        if loss_cfg.distill_weight != 0.0 {
            let top = r
                .iter()
                .enumerate()
                .max_by(|(ia, a), (ib, b)| a.partial_cmp(b).unwrap().then(ib.cmp(ia)))
                .map(|(i, _)| i)
                .ok_or_else(|| Error::invalid("empty log_rewards"))?;
            let (loss, g) = contrastive_loss(sc, top, loss_cfg)?;
            total += loss_cfg.distill_weight * loss;
            grads.axpy(loss_cfg.distill_weight, &g);
        }
    }
    Ok((total, grads))
}

struct StepOutput {
    mean_loss: f64,
}

fn train_step(
    params: &mut EncoderParams,
    adam: &mut AdamState,
    batch: &MiniBatch,
    tasks: &BTreeMap<&str, &TaskSpec>,
    loss_cfg: &LossConfig,
    train_cfg: &TrainConfig,
    lr: f64,
) -> Result<StepOutput> {
    let m = batch.instances.len();
    let d = params.embedding_dim;

    // Encode every query and every candidate once.
    let mut jobs: Vec<(String, String)> = Vec::new();
    let mut key_offsets = Vec::with_capacity(m);
    for instance in &batch.instances {
        let task = tasks
            .get(instance.task_id.as_str())
            .ok_or_else(|| Error::invalid(format!("unknown task {}", instance.task_id)))?;
        let (q_instr, k_instr) = if train_cfg.use_instruction_ft {
            (task.query_instruction.as_str(), task.key_instruction.as_str())
        } else {
            ("", "")
        };
        jobs.push((q_instr.to_string(), instance.query_text.clone()));
        key_offsets.push(jobs.len());
        for cand in &instance.candidates {
            jobs.push((k_instr.to_string(), cand.text.clone()));
        }
    }
    let caches: Vec<ForwardCache> =
        par::map_slice(&jobs, |(instr, text)| encode_with_cache(instr, text, params));

    // Per-instance losses; upstream gradients pool per unique text, scaled by
    // 1/m so the batch loss is a mean.
    let mut upstreams: Vec<Vec<f64>> = vec![vec![0.0; d]; jobs.len()];
    let inv_m = 1.0 / m as f64;
    let mut loss_sum = 0.0;
    for (i, instance) in batch.instances.iter().enumerate() {
        let task = tasks[instance.task_id.as_str()];
        let n_cand = instance.candidates.len();
        let own_start = key_offsets[i];
        let candidate_embeddings: Vec<Embedding> = (0..n_cand)
            .map(|c| Embedding { vector: caches[own_start + c].embedding.clone() })
            .collect();
        let mut ib_map = Vec::new();
        for (j, other) in batch.instances.iter().enumerate() {
            if j == i {
                continue;
            }
            let start = key_offsets[j];
            for c in 0..other.candidates.len() {
                ib_map.push(start + c);
            }
        }
        let sc = ScoredCandidates {
            query_embedding: Embedding { vector: caches[own_start - 1].embedding.clone() },
            candidate_embeddings,
            in_batch_negative_embeddings: ib_map
                .iter()
                .map(|&g| Embedding { vector: caches[g].embedding.clone() })
                .collect(),
        };
        let (loss, grads) = instance_loss(&sc, instance, task, loss_cfg, train_cfg)?;
        loss_sum += loss;
        for (acc, g) in upstreams[own_start - 1].iter_mut().zip(&grads.query) {
            *acc += inv_m * g;
        }
        for (c, g_cand) in grads.candidates.iter().enumerate() {
            for (acc, g) in upstreams[own_start + c].iter_mut().zip(g_cand) {
                *acc += inv_m * g;
            }
        }
        for (slot, g_ib) in ib_map.iter().zip(&grads.in_batch) {
            for (acc, g) in upstreams[*slot].iter_mut().zip(g_ib) {
                *acc += inv_m * g;
            }
        }
    }
    let mean_loss = loss_sum * inv_m;

    // Backward: the per-text stage is parallel, the dense accumulation is
    // sequential in job order.
    let locals = par::map_range(jobs.len(), |j| backward_local(&caches[j], params, &upstreams[j]));
    let mut grads = params.zeros_like();
    for (cache, local) in caches.iter().zip(&locals) {
        accumulate_local(cache, local, &mut grads);
    }
    adam.step(params, &grads, lr, train_cfg);
    Ok(StepOutput { mean_loss })
}

/// Runs `train_cfg.max_steps` optimization steps over epochs of scheduled
/// mini-batches (homogeneous unless ablated) and returns the final parameters
/// with the per-step loss log. Aborts with the step number if the loss goes
/// non-finite.
pub fn train(
    datasets: &BTreeMap<String, Vec<TrainingInstance>>,
    tasks: &[TaskSpec],
    encoder_seed: u64,
    encoder_cfg: &EncoderConfig,
    loss_cfg: &LossConfig,
    train_cfg: &TrainConfig,
    batch_cfg: &BatchConfig,
) -> Result<TrainOutcome> {
    encoder_cfg.validate()?;
    loss_cfg.validate()?;
    train_cfg.validate()?;
    batch_cfg.validate()?;
    let tasks = task_map(tasks)?;
    for task_id in datasets.keys() {
        if !tasks.contains_key(task_id.as_str()) {
            return Err(Error::invalid(format!("dataset task {task_id} has no TaskSpec")));
        }
    }

    let mut params = init_params(
        encoder_seed,
        encoder_cfg.feature_dim,
        encoder_cfg.hidden_dim,
        encoder_cfg.embedding_dim,
    );
    let mut adam = AdamState::new(&params);
    let mut log = Vec::with_capacity(train_cfg.max_steps);
    let mut step = 0;
    let mut epoch = 0u64;
    while step < train_cfg.max_steps {
        let mut epoch_cfg = batch_cfg.clone();
        epoch_cfg.seed = batch_cfg.seed.wrapping_add(epoch.wrapping_mul(0x9E3779B97F4A7C15));
        let batches = if train_cfg.use_homogeneous_ns {
            schedule_epoch(datasets, &epoch_cfg)?
        } else {
            heterogeneous_schedule(datasets, &epoch_cfg)?
        };
        for batch in &batches {
            if step >= train_cfg.max_steps {
                break;
            }
            let lr = lr_at(step, train_cfg);
            let out = train_step(&mut params, &mut adam, batch, &tasks, loss_cfg, train_cfg, lr)?;
            if !out.mean_loss.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            log.push(StepRecord {
                step,
                task: batch.task.label().to_string(),
                loss: out.mean_loss,
                lr,
            });
            step += 1;
        }
        epoch += 1;
    }
    Ok(TrainOutcome { params, log })
}

/// Loss and exact parameter gradient of the composite loss for one instance
/// encoded in isolation (own candidates only, no in-batch negatives).
pub fn composite_param_grad(
    instance: &TrainingInstance,
    task: &TaskSpec,
    params: &EncoderParams,
    loss_cfg: &LossConfig,
) -> Result<(f64, EncoderParams)> {
    let query_cache = encode_with_cache(&task.query_instruction, &instance.query_text, params);
    let key_caches: Vec<ForwardCache> = instance
        .candidates
        .iter()
        .map(|c| encode_with_cache(&task.key_instruction, &c.text, params))
        .collect();
    let sc = ScoredCandidates {
        query_embedding: Embedding { vector: query_cache.embedding.clone() },
        candidate_embeddings: key_caches
            .iter()
            .map(|c| Embedding { vector: c.embedding.clone() })
            .collect(),
        in_batch_negative_embeddings: vec![],
    };
    let (loss, grads) = composite_loss(
        &sc,
        instance.positive_index(),
        instance.log_rewards.as_deref(),
        task,
        loss_cfg,
    )?;
    let mut param_grads = params.zeros_like();
    let local = backward_local(&query_cache, params, &grads.query);
    accumulate_local(&query_cache, &local, &mut param_grads);
    for (cache, g) in key_caches.iter().zip(&grads.candidates) {
        let local = backward_local(cache, params, g);
        accumulate_local(cache, &local, &mut param_grads);
    }
    Ok((loss, param_grads))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub entries_checked: usize,
}

/// Compares the analytic composite-loss parameter gradient against central
/// finite differences (h = 1e-5) on a seeded random projection of parameter
/// entries.
pub fn grad_check(
    instance: &TrainingInstance,
    task: &TaskSpec,
    params: &EncoderParams,
    loss_cfg: &LossConfig,
    seed: u64,
    n_probes: usize,
) -> Result<GradCheckReport> {
    let (_, analytic) = composite_param_grad(instance, task, params, loss_cfg)?;
    let loss_of = |p: &EncoderParams| -> Result<f64> {
        Ok(composite_param_grad(instance, task, p, loss_cfg)?.0)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let group_sizes: Vec<usize> = params.flat().iter().map(|g| g.len()).collect();
    let total: usize = group_sizes.iter().sum();
    let h = 1e-5;
    let mut max_rel = 0.0f64;
    let n_probes = n_probes.min(total);
    for _ in 0..n_probes {
        let mut flat_idx = rng.gen_range(0..total);
        let mut group = 0;
        while flat_idx >= group_sizes[group] {
            flat_idx -= group_sizes[group];
            group += 1;
        }
        let mut plus = params.clone();
        plus.flat_mut()[group][flat_idx] += h;
        let mut minus = params.clone();
        minus.flat_mut()[group][flat_idx] -= h;
        let numeric = (loss_of(&plus)? - loss_of(&minus)?) / (2.0 * h);
        let a = analytic.flat()[group][flat_idx];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        max_rel = max_rel.max(rel);
    }
    Ok(GradCheckReport { max_rel_error: max_rel, entries_checked: n_probes })
}
