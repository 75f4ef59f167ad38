//! The three training losses and their exact gradients with respect to every
//! participating embedding.
//!
//! All three share the same pool construction: the query is scored by inner
//! product against its own candidate list plus the in-batch negatives, and
//! each loss term is the negative log of a softmax probability over (a subset
//! of) that pool. Log-sum-exp is max-stabilized everywhere.
//!
//! The contrastive and distillation losses are implemented independently on
//! purpose: the reduction identities between them (one-hot weights collapse
//! distillation into contrastive form) are checked by tests as algebraic
//! cross-routes, which only means something if the code paths are separate.

use crate::encoder::{dot, Embedding, TaskSpec};
use crate::error::{Error, Result};
use crate::oracle::weights_from_rewards;

/// Similarity temperature and the mixing weights of the composite recipe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub tau: f64,
    pub contrastive_weight: f64,
    pub distill_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { tau: 0.02, contrastive_weight: 1.0, distill_weight: 1.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau.is_nan() || self.tau <= 0.0 {
            return Err(Error::invalid("tau must be > 0"));
        }
        if self.contrastive_weight < 0.0 || self.distill_weight < 0.0 {
            return Err(Error::invalid("loss weights must be >= 0"));
        }
        if self.contrastive_weight == 0.0 && self.distill_weight == 0.0 {
            return Err(Error::invalid("at least one loss weight must be > 0"));
        }
        Ok(())
    }
}

/// A query embedding with its candidate list and the pooled in-batch
/// negatives.
#[derive(Debug, Clone)]
pub struct ScoredCandidates {
    pub query_embedding: Embedding,
    pub candidate_embeddings: Vec<Embedding>,
    pub in_batch_negative_embeddings: Vec<Embedding>,
}

impl ScoredCandidates {
    fn validate(&self) -> Result<()> {
        let d = self.query_embedding.dim();
        let all_match = self
            .candidate_embeddings
            .iter()
            .chain(&self.in_batch_negative_embeddings)
            .all(|e| e.dim() == d);
        if !all_match {
            return Err(Error::invalid("embedding dimensions differ within ScoredCandidates"));
        }
        if self.candidate_embeddings.is_empty() {
            return Err(Error::invalid("candidate set must be nonempty"));
        }
        Ok(())
    }

    fn n_candidates(&self) -> usize {
        self.candidate_embeddings.len()
    }

    /// Inner products of the query against candidates then in-batch
    /// negatives, divided by tau.
    fn scaled_scores(&self, tau: f64) -> Vec<f64> {
        let q = &self.query_embedding.vector;
        self.candidate_embeddings
            .iter()
            .chain(&self.in_batch_negative_embeddings)
            .map(|e| dot(q, &e.vector) / tau)
            .collect()
    }
}

/// Gradients with respect to the query, each candidate, and each in-batch
/// negative embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrads {
    pub query: Vec<f64>,
    pub candidates: Vec<Vec<f64>>,
    pub in_batch: Vec<Vec<f64>>,
}

impl LossGrads {
    fn zeros(d: usize, n_candidates: usize, n_in_batch: usize) -> Self {
        LossGrads {
            query: vec![0.0; d],
            candidates: vec![vec![0.0; d]; n_candidates],
            in_batch: vec![vec![0.0; d]; n_in_batch],
        }
    }

    /// `self += scale * other`.
    pub fn axpy(&mut self, scale: f64, other: &LossGrads) {
        axpy(&mut self.query, scale, &other.query);
        for (a, b) in self.candidates.iter_mut().zip(&other.candidates) {
            axpy(a, scale, b);
        }
        for (a, b) in self.in_batch.iter_mut().zip(&other.in_batch) {
            axpy(a, scale, b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.query.iter_mut() {
            *v *= s;
        }
        for g in self.candidates.iter_mut().chain(self.in_batch.iter_mut()) {
            for v in g.iter_mut() {
                *v *= s;
            }
        }
    }
}

fn axpy(acc: &mut [f64], scale: f64, v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += scale * b;
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = values.map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Applies `d(loss)/d(score_j) = coeff_j / tau` to the embedding gradients:
/// scores are inner products, so the query picks up `coeff_j * p_j` and pool
/// member j picks up `coeff_j * q`.
fn apply_score_coeffs(sc: &ScoredCandidates, coeffs: &[f64], tau: f64, grads: &mut LossGrads) {
    let n = sc.n_candidates();
    let q = &sc.query_embedding.vector;
    for (j, coeff) in coeffs.iter().enumerate() {
        if *coeff == 0.0 {
            continue;
        }
        let c = coeff / tau;
        let p = if j < n {
            &sc.candidate_embeddings[j]
        } else {
            &sc.in_batch_negative_embeddings[j - n]
        };
        axpy(&mut grads.query, c, &p.vector);
        let target = if j < n {
            &mut grads.candidates[j]
        } else {
            &mut grads.in_batch[j - n]
        };
        axpy(target, c, q);
    }
}

/// InfoNCE over the full pool: `-log softmax(s_pos / tau)` with the softmax
/// taken over candidates plus in-batch negatives.
pub fn contrastive_loss(
    sc: &ScoredCandidates,
    positive_index: usize,
    cfg: &LossConfig,
) -> Result<(f64, LossGrads)> {
    sc.validate()?;
    cfg.validate()?;
    if positive_index >= sc.n_candidates() {
        return Err(Error::invalid(format!(
            "positive_index {positive_index} out of range for {} candidates",
            sc.n_candidates()
        )));
    }
    let scores = sc.scaled_scores(cfg.tau);
    let lse = log_sum_exp(scores.iter().cloned());
    let loss = lse - scores[positive_index];

    let mut coeffs: Vec<f64> = scores.iter().map(|s| (s - lse).exp()).collect();
    coeffs[positive_index] -= 1.0;
    let d = sc.query_embedding.dim();
    let mut grads = LossGrads::zeros(d, sc.n_candidates(), sc.in_batch_negative_embeddings.len());
    apply_score_coeffs(sc, &coeffs, cfg.tau, &mut grads);
    Ok((loss, grads))
}

/// Listwise distillation: `sum_i -w_i * log softmax_i` with the softmax over
/// the full pool. `weights` must align with the candidate list and sum to 1.
pub fn kl_distill_loss(
    sc: &ScoredCandidates,
    weights: &[f64],
    cfg: &LossConfig,
) -> Result<(f64, LossGrads)> {
    sc.validate()?;
    cfg.validate()?;
    let n = sc.n_candidates();
    if weights.len() != n {
        return Err(Error::invalid(format!(
            "weights length {} != candidates length {n}",
            weights.len()
        )));
    }
    let w_sum: f64 = weights.iter().sum();
    if (w_sum - 1.0).abs() > 1e-8 {
        return Err(Error::invalid(format!("weights must sum to 1, got {w_sum}")));
    }
    let scores = sc.scaled_scores(cfg.tau);
    let lse = log_sum_exp(scores.iter().cloned());
    let loss = weights
        .iter()
        .enumerate()
        .map(|(i, w)| w * (lse - scores[i]))
        .sum();

    let mut coeffs: Vec<f64> = scores.iter().map(|s| (s - lse).exp()).collect();
    for (j, c) in coeffs.iter_mut().enumerate() {
        let w = if j < n { weights[j] } else { 0.0 };
        *c -= w;
    }
    let d = sc.query_embedding.dim();
    let mut grads = LossGrads::zeros(d, n, sc.in_batch_negative_embeddings.len());
    apply_score_coeffs(sc, &coeffs, cfg.tau, &mut grads);
    Ok((loss, grads))
}

/// Reward-ranked distillation. Candidates are stably re-ranked by descending
/// log-reward (ties keep input order); the term for the candidate at rank r
/// uses only the candidates ranked at or below r plus the in-batch negatives
/// as its denominator. Returns the rank permutation (rank position -> input
/// candidate index) alongside loss and gradients.
pub fn stabilized_distill_loss(
    sc: &ScoredCandidates,
    log_rewards: &[f64],
    alpha: f64,
    cfg: &LossConfig,
) -> Result<(f64, LossGrads, Vec<usize>)> {
    sc.validate()?;
    cfg.validate()?;
    let n = sc.n_candidates();
    if log_rewards.len() != n {
        return Err(Error::invalid(format!(
            "log_rewards length {} != candidates length {n}",
            log_rewards.len()
        )));
    }
    let reward_set = weights_from_rewards(log_rewards, alpha)?;

    let mut rank: Vec<usize> = (0..n).collect();
    rank.sort_by(|&a, &b| log_rewards[b].partial_cmp(&log_rewards[a]).unwrap());

    let scores = sc.scaled_scores(cfg.tau);
    let n_ib = sc.in_batch_negative_embeddings.len();
    let mut coeffs = vec![0.0; scores.len()];
    let mut loss = 0.0;
    for r in 0..n {
        let w = reward_set.weights[rank[r]];
        // Denominator: candidates at rank r and below, plus all in-batch
        // negatives.
        let denom_scores = rank[r..]
            .iter()
            .map(|&i| scores[i])
            .chain(scores[n..].iter().cloned());
        let lse = log_sum_exp(denom_scores.clone());
        loss += w * (lse - scores[rank[r]]);
        for (&i, s) in rank[r..].iter().zip(rank[r..].iter().map(|&i| scores[i])) {
            coeffs[i] += w * (s - lse).exp();
        }
        for j in 0..n_ib {
            coeffs[n + j] += w * (scores[n + j] - lse).exp();
        }
        coeffs[rank[r]] -= w;
    }
    let d = sc.query_embedding.dim();
    let mut grads = LossGrads::zeros(d, n, n_ib);
    apply_score_coeffs(sc, &coeffs, cfg.tau, &mut grads);
    Ok((loss, grads, rank))
}

/// The composite recipe for one instance: contrastive on the hard label when
/// present, plus distillation on the log-rewards when present (stabilized or
/// plain per the task flag), each scaled by its configured weight.
pub fn composite_loss(
    sc: &ScoredCandidates,
    positive_index: Option<usize>,
    log_rewards: Option<&[f64]>,
    task: &TaskSpec,
    cfg: &LossConfig,
) -> Result<(f64, LossGrads)> {
    sc.validate()?;
    cfg.validate()?;
    if positive_index.is_none() && log_rewards.is_none() {
        return Err(Error::invalid(
            "instance must carry a hard label, log-rewards, or both",
        ));
    }
    let d = sc.query_embedding.dim();
    let mut total = 0.0;
    let mut grads = LossGrads::zeros(d, sc.n_candidates(), sc.in_batch_negative_embeddings.len());

    if let Some(pos) = positive_index {
        if cfg.contrastive_weight != 0.0 {
            let (loss, g) = contrastive_loss(sc, pos, cfg)?;
            total += cfg.contrastive_weight * loss;
            grads.axpy(cfg.contrastive_weight, &g);
        }
    }
    if let Some(rewards) = log_rewards {
        if cfg.distill_weight != 0.0 {
            let (loss, g) = if task.use_stabilized_distillation {
                let (loss, g, _) =
                    stabilized_distill_loss(sc, rewards, task.reward_temperature_alpha, cfg)?;
                (loss, g)
            } else {
                let ws = weights_from_rewards(rewards, task.reward_temperature_alpha)?;
                kl_distill_loss(sc, &ws.weights, cfg)?
            };
            total += cfg.distill_weight * loss;
            grads.axpy(cfg.distill_weight, &g);
        }
    }
    Ok((total, grads))
}
