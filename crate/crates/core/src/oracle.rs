//! Generation-likelihood oracle: a Laplace-smoothed bigram model mixed with a
//! copy distribution over the current context. Candidates whose tokens appear
//! in the expected output earn higher rewards, which is the supervision
//! signal distilled into the embedding model.
//!
//! All rewards are natural-log units. The mixture probability is floored at
//! 1e-12 before taking the log, so every output is finite even at lambda = 1
//! with a token absent from the context.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::TokenSeq;
use crate::error::{Error, Result};

pub const BOS_TOKEN: &str = "<bos>";
pub const UNK_TOKEN: &str = "<unk>";
const BOS_ID: u32 = 0;
const UNK_ID: u32 = 1;
const PROB_FLOOR: f64 = 1e-12;

/// Bigram counts with reserved BOS/UNK entries plus the copy-mixture weight.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleModel {
    /// Token string per id; ids 0 and 1 are BOS and UNK.
    tokens: Vec<String>,
    token_ids: HashMap<String, u32>,
    bigram_counts: HashMap<(u32, u32), u64>,
    prev_counts: HashMap<u32, u64>,
    lambda: f64,
}

impl OracleModel {
    /// Vocabulary size V, including BOS and UNK.
    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn bigram_count(&self, prev: &str, next: &str) -> u64 {
        let p = self.token_id(Some(prev));
        let n = self.token_id_str(next);
        self.bigram_counts.get(&(p, n)).copied().unwrap_or(0)
    }

    fn token_id_str(&self, token: &str) -> u32 {
        self.token_ids.get(token).copied().unwrap_or(UNK_ID)
    }

    fn token_id(&self, token: Option<&str>) -> u32 {
        match token {
            None => BOS_ID,
            Some(t) => self.token_id_str(t),
        }
    }

    fn bigram_prob(&self, prev_id: u32, token_id: u32) -> f64 {
        let v = self.vocab_size() as f64;
        let count = self.bigram_counts.get(&(prev_id, token_id)).copied().unwrap_or(0) as f64;
        let prev_total = self.prev_counts.get(&prev_id).copied().unwrap_or(0) as f64;
        (count + 1.0) / (prev_total + v)
    }

    fn mixture_logprob(&self, token_id: u32, copy_count: usize, context_len: usize, prev_id: u32) -> f64 {
        let p_copy = if context_len > 0 {
            copy_count as f64 / context_len as f64
        } else {
            1.0 / self.vocab_size() as f64
        };
        let p = self.lambda * p_copy + (1.0 - self.lambda) * self.bigram_prob(prev_id, token_id);
        p.max(PROB_FLOOR).ln()
    }
}

/// Fits bigram counts over the corpus, prepending BOS to every sequence.
/// The empty corpus is allowed: all counts zero, probabilities uniform under
/// Laplace smoothing.
pub fn fit_oracle(corpus: &[TokenSeq], lambda: f64) -> OracleModel {
    assert!((0.0..=1.0).contains(&lambda), "lambda must be in [0, 1]");
    let mut model = OracleModel {
        tokens: vec![BOS_TOKEN.to_string(), UNK_TOKEN.to_string()],
        token_ids: HashMap::from([(BOS_TOKEN.to_string(), BOS_ID), (UNK_TOKEN.to_string(), UNK_ID)]),
        bigram_counts: HashMap::new(),
        prev_counts: HashMap::new(),
        lambda,
    };
    for seq in corpus {
        let mut prev = BOS_ID;
        for tok in &seq.tokens {
            let id = match model.token_ids.get(tok) {
                Some(&id) => id,
                None => {
                    let id = model.tokens.len() as u32;
                    model.tokens.push(tok.clone());
                    model.token_ids.insert(tok.clone(), id);
                    id
                }
            };
            *model.bigram_counts.entry((prev, id)).or_insert(0) += 1;
            *model.prev_counts.entry(prev).or_insert(0) += 1;
            prev = id;
        }
    }
    model
}

/// Log-probability of `token` under the copy/bigram mixture:
/// `p = lambda * p_copy + (1 - lambda) * p_bigram`, where `p_copy` is the
/// relative frequency of `token` in `context_tokens` (or `1/V` on empty
/// context) and `p_bigram` is the Laplace-smoothed bigram probability given
/// `prev_token` (`None` means BOS).
pub fn token_logprob(model: &OracleModel, token: &str, context_tokens: &TokenSeq, prev_token: Option<&str>) -> f64 {
    let copy_count = context_tokens.tokens.iter().filter(|t| t.as_str() == token).count();
    model.mixture_logprob(
        model.token_id_str(token),
        copy_count,
        context_tokens.len(),
        model.token_id(prev_token),
    )
}

/// Incremental scorer over a growing context; arithmetic matches composing
/// [`token_logprob`] term by term.
struct GrowingContext<'a> {
    model: &'a OracleModel,
    counts: HashMap<&'a str, usize>,
    len: usize,
}

impl<'a> GrowingContext<'a> {
    fn new(model: &'a OracleModel, context: &'a TokenSeq) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for tok in &context.tokens {
            *counts.entry(tok.as_str()).or_insert(0) += 1;
        }
        GrowingContext { model, counts, len: context.len() }
    }

    fn score_and_push(&mut self, token: &'a str, prev: Option<&str>) -> f64 {
        let copy_count = self.counts.get(token).copied().unwrap_or(0);
        let lp = self.model.mixture_logprob(
            self.model.token_id_str(token),
            copy_count,
            self.len,
            self.model.token_id(prev),
        );
        *self.counts.entry(token).or_insert(0) += 1;
        self.len += 1;
        lp
    }
}

/// Log reward of producing `expected` given candidate context `candidate`:
/// the sum over expected tokens of their log-probabilities, with the context
/// growing by each consumed token. Empty `expected` yields 0 (log of the
/// empty product).
pub fn reward(model: &OracleModel, candidate: &TokenSeq, expected: &TokenSeq) -> f64 {
    let mut ctx = GrowingContext::new(model, candidate);
    let mut total = 0.0;
    let mut prev: Option<&str> = None;
    for tok in &expected.tokens {
        total += ctx.score_and_push(tok, prev);
        prev = Some(tok);
    }
    total
}

/// Per-candidate log-rewards with their softmax-normalized weights.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardSet {
    pub log_rewards: Vec<f64>,
    pub alpha: f64,
    pub weights: Vec<f64>,
}

/// Softmax over `log_rewards / alpha`, computed with max-subtraction.
/// Weights are strictly positive and sum to 1.
pub fn weights_from_rewards(log_rewards: &[f64], alpha: f64) -> Result<RewardSet> {
    if log_rewards.is_empty() {
        return Err(Error::invalid("log_rewards must be nonempty"));
    }
    if alpha.is_nan() || alpha <= 0.0 {
        return Err(Error::invalid("alpha must be > 0"));
    }
    if log_rewards.iter().any(|r| !r.is_finite()) {
        return Err(Error::invalid("log_rewards must be finite"));
    }
    let scaled: Vec<f64> = log_rewards.iter().map(|r| r / alpha).collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    // Exponentials are floored so extreme reward ratios cannot underflow a
    // weight to exactly zero.
    let exps: Vec<f64> = scaled.iter().map(|s| (s - max).exp().max(1e-300)).collect();
    let sum: f64 = exps.iter().sum();
    let weights = exps.iter().map(|e| e / sum).collect();
    Ok(RewardSet { log_rewards: log_rewards.to_vec(), alpha, weights })
}

/// Perplexity of `target` given `context`: `exp(-mean(token log-probs))`,
/// with the context growing over consumed target tokens as in [`reward`].
pub fn perplexity(model: &OracleModel, target: &TokenSeq, context: &TokenSeq) -> Result<f64> {
    if target.is_empty() {
        return Err(Error::invalid("perplexity target must be nonempty"));
    }
    let total = reward(model, context, target);
    Ok((-total / target.len() as f64).exp())
}

#[derive(Serialize, Deserialize)]
struct OracleFile {
    lambda: f64,
    vocab: Vec<String>,
    counts: Vec<(u32, u32, u64)>,
}

/// Serializes the oracle as JSON: vocab array (index = id), lambda, and
/// sparse count triples `[prev_id, next_id, count]`.
pub fn save_oracle(model: &OracleModel, path: &Path) -> Result<()> {
    let mut counts: Vec<(u32, u32, u64)> = model
        .bigram_counts
        .iter()
        .map(|(&(p, n), &c)| (p, n, c))
        .collect();
    counts.sort_unstable();
    let file = OracleFile {
        lambda: model.lambda,
        vocab: model.tokens.clone(),
        counts,
    };
    let w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(w, &file).map_err(|e| Error::Format(format!("oracle write failed: {e}")))
}

pub fn load_oracle(path: &Path) -> Result<OracleModel> {
    let r = BufReader::new(File::open(path)?);
    let file: OracleFile =
        serde_json::from_reader(r).map_err(|e| Error::Format(format!("oracle parse failed: {e}")))?;
    if file.vocab.len() < 2 || file.vocab[0] != BOS_TOKEN || file.vocab[1] != UNK_TOKEN {
        return Err(Error::Format("oracle vocab must start with reserved BOS and UNK".into()));
    }
    if !(0.0..=1.0).contains(&file.lambda) {
        return Err(Error::Format("oracle lambda out of range".into()));
    }
    let mut token_ids = HashMap::new();
    for (id, tok) in file.vocab.iter().enumerate() {
        token_ids.insert(tok.clone(), id as u32);
    }
    let mut bigram_counts = HashMap::new();
    let mut prev_counts: HashMap<u32, u64> = HashMap::new();
    let v = file.vocab.len() as u32;
    for (prev, next, count) in file.counts {
        if prev >= v || next >= v {
            return Err(Error::Format(format!("count triple ({prev},{next}) out of vocab range")));
        }
        bigram_counts.insert((prev, next), count);
        *prev_counts.entry(prev).or_insert(0) += count;
    }
    Ok(OracleModel {
        tokens: file.vocab,
        token_ids,
        bigram_counts,
        prev_counts,
        lambda: file.lambda,
    })
}
