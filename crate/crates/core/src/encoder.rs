//! The trainable embedding model.
//!
//! Texts are featurized as hashed unigrams and bigrams (FNV-1a-64 mod F),
//! pushed through one tanh layer and one linear layer, then L2-normalized.
//! Instruction-prefixed encoding concatenates the task instruction's tokens
//! in front of the text's tokens before featurization, so the prefix shifts
//! both unigram features and the bigram bridging into the text.
//!
//! Gradients are exact and hand-derived, including the Jacobian of the
//! normalization step.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, TokenSeq};
use crate::error::{Error, Result};
use crate::par;

/// Norm floor: keeps the normalization well-defined at y = 0.
pub const NORM_FLOOR: f64 = 1e-12;

const CHECKPOINT_MAGIC: &[u8; 4] = b"UEMB";
const CHECKPOINT_VERSION: u32 = 1;

/// A task identifier with its instruction strings and loss-routing flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub query_instruction: String,
    pub key_instruction: String,
    pub use_stabilized_distillation: bool,
    pub reward_temperature_alpha: f64,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.query_instruction == self.key_instruction {
            return Err(Error::invalid(format!(
                "task {}: query and key instructions must differ",
                self.task_id
            )));
        }
        if self.reward_temperature_alpha.is_nan() || self.reward_temperature_alpha <= 0.0 {
            return Err(Error::invalid(format!(
                "task {}: reward temperature alpha must be > 0",
                self.task_id
            )));
        }
        Ok(())
    }
}

/// A unit-norm embedding vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub vector: Vec<f64>,
}

impl Embedding {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        dot(&self.vector, &other.vector)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn get_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// All trainable weights plus the dimensional configuration.
///
/// `w1` is H x F, `w2` is d x H; biases are zero-initialized. The same struct
/// doubles as the gradient container (same shapes throughout).
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub embedding_dim: usize,
    pub w1: Mat,
    pub b1: Vec<f64>,
    pub w2: Mat,
    pub b2: Vec<f64>,
}

impl EncoderParams {
    pub fn zeros(feature_dim: usize, hidden_dim: usize, embedding_dim: usize) -> Self {
        EncoderParams {
            feature_dim,
            hidden_dim,
            embedding_dim,
            w1: Mat::zeros(hidden_dim, feature_dim),
            b1: vec![0.0; hidden_dim],
            w2: Mat::zeros(embedding_dim, hidden_dim),
            b2: vec![0.0; embedding_dim],
        }
    }

    pub fn zeros_like(&self) -> Self {
        EncoderParams::zeros(self.feature_dim, self.hidden_dim, self.embedding_dim)
    }

    pub fn n_params(&self) -> usize {
        self.w1.data.len() + self.b1.len() + self.w2.data.len() + self.b2.len()
    }

    /// Flat view over all parameter groups in checkpoint order.
    pub fn flat_mut(&mut self) -> [&mut [f64]; 4] {
        [
            &mut self.w1.data,
            &mut self.b1,
            &mut self.w2.data,
            &mut self.b2,
        ]
    }

    pub fn flat(&self) -> [&[f64]; 4] {
        [&self.w1.data, &self.b1, &self.w2.data, &self.b2]
    }

    pub fn is_finite(&self) -> bool {
        self.flat().iter().all(|g| g.iter().all(|v| v.is_finite()))
    }

    /// Writes the little-endian binary checkpoint:
    /// magic "UEMB", version, F, H, d, then w1, b1, w2, b2 as f64 row-major.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(self.feature_dim as u32).to_le_bytes())?;
        w.write_all(&(self.hidden_dim as u32).to_le_bytes())?;
        w.write_all(&(self.embedding_dim as u32).to_le_bytes())?;
        for group in self.flat() {
            for v in group {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("bad checkpoint magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let feature_dim = read_u32(&mut r)? as usize;
        let hidden_dim = read_u32(&mut r)? as usize;
        let embedding_dim = read_u32(&mut r)? as usize;
        let mut params = EncoderParams::zeros(feature_dim, hidden_dim, embedding_dim);
        for group in params.flat_mut() {
            for v in group.iter_mut() {
                *v = read_f64(&mut r)?;
            }
        }
        let mut probe = [0u8; 1];
        if r.read(&mut probe)? != 0 {
            return Err(Error::Format("trailing bytes after checkpoint payload".into()));
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Format("unexpected end of file".into()))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut buf = [0u8; 8];
    read_exact(r, &mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

/// Deterministic initialization: weight entries i.i.d. uniform in [-s, s]
/// with s = sqrt(6 / (fan_in + fan_out)), biases zero.
pub fn init_params(seed: u64, feature_dim: usize, hidden_dim: usize, embedding_dim: usize) -> EncoderParams {
    assert!(feature_dim >= 1 && hidden_dim >= 1 && embedding_dim >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = EncoderParams::zeros(feature_dim, hidden_dim, embedding_dim);
    let s1 = (6.0 / (feature_dim + hidden_dim) as f64).sqrt();
    for v in params.w1.data.iter_mut() {
        *v = rng.gen::<f64>() * 2.0 * s1 - s1;
    }
    let s2 = (6.0 / (hidden_dim + embedding_dim) as f64).sqrt();
    for v in params.w2.data.iter_mut() {
        *v = rng.gen::<f64>() * 2.0 * s2 - s2;
    }
    params
}

/// Sparse feature vector: parallel index/value arrays, indices strictly
/// ascending.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVec {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseVec {
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// FNV-1a 64-bit over a byte stream.
pub fn fnv1a_64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn fnv1a_64_bigram(a: &str, b: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &byte in a.as_bytes() {
        h ^= byte as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h ^= 0x1f;
    h = h.wrapping_mul(0x100000001b3);
    for &byte in b.as_bytes() {
        h ^= byte as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Hashes each unigram and each bigram (joined by the 0x1F unit separator)
/// into `feature_dim` buckets, counting occurrences, then L2-normalizes when
/// nonzero.
pub fn featurize(seq: &TokenSeq, feature_dim: usize) -> SparseVec {
    assert!(feature_dim >= 2, "feature_dim must be >= 2");
    let f = feature_dim as u64;
    let mut idx: Vec<u32> = Vec::with_capacity(seq.len() * 2);
    for tok in &seq.tokens {
        idx.push((fnv1a_64(tok.as_bytes()) % f) as u32);
    }
    for pair in seq.tokens.windows(2) {
        idx.push((fnv1a_64_bigram(&pair[0], &pair[1]) % f) as u32);
    }
    idx.sort_unstable();
    let mut out = SparseVec::default();
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && idx[j] == idx[i] {
            j += 1;
        }
        out.indices.push(idx[i]);
        out.values.push((j - i) as f64);
        i = j;
    }
    let norm = out.l2_norm();
    if norm > 0.0 {
        for v in out.values.iter_mut() {
            *v /= norm;
        }
    }
    out
}

/// Saved forward activations, reused by the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub features: SparseVec,
    pub hidden: Vec<f64>,
    pub prenorm: Vec<f64>,
    pub prenorm_norm: f64,
    pub embedding: Vec<f64>,
}

fn instruction_tokens(instruction: &str, text: &str) -> TokenSeq {
    let mut toks = tokenize(instruction);
    toks.tokens.extend(tokenize(text).tokens);
    toks
}

pub fn forward_features(features: &SparseVec, params: &EncoderParams) -> ForwardCache {
    let h_dim = params.hidden_dim;
    let d_dim = params.embedding_dim;
    let mut hidden = params.b1.clone();
    for (i, &f_idx) in features.indices.iter().enumerate() {
        let v = features.values[i];
        let col = f_idx as usize;
        for h in 0..h_dim {
            hidden[h] += params.w1.get(h, col) * v;
        }
    }
    for h in hidden.iter_mut() {
        *h = h.tanh();
    }
    let mut prenorm = params.b2.clone();
    for r in 0..d_dim {
        prenorm[r] += dot(params.w2.row(r), &hidden);
    }
    let norm = dot(&prenorm, &prenorm).sqrt();
    let scale = 1.0 / norm.max(NORM_FLOOR);
    let embedding = prenorm.iter().map(|v| v * scale).collect();
    ForwardCache {
        features: features.clone(),
        hidden,
        prenorm,
        prenorm_norm: norm,
        embedding,
    }
}

/// Encodes `[instruction tokens ++ text tokens]` and returns the unit-norm
/// embedding together with the forward cache.
pub fn encode_with_cache(instruction: &str, text: &str, params: &EncoderParams) -> ForwardCache {
    let toks = instruction_tokens(instruction, text);
    let features = featurize(&toks, params.feature_dim);
    forward_features(&features, params)
}

pub fn encode(instruction: &str, text: &str, params: &EncoderParams) -> Embedding {
    Embedding { vector: encode_with_cache(instruction, text, params).embedding }
}

/// Forward pass without the final normalization (pre-norm output `y`).
pub fn encode_unnormalized(instruction: &str, text: &str, params: &EncoderParams) -> Vec<f64> {
    encode_with_cache(instruction, text, params).prenorm
}

/// The per-text pieces of the backward pass that do not touch the dense
/// gradient buffers. Computing these is embarrassingly parallel across a
/// batch; folding them into dense gradients stays sequential for
/// bit-deterministic accumulation order.
#[derive(Debug, Clone)]
pub struct LocalGrad {
    pub g_prenorm: Vec<f64>,
    pub g_prehidden: Vec<f64>,
}

/// Backpropagates `upstream` through normalization, the linear layer, and
/// tanh, yielding gradients at the pre-norm output and the pre-tanh hidden
/// activations.
pub fn backward_local(cache: &ForwardCache, params: &EncoderParams, upstream: &[f64]) -> LocalGrad {
    let h_dim = params.hidden_dim;
    let d_dim = params.embedding_dim;
    // Jacobian of y / max(||y||, floor): on the normalized branch the radial
    // component of the upstream vector is projected away.
    let g_prenorm: Vec<f64> = if cache.prenorm_norm > NORM_FLOOR {
        let e_dot_u = dot(&cache.embedding, upstream);
        (0..d_dim)
            .map(|r| (upstream[r] - cache.embedding[r] * e_dot_u) / cache.prenorm_norm)
            .collect()
    } else {
        upstream.iter().map(|u| u / NORM_FLOOR).collect()
    };
    let mut g_hidden = vec![0.0; h_dim];
    for r in 0..d_dim {
        let w2_row = params.w2.row(r);
        for c in 0..h_dim {
            g_hidden[c] += w2_row[c] * g_prenorm[r];
        }
    }
    let g_prehidden = g_hidden
        .iter()
        .zip(&cache.hidden)
        .map(|(g, h)| g * (1.0 - h * h))
        .collect();
    LocalGrad { g_prenorm, g_prehidden }
}

/// Folds one text's local gradients into the dense parameter gradients.
pub fn accumulate_local(cache: &ForwardCache, local: &LocalGrad, grads: &mut EncoderParams) {
    let h_dim = grads.hidden_dim;
    for (r, &gy) in local.g_prenorm.iter().enumerate() {
        grads.b2[r] += gy;
        let g_row = &mut grads.w2.data[r * h_dim..(r + 1) * h_dim];
        for c in 0..h_dim {
            g_row[c] += gy * cache.hidden[c];
        }
    }
    for (c, &gz) in local.g_prehidden.iter().enumerate() {
        grads.b1[c] += gz;
        for (i, &f_idx) in cache.features.indices.iter().enumerate() {
            *grads.w1.get_mut(c, f_idx as usize) += gz * cache.features.values[i];
        }
    }
}

/// Accumulates the exact gradient of `<e, upstream>` with respect to all
/// parameters into `grads`, reusing a forward cache.
pub fn accumulate_grad(cache: &ForwardCache, params: &EncoderParams, upstream: &[f64], grads: &mut EncoderParams) {
    let local = backward_local(cache, params, upstream);
    accumulate_local(cache, &local, grads);
}

/// Exact analytic gradient of `<encode(instruction, text), upstream>` with
/// respect to all parameters.
pub fn encode_grad(instruction: &str, text: &str, params: &EncoderParams, upstream: &[f64]) -> EncoderParams {
    let cache = encode_with_cache(instruction, text, params);
    let mut grads = params.zeros_like();
    accumulate_grad(&cache, params, upstream, &mut grads);
    grads
}

/// Batch encode; parallel when the `parallel` feature is on. Output order
/// matches input order.
pub fn encode_batch(params: &EncoderParams, items: &[(String, String)]) -> Vec<Embedding> {
    par::map_slice(items, |(instr, text)| encode(instr, text, params))
}

/// Sequential twin of [`encode_batch`].
pub fn encode_batch_seq(params: &EncoderParams, items: &[(String, String)]) -> Vec<Embedding> {
    par::map_slice_seq(items, |(instr, text)| encode(instr, text, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokenize;

    fn tiny_params(seed: u64) -> EncoderParams {
        init_params(seed, 32, 8, 4)
    }

    #[test]
    fn fnv1a_matches_published_constants() {
        // Independently derived from the FNV-1a definition:
        // h = 14695981039346656037; h = (h ^ byte) * 1099511628211 per byte.
        assert_eq!(fnv1a_64(b""), 14695981039346656037);
        assert_eq!(fnv1a_64(b"ab"), 620445648566982762);
    }

    #[test]
    fn featurize_single_token_hits_fnv_bucket() {
        let sv = featurize(&TokenSeq::new(vec!["ab".into()]), 16);
        assert_eq!(sv.indices, vec![(620445648566982762u64 % 16) as u32]);
        assert_eq!(sv.values, vec![1.0]);
    }

    #[test]
    fn featurize_empty_is_zero() {
        let sv = featurize(&TokenSeq::default(), 16);
        assert_eq!(sv.nnz(), 0);
    }

    #[test]
    fn featurize_unit_norm() {
        let sv = featurize(&tokenize("one two three two"), 64);
        assert!((sv.l2_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn featurize_counts_repeats_before_normalizing() {
        let sv = featurize(&TokenSeq::new(vec!["x".into(), "x".into(), "x".into()]), 1024);
        // unigram "x" counted 3 times, bigram (x,x) twice; values 3 and 2
        // pre-normalization.
        assert_eq!(sv.nnz(), 2);
        let max = sv.values.iter().cloned().fold(0.0, f64::max);
        let min = sv.values.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!((max / min - 1.5).abs() < 1e-12);
    }

    #[test]
    fn encode_unit_norm_and_deterministic() {
        let params = tiny_params(7);
        let e1 = encode("find docs", "hello world", &params);
        let e2 = encode("find docs", "hello world", &params);
        assert_eq!(e1, e2);
        let norm = dot(&e1.vector, &e1.vector).sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }

    #[test]
    fn encode_zero_w2_returns_normalized_bias() {
        let mut params = EncoderParams::zeros(32, 8, 4);
        params.b2 = vec![3.0, 0.0, 4.0, 0.0];
        let e = encode("any", "input at all", &params);
        assert!((e.vector[0] - 0.6).abs() < 1e-12);
        assert!((e.vector[2] - 0.8).abs() < 1e-12);
        let e2 = encode("different", "text", &params);
        assert_eq!(e, e2);
    }

    #[test]
    fn instruction_prefix_changes_features() {
        let q = instruction_tokens("match the query for task0", "payload text");
        let k = instruction_tokens("store the entry for task0", "payload text");
        assert_ne!(featurize(&q, 4096), featurize(&k, 4096));
    }

    #[test]
    fn encode_grad_zero_upstream() {
        let params = tiny_params(3);
        let g = encode_grad("i", "text here", &params, &[0.0; 4]);
        assert!(g.flat().iter().all(|grp| grp.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn encode_grad_radial_direction_is_zero() {
        let params = tiny_params(11);
        let e = encode("instr", "some tokens", &params);
        let g = encode_grad("instr", "some tokens", &params, &e.vector);
        let max = g
            .flat()
            .iter()
            .flat_map(|grp| grp.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max < 1e-12, "radial gradient not killed: {max}");
    }

    /// Central finite differences of `<encode, upstream>` over one parameter
    /// entry; the independent oracle for the analytic backward pass.
    fn numeric_grad(
        instruction: &str,
        text: &str,
        params: &EncoderParams,
        upstream: &[f64],
        group: usize,
        entry: usize,
        h: f64,
    ) -> f64 {
        let eval = |p: &EncoderParams| dot(&encode(instruction, text, p).vector, upstream);
        let mut plus = params.clone();
        plus.flat_mut()[group][entry] += h;
        let mut minus = params.clone();
        minus.flat_mut()[group][entry] -= h;
        (eval(&plus) - eval(&minus)) / (2.0 * h)
    }

    fn rel_err(a: f64, n: f64) -> f64 {
        (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
    }

    #[test]
    fn encode_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..5 {
            let params = tiny_params(100 + trial);
            let upstream: Vec<f64> = (0..4).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            let text = ["alpha beta gamma", "one two", "z9 q8 r7 s6"][trial as usize % 3];
            let analytic = encode_grad("task instr", text, &params, &upstream);
            for group in 0..4 {
                let len = analytic.flat()[group].len();
                for entry in (0..len).step_by(len.div_ceil(10).max(1)) {
                    let n = numeric_grad("task instr", text, &params, &upstream, group, entry, 1e-5);
                    let a = analytic.flat()[group][entry];
                    assert!(
                        rel_err(a, n) <= 1e-4,
                        "group {group} entry {entry}: analytic {a} numeric {n}"
                    );
                }
            }
        }
    }

    #[test]
    fn init_is_deterministic_with_zero_biases_and_bounds() {
        let a = init_params(42, 64, 16, 8);
        let b = init_params(42, 64, 16, 8);
        assert_eq!(a, b);
        assert!(a.b1.iter().all(|v| *v == 0.0));
        assert!(a.b2.iter().all(|v| *v == 0.0));
        let s1 = (6.0 / (64 + 16) as f64).sqrt();
        assert!(a.w1.data.iter().all(|v| v.abs() <= s1));
        let s2 = (6.0 / (16 + 8) as f64).sqrt();
        assert!(a.w2.data.iter().all(|v| v.abs() <= s2));
        assert_ne!(a, init_params(43, 64, 16, 8));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let params = tiny_params(5);
        let mut buf = Vec::new();
        params.write(&mut buf).unwrap();
        let loaded = EncoderParams::read(buf.as_slice()).unwrap();
        assert_eq!(params, loaded);
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let params = tiny_params(5);
        let mut buf = Vec::new();
        params.write(&mut buf).unwrap();

        let truncated = &buf[..buf.len() - 3];
        assert!(matches!(EncoderParams::read(truncated), Err(Error::Format(_))));

        let mut bad_magic = buf.clone();
        bad_magic[0] = b'X';
        assert!(matches!(EncoderParams::read(bad_magic.as_slice()), Err(Error::Format(_))));

        let mut bad_version = buf.clone();
        bad_version[4..8].copy_from_slice(&9u32.to_le_bytes());
        match EncoderParams::read(bad_version.as_slice()) {
            Err(Error::Format(msg)) => {
                assert!(msg.contains('9') && msg.contains('1'), "message should name versions: {msg}");
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn batch_encode_matches_sequential() {
        let params = tiny_params(1);
        let items: Vec<(String, String)> = (0..32)
            .map(|i| ("prefix instr".to_string(), format!("text number {i}")))
            .collect();
        assert_eq!(encode_batch(&params, &items), encode_batch_seq(&params, &items));
    }
}
