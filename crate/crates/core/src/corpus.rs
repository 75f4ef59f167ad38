//! Tokenization, chunking, and JSONL dataset ingestion.
//!
//! The token rule is deliberately minimal: lowercase the input, then take
//! maximal runs of ASCII `[a-z0-9]`. Everything else is a delimiter. This is
//! bit-exact across platforms, which keeps every downstream hash, reward, and
//! metric reproducible.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A tokenized text: an ordered list of lowercase alphanumeric tokens.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct TokenSeq {
    pub tokens: Vec<String>,
}

impl TokenSeq {
    pub fn new(tokens: Vec<String>) -> Self {
        TokenSeq { tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Joins tokens with single spaces. `tokenize(seq.join())` returns the
    /// same sequence again.
    pub fn join(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Lowercases the input and splits it into maximal runs of `[a-z0-9]`.
/// Empty input yields an empty sequence.
pub fn tokenize(text: &str) -> TokenSeq {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        let ch = ch.to_ascii_lowercase();
        if ch.is_ascii_lowercase() || ch.is_ascii_digit() {
            current.push(ch);
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    TokenSeq { tokens }
}

/// A document split into fixed-length token chunks. The trailing remainder
/// that does not fill a whole chunk is discarded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkedDocument {
    pub chunks: Vec<TokenSeq>,
    pub chunk_size: usize,
}

/// Cuts `seq` into `floor(len / chunk_size)` chunks of exactly `chunk_size`
/// tokens each.
pub fn chunk(seq: &TokenSeq, chunk_size: usize) -> Result<ChunkedDocument> {
    if chunk_size == 0 {
        return Err(Error::invalid("chunk_size must be >= 1"));
    }
    let n_chunks = seq.len() / chunk_size;
    let chunks = (0..n_chunks)
        .map(|i| TokenSeq::new(seq.tokens[i * chunk_size..(i + 1) * chunk_size].to_vec()))
        .collect();
    Ok(ChunkedDocument { chunks, chunk_size })
}

/// One retrieval candidate of a training instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub text: String,
    #[serde(rename = "pos")]
    pub is_hard_label_positive: bool,
}

/// One query with its candidate list, optional hard label, and optional
/// per-candidate log-rewards (natural-log units), tagged by task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingInstance {
    #[serde(rename = "task")]
    pub task_id: String,
    #[serde(rename = "query")]
    pub query_text: String,
    pub candidates: Vec<Candidate>,
    pub log_rewards: Option<Vec<f64>>,
}

impl TrainingInstance {
    /// Index of the hard-labeled positive candidate, if any.
    pub fn positive_index(&self) -> Option<usize> {
        self.candidates.iter().position(|c| c.is_hard_label_positive)
    }

    /// Checks the instance invariants: at most one positive, and log-rewards
    /// (when present) have matching length with all entries finite.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let n_pos = self
            .candidates
            .iter()
            .filter(|c| c.is_hard_label_positive)
            .count();
        if n_pos > 1 {
            return Err(format!("{n_pos} candidates marked positive (at most 1 allowed)"));
        }
        if let Some(rewards) = &self.log_rewards {
            if rewards.len() != self.candidates.len() {
                return Err(format!(
                    "log_rewards length {} != candidates length {}",
                    rewards.len(),
                    self.candidates.len()
                ));
            }
            if let Some(r) = rewards.iter().find(|r| !r.is_finite()) {
                return Err(format!("non-finite log reward {r}"));
            }
        }
        Ok(())
    }
}

/// Reads one instance per line from a JSONL file, overriding each record's
/// task with `task_id` when `task_id` is non-empty. Malformed lines report
/// their 1-based line number; instances violating invariants are rejected.
pub fn load_instances(path: &Path, task_id: &str) -> Result<Vec<TrainingInstance>> {
    let file = File::open(path)?;
    load_instances_from(BufReader::new(file), task_id)
}

pub fn load_instances_from<R: BufRead>(reader: R, task_id: &str) -> Result<Vec<TrainingInstance>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut instance: TrainingInstance =
            serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: line_no,
                msg: e.to_string(),
            })?;
        if !task_id.is_empty() {
            instance.task_id = task_id.to_string();
        }
        instance.validate().map_err(|msg| Error::Validation {
            line: line_no,
            msg,
        })?;
        out.push(instance);
    }
    Ok(out)
}

/// Writes instances in the JSONL schema consumed by [`load_instances`]:
/// one object per line, UTF-8, `\n` separated.
pub fn save_instances<W: Write>(writer: &mut W, instances: &[TrainingInstance]) -> Result<()> {
    for instance in instances {
        let line = serde_json::to_string(instance)
            .map_err(|e| Error::Format(format!("instance serialization failed: {e}")))?;
        writer.write_all(line.as_bytes())?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_instances_to_path(path: &Path, instances: &[TrainingInstance]) -> Result<()> {
    let mut file = std::io::BufWriter::new(File::create(path)?);
    save_instances(&mut file, instances)
}
