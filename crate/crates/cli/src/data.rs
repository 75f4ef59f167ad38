//! Data-directory layout written by `synth-data` and consumed by the other
//! commands:
//!
//! - `tasks.json`    task specs plus per-task repetition factors
//! - `train.jsonl`   training instances (one JSON object per line)
//! - `heldout.jsonl` held-out retrieval queries with gold document ids
//! - `corpus.jsonl`  per-task candidate documents
//! - `qa_eval.json`, `icl_eval.json`, `tool_eval.json`, `conv_eval.json`
//! - `memory.json`   long-document suite for the memory scenario

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use uniembed::corpus::{save_instances, TrainingInstance};
use uniembed::encoder::TaskSpec;
use uniembed::synth::{CorpusDoc, HeldoutQuery, SyntheticCorpus};

#[derive(Serialize, Deserialize)]
struct TasksFile {
    tasks: Vec<TaskSpec>,
    repetition: BTreeMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct CorpusLine {
    task: String,
    id: String,
    text: String,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| path.display().to_string())?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let r = BufReader::new(File::open(path).with_context(|| path.display().to_string())?);
    serde_json::from_reader(r).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_corpus_dir(dir: &Path, corpus: &SyntheticCorpus) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_json(
        &dir.join("tasks.json"),
        &TasksFile { tasks: corpus.tasks.clone(), repetition: corpus.repetition.clone() },
    )?;

    let mut train = BufWriter::new(File::create(dir.join("train.jsonl"))?);
    for instances in corpus.train.values() {
        save_instances(&mut train, instances)?;
    }
    train.flush()?;

    let mut heldout = BufWriter::new(File::create(dir.join("heldout.jsonl"))?);
    for h in &corpus.heldout {
        serde_json::to_writer(&mut heldout, h)?;
        heldout.write_all(b"\n")?;
    }
    heldout.flush()?;

    let mut docs = BufWriter::new(File::create(dir.join("corpus.jsonl"))?);
    for (task, entries) in &corpus.corpora {
        for doc in entries {
            serde_json::to_writer(
                &mut docs,
                &CorpusLine { task: task.clone(), id: doc.id.clone(), text: doc.text.clone() },
            )?;
            docs.write_all(b"\n")?;
        }
    }
    docs.flush()?;
    Ok(())
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let r = BufReader::new(File::open(path).with_context(|| path.display().to_string())?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .with_context(|| format!("{} line {}", path.display(), i + 1))?,
        );
    }
    Ok(out)
}

pub fn read_corpus_dir(dir: &Path) -> Result<SyntheticCorpus> {
    let tasks_file: TasksFile = read_json(&dir.join("tasks.json"))?;
    let instances: Vec<TrainingInstance> = read_jsonl(&dir.join("train.jsonl"))?;
    let mut train: BTreeMap<String, Vec<TrainingInstance>> = BTreeMap::new();
    for inst in instances {
        inst.validate().map_err(anyhow::Error::msg)?;
        train.entry(inst.task_id.clone()).or_default().push(inst);
    }
    let heldout: Vec<HeldoutQuery> = read_jsonl(&dir.join("heldout.jsonl"))?;
    let lines: Vec<CorpusLine> = read_jsonl(&dir.join("corpus.jsonl"))?;
    let mut corpora: BTreeMap<String, Vec<CorpusDoc>> = BTreeMap::new();
    for line in lines {
        corpora
            .entry(line.task)
            .or_default()
            .push(CorpusDoc { id: line.id, text: line.text });
    }
    Ok(SyntheticCorpus {
        tasks: tasks_file.tasks,
        repetition: tasks_file.repetition,
        train,
        heldout,
        corpora,
    })
}
