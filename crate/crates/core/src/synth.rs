//! Synthetic multi-task corpus generation.
//!
//! Construction: a shared pool of concept tokens appears in every task's
//! queries, while each task owns a disjoint alias vocabulary for its keys.
//! Task t maps concept c_i to its alias doc k{t}x{i}, so the same query
//! surface demands a different target per task. Queries carry random
//! distractor noise, keys carry descriptor tokens, and per-task corpora
//! include distractor-only noise docs, which keeps retrieval non-trivial and
//! makes the instruction-prefix and homogeneous-batching ablations
//! measurable.
//!
//! Task supervision profiles cycle through five shapes: hard label plus
//! rewards (stabilized, alpha 1), rewards only (stabilized, alpha 1), rewards
//! only (stabilized, alpha 0.1), hard label only with repetition 2, and hard
//! label only. Log-rewards are computed from a copy-heavy oracle fitted on
//! the task corpus: the reward of a candidate is the oracle likelihood of the
//! gold document given that candidate as context.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Candidate, TrainingInstance};
use crate::encoder::{fnv1a_64, TaskSpec};
use crate::error::{Error, Result};
use crate::harness::{Conversation, IclItem, QaItem, ToolRequest};
use crate::oracle::{fit_oracle, reward};

const TASK_DESCRIPTOR_POOL: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Profile {
    Qa,
    Icl,
    Lm,
    Tool,
    Conv,
}

fn profile_of(task_index: usize) -> Profile {
    match task_index % 5 {
        0 => Profile::Qa,
        1 => Profile::Icl,
        2 => Profile::Lm,
        3 => Profile::Tool,
        _ => Profile::Conv,
    }
}

impl Profile {
    fn has_hard_label(self) -> bool {
        matches!(self, Profile::Qa | Profile::Tool | Profile::Conv)
    }

    fn has_rewards(self) -> bool {
        matches!(self, Profile::Qa | Profile::Icl | Profile::Lm)
    }

    fn stabilized(self) -> bool {
        self.has_rewards()
    }

    fn alpha(self) -> f64 {
        if matches!(self, Profile::Lm) {
            0.1
        } else {
            1.0
        }
    }

    fn repetition(self) -> usize {
        if matches!(self, Profile::Tool) {
            2
        } else {
            1
        }
    }

    /// Hard-label-only tasks carry just their positive candidate and lean
    /// entirely on in-batch negatives; reward-bearing tasks carry a candidate
    /// list for distillation.
    fn candidates(self, configured: usize) -> usize {
        if self.has_rewards() {
            configured
        } else {
            1
        }
    }

    /// Copy weight of the reward oracle. QA and LM rewards are sharp (the
    /// top candidate dominates); ICL rewards are deliberately compressed so
    /// the candidate weights come out closely distributed while their order
    /// still tracks overlap with the expected output.
    fn reward_lambda(self) -> f64 {
        match self {
            Profile::Icl => 0.01,
            _ => 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub seed: u64,
    pub n_tasks: usize,
    pub n_per_task: usize,
    pub vocab_size: usize,
    /// Candidates per instance: 1 positive + (N-1) hard negatives.
    pub candidates_per_instance: usize,
    /// Distractor tokens appended to each query.
    pub query_noise_tokens: usize,
    /// Descriptor tokens per corpus document.
    pub doc_descriptors: usize,
    /// Held-out queries per task; 0 means max(10, n_per_task / 10).
    pub heldout_per_task: usize,
}

impl SynthParams {
    pub fn new(seed: u64, n_tasks: usize, n_per_task: usize, vocab_size: usize) -> Self {
        SynthParams {
            seed,
            n_tasks,
            n_per_task,
            vocab_size,
            candidates_per_instance: 2,
            query_noise_tokens: 3,
            doc_descriptors: 3,
            heldout_per_task: 0,
        }
    }

    fn effective_heldout(&self) -> usize {
        if self.heldout_per_task > 0 {
            self.heldout_per_task
        } else {
            (self.n_per_task / 10).max(10)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusDoc {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldoutQuery {
    pub task_id: String,
    pub query_text: String,
    pub gold_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyntheticCorpus {
    pub tasks: Vec<TaskSpec>,
    pub repetition: BTreeMap<String, usize>,
    pub train: BTreeMap<String, Vec<TrainingInstance>>,
    pub heldout: Vec<HeldoutQuery>,
    pub corpora: BTreeMap<String, Vec<CorpusDoc>>,
}

impl SyntheticCorpus {
    pub fn n_train_instances(&self) -> usize {
        self.train.values().map(|v| v.len()).sum()
    }

    pub fn task_spec(&self, task_id: &str) -> Option<&TaskSpec> {
        self.tasks.iter().find(|t| t.task_id == task_id)
    }

    fn task_with_profile(&self, profile: Profile) -> Result<usize> {
        (0..self.tasks.len())
            .find(|&t| profile_of(t) == profile)
            .ok_or_else(|| Error::invalid(format!("corpus has no task with {profile:?} profile")))
    }
}

/// Shared token layout: concepts, per-task aliases, and the distractor pool
/// split into descriptor / query-noise / decoy sections.
struct TokenLayout {
    n_concepts: usize,
    n_tasks: usize,
    n_distractors: usize,
}

impl TokenLayout {
    fn plan(params: &SynthParams) -> Result<TokenLayout> {
        if params.n_tasks < 1 || params.n_per_task < 1 || params.vocab_size < 1 {
            return Err(Error::invalid("seed-range parameters must be >= 1"));
        }
        let n_concepts = params.vocab_size / (params.n_tasks + 3);
        if n_concepts < 2 {
            return Err(Error::invalid(format!(
                "vocab_size {} too small to allot disjoint sub-vocabularies for {} tasks",
                params.vocab_size, params.n_tasks
            )));
        }
        let n_distractors = params.vocab_size - n_concepts * (params.n_tasks + 1);
        if params.candidates_per_instance > n_concepts {
            return Err(Error::invalid(
                "candidates_per_instance cannot exceed the number of concepts",
            ));
        }
        Ok(TokenLayout { n_concepts, n_tasks: params.n_tasks, n_distractors })
    }

    fn concept(&self, i: usize) -> String {
        format!("c{i}")
    }

    fn alias(&self, task: usize, i: usize) -> String {
        format!("k{task}x{i}")
    }

    fn distractor(&self, j: usize) -> String {
        format!("d{j}")
    }

    /// Descriptors come from the first third of the distractor pool so they
    /// are shared across tasks.
    fn descriptor_pool(&self) -> std::ops::Range<usize> {
        0..(self.n_distractors / 3).max(1)
    }

    /// Query noise may overlap descriptors (the first two thirds).
    fn query_noise_pool(&self) -> std::ops::Range<usize> {
        0..(self.n_distractors * 2 / 3).max(1)
    }

    /// Decoys never appear in documents or queries; reserved for
    /// multiple-choice wrong options.
    fn decoy_pool(&self) -> std::ops::Range<usize> {
        (self.n_distractors * 2 / 3).max(1)..self.n_distractors
    }

    fn total_tokens(&self) -> usize {
        self.n_concepts * (self.n_tasks + 1) + self.n_distractors
    }
}

fn sub_rng(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ fnv1a_64(label.as_bytes()))
}

fn sample_from_range(rng: &mut ChaCha8Rng, range: std::ops::Range<usize>, k: usize) -> Vec<usize> {
    let len = range.end - range.start;
    if k >= len {
        return range.collect();
    }
    let mut picked: Vec<usize> = Vec::with_capacity(k);
    while picked.len() < k {
        let v = range.start + rng.gen_range(0..len);
        if !picked.contains(&v) {
            picked.push(v);
        }
    }
    picked
}

fn task_spec(task_index: usize) -> TaskSpec {
    let profile = profile_of(task_index);
    TaskSpec {
        task_id: format!("task{task_index}"),
        query_instruction: format!("match this query against stored entries for task{task_index}"),
        key_instruction: format!("represent this stored entry for retrieval task{task_index}"),
        use_stabilized_distillation: profile.stabilized(),
        reward_temperature_alpha: profile.alpha(),
    }
}

fn make_corpus_docs(layout: &TokenLayout, task_index: usize, seed: u64, n_descriptors: usize) -> Vec<CorpusDoc> {
    let mut rng = sub_rng(seed, &format!("docs-task{task_index}"));
    let profile = profile_of(task_index);
    let mut docs = Vec::new();
    // Each task draws its documents' descriptors from a small shared pool and
    // stamps every document with a two-token task signature. Sibling
    // documents therefore overlap heavily: telling them apart takes many
    // same-task contrasts, and candidate rewards come out graded rather than
    // one-hot.
    let task_pool = sample_from_range(&mut rng, layout.descriptor_pool(), TASK_DESCRIPTOR_POOL + 2);
    let (signature, task_pool) = task_pool.split_at(2);
    for i in 0..layout.n_concepts {
        let mut descs: Vec<usize> = task_pool.to_vec();
        descs.shuffle(&mut rng);
        descs.truncate(n_descriptors.min(task_pool.len()));
        let mut tokens = Vec::new();
        if matches!(profile, Profile::Icl) {
            // ICL keys are (instruction, output) pairs: the concept appears in
            // the stored example alongside the alias.
            tokens.push(layout.concept(i));
        }
        tokens.push(layout.alias(task_index, i));
        tokens.extend(signature.iter().map(|&j| layout.distractor(j)));
        tokens.extend(descs.iter().map(|&j| layout.distractor(j)));
        docs.push(CorpusDoc { id: format!("t{task_index}-k{i:03}"), text: tokens.join(" ") });
    }
    let noise_pool = layout.query_noise_pool();
    for j in 0..layout.n_concepts {
        let toks = sample_from_range(&mut rng, noise_pool.clone(), 4)
            .into_iter()
            .map(|x| layout.distractor(x))
            .collect::<Vec<_>>();
        docs.push(CorpusDoc { id: format!("t{task_index}-n{j:03}"), text: toks.join(" ") });
    }
    docs
}

fn query_text(layout: &TokenLayout, rng: &mut ChaCha8Rng, concept: usize, profile: Profile, n_noise: usize) -> String {
    let noise: Vec<String> = sample_from_range(rng, layout.query_noise_pool(), n_noise)
        .into_iter()
        .map(|j| layout.distractor(j))
        .collect();
    if matches!(profile, Profile::Conv) {
        // Conversation-shaped query: short history turns first, the
        // concept-bearing query last.
        let mut parts: Vec<String> = noise.into_iter().take(2).collect();
        parts.push(layout.concept(concept));
        parts.join(" ")
    } else {
        let mut parts = vec![layout.concept(concept)];
        parts.extend(noise);
        parts.join(" ")
    }
}

/// Deterministic multi-task corpus: train instances, held-out retrieval
/// queries, and a candidate corpus per task.
pub fn synthesize_corpus(params: &SynthParams) -> Result<SyntheticCorpus> {
    let layout = TokenLayout::plan(params)?;
    debug_assert_eq!(layout.total_tokens(), params.vocab_size);
    let n = params.candidates_per_instance;

    let mut tasks = Vec::new();
    let mut repetition = BTreeMap::new();
    let mut train = BTreeMap::new();
    let mut corpora = BTreeMap::new();
    let mut heldout = Vec::new();

    for t in 0..params.n_tasks {
        let spec = task_spec(t);
        let profile = profile_of(t);
        let docs = make_corpus_docs(&layout, t, params.seed, params.doc_descriptors);
        let alias_doc = |i: usize| -> &CorpusDoc { &docs[i] };

        let reward_oracle = profile.has_rewards().then(|| {
            fit_oracle(
                &docs.iter().map(|d| tokenize(&d.text)).collect::<Vec<_>>(),
                profile.reward_lambda(),
            )
        });

        let n_task = profile.candidates(n);
        let mut rng = sub_rng(params.seed, &format!("train-task{t}"));
        let mut instances = Vec::with_capacity(params.n_per_task);
        for _ in 0..params.n_per_task {
            let gold = rng.gen_range(0..layout.n_concepts);
            let q = query_text(&layout, &mut rng, gold, profile, params.query_noise_tokens);
            let mut concept_slots: Vec<usize> = vec![gold];
            while concept_slots.len() < n_task {
                let c = rng.gen_range(0..layout.n_concepts);
                if !concept_slots.contains(&c) {
                    concept_slots.push(c);
                }
            }
            concept_slots[1..].shuffle(&mut rng);
            let mut order: Vec<usize> = (0..n_task).collect();
            order.shuffle(&mut rng);
            let candidates: Vec<Candidate> = order
                .iter()
                .map(|&slot| Candidate {
                    text: alias_doc(concept_slots[slot]).text.clone(),
                    is_hard_label_positive: profile.has_hard_label() && slot == 0,
                })
                .collect();
            let log_rewards = reward_oracle.as_ref().map(|oracle| {
                let expected = tokenize(&alias_doc(gold).text);
                candidates
                    .iter()
                    .map(|c| reward(oracle, &tokenize(&c.text), &expected))
                    .collect::<Vec<f64>>()
            });
            instances.push(TrainingInstance {
                task_id: spec.task_id.clone(),
                query_text: q,
                candidates,
                log_rewards,
            });
        }

        let mut held_rng = sub_rng(params.seed, &format!("heldout-task{t}"));
        for _ in 0..params.effective_heldout() {
            let gold = held_rng.gen_range(0..layout.n_concepts);
            let q = query_text(&layout, &mut held_rng, gold, profile, params.query_noise_tokens);
            heldout.push(HeldoutQuery {
                task_id: spec.task_id.clone(),
                query_text: q,
                gold_ids: vec![alias_doc(gold).id.clone()],
            });
        }

        repetition.insert(spec.task_id.clone(), profile.repetition());
        train.insert(spec.task_id.clone(), instances);
        corpora.insert(spec.task_id.clone(), docs);
        tasks.push(spec);
    }

    Ok(SyntheticCorpus { tasks, repetition, train, heldout, corpora })
}

/// Convenience wrapper matching the (seed, n_tasks, n_per_task, vocab_size)
/// calling convention.
pub fn synthesize(seed: u64, n_tasks: usize, n_per_task: usize, vocab_size: usize) -> Result<SyntheticCorpus> {
    synthesize_corpus(&SynthParams::new(seed, n_tasks, n_per_task, vocab_size))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaSuite {
    pub task_id: String,
    pub items: Vec<QaItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IclSuite {
    pub task_id: String,
    pub items: Vec<IclItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSuite {
    pub task_id: String,
    pub requests: Vec<ToolRequest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvSuite {
    pub task_id: String,
    pub conversations: Vec<Conversation>,
}

fn option_set(
    layout: &TokenLayout,
    rng: &mut ChaCha8Rng,
    gold_token: String,
    n_options: usize,
) -> Result<(Vec<String>, usize)> {
    let decoys = layout.decoy_pool();
    if decoys.end - decoys.start < n_options - 1 {
        return Err(Error::invalid("vocab_size too small to reserve option decoys"));
    }
    let mut options: Vec<String> = sample_from_range(rng, decoys, n_options - 1)
        .into_iter()
        .map(|j| layout.distractor(j))
        .collect();
    options.push(gold_token.clone());
    options.shuffle(rng);
    let gold = options.iter().position(|o| *o == gold_token).unwrap();
    Ok((options, gold))
}

/// Multiple-choice QA over the QA-profile task: the right option is the gold
/// document's alias token; wrong options are reserved decoy tokens that never
/// occur in documents or queries.
pub fn derive_qa_suite(corpus: &SyntheticCorpus, params: &SynthParams, n_items: usize) -> Result<QaSuite> {
    derive_option_suite(corpus, params, n_items, Profile::Qa).map(|(task_id, items)| QaSuite {
        task_id,
        items: items
            .into_iter()
            .map(|(q, options, gold)| QaItem { question: q, options, gold })
            .collect(),
    })
}

/// Option-scored suite over the ICL-profile task, whose stored examples pair
/// the concept with its alias.
pub fn derive_icl_suite(corpus: &SyntheticCorpus, params: &SynthParams, n_items: usize) -> Result<IclSuite> {
    derive_option_suite(corpus, params, n_items, Profile::Icl).map(|(task_id, items)| IclSuite {
        task_id,
        items: items
            .into_iter()
            .map(|(q, options, gold)| IclItem { instruction: q, options, gold })
            .collect(),
    })
}

fn derive_option_suite(
    corpus: &SyntheticCorpus,
    params: &SynthParams,
    n_items: usize,
    profile: Profile,
) -> Result<(String, Vec<(String, Vec<String>, usize)>)> {
    let layout = TokenLayout::plan(params)?;
    let t = corpus.task_with_profile(profile)?;
    let task_id = corpus.tasks[t].task_id.clone();
    let mut rng = sub_rng(params.seed, &format!("suite-{profile:?}-{t}"));
    let mut items = Vec::with_capacity(n_items);
    for _ in 0..n_items {
        let gold_concept = rng.gen_range(0..layout.n_concepts);
        let question = query_text(&layout, &mut rng, gold_concept, profile, params.query_noise_tokens);
        let (options, gold) = option_set(&layout, &mut rng, layout.alias(t, gold_concept), 4)?;
        items.push((question, options, gold));
    }
    Ok((task_id, items))
}

/// Tool-selection requests over the tool-profile task.
pub fn derive_tool_suite(corpus: &SyntheticCorpus, params: &SynthParams, n_items: usize) -> Result<ToolSuite> {
    let layout = TokenLayout::plan(params)?;
    let t = corpus.task_with_profile(Profile::Tool)?;
    let task_id = corpus.tasks[t].task_id.clone();
    let mut rng = sub_rng(params.seed, &format!("suite-tool-{t}"));
    let requests = (0..n_items)
        .map(|_| {
            let gold = rng.gen_range(0..layout.n_concepts);
            ToolRequest {
                text: query_text(&layout, &mut rng, gold, Profile::Tool, params.query_noise_tokens),
                gold_ids: vec![format!("t{t}-k{gold:03}")],
            }
        })
        .collect();
    Ok(ToolSuite { task_id, requests })
}

/// Conversational-search items over the conversation-profile task: two noise
/// turns of history followed by the concept-bearing query.
pub fn derive_conv_suite(corpus: &SyntheticCorpus, params: &SynthParams, n_items: usize) -> Result<ConvSuite> {
    let layout = TokenLayout::plan(params)?;
    let t = corpus.task_with_profile(Profile::Conv)?;
    let task_id = corpus.tasks[t].task_id.clone();
    let mut rng = sub_rng(params.seed, &format!("suite-conv-{t}"));
    let conversations = (0..n_items)
        .map(|_| {
            let gold = rng.gen_range(0..layout.n_concepts);
            let noise: Vec<String> = sample_from_range(&mut rng, layout.query_noise_pool(), 2)
                .into_iter()
                .map(|j| layout.distractor(j))
                .collect();
            Conversation {
                turns: vec![noise[0].clone(), noise[1].clone()],
                query: layout.concept(gold),
                gold_ids: vec![format!("t{t}-k{gold:03}")],
            }
        })
        .collect();
    Ok(ConvSuite { task_id, conversations })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemorySuite {
    pub documents: Vec<String>,
    pub chunk_size: usize,
    pub n_chunks: usize,
    pub recent_window: usize,
}

/// Documents engineered so the target chunk repeats an early motif: an
/// anchor/payload pair repeats three times early, a filler region longer than
/// the retrieval budget separates it from the recent context, the chunk just
/// before the query half-repeats the payload (so recency helps), the query
/// chunk near-repeats the anchor (so retrieval finds it), and the target is
/// the payload again.
pub fn synthesize_memory_suite(seed: u64, n_docs: usize, chunk_size: usize) -> MemorySuite {
    let n_chunks = 4;
    let pool: Vec<String> = (0..(chunk_size * 2 + 88)).map(|j| format!("w{j:03}")).collect();
    let mut rng = sub_rng(seed, "memory-suite");
    let mut documents = Vec::with_capacity(n_docs);
    for _ in 0..n_docs {
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.shuffle(&mut rng);
        let anchor: Vec<String> = order[..chunk_size].iter().map(|&j| pool[j].clone()).collect();
        let payload: Vec<String> = order[chunk_size..2 * chunk_size].iter().map(|&j| pool[j].clone()).collect();
        let filler_pool = &order[2 * chunk_size..];
        let filler_chunk = |rng: &mut ChaCha8Rng| -> Vec<String> {
            (0..chunk_size)
                .map(|_| pool[filler_pool[rng.gen_range(0..filler_pool.len())]].clone())
                .collect()
        };
        let mut chunks: Vec<Vec<String>> = Vec::new();
        for _ in 0..3 {
            chunks.push(anchor.clone());
            chunks.push(payload.clone());
        }
        // Filler region strictly longer than the recency budget (2 * n_chunks)
        // keeps the early motifs reachable only through retrieval.
        for _ in 0..(2 * n_chunks + 1) {
            chunks.push(filler_chunk(&mut rng));
        }
        let mut partial = payload[..chunk_size / 2].to_vec();
        partial.extend(filler_chunk(&mut rng).into_iter().take(chunk_size - chunk_size / 2));
        chunks.push(partial);
        let mut query = anchor.clone();
        let swap = filler_chunk(&mut rng);
        for k in 0..(chunk_size / 8).max(1) {
            query[chunk_size - 1 - k] = swap[k].clone();
        }
        chunks.push(query);
        chunks.push(payload.clone());
        documents.push(
            chunks
                .iter()
                .map(|c| c.join(" "))
                .collect::<Vec<_>>()
                .join(" "),
        );
    }
    MemorySuite { documents, chunk_size, n_chunks, recent_window: 1 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn small_params() -> SynthParams {
        SynthParams::new(1, 5, 40, 200)
    }

    #[test]
    fn corpus_counts_and_determinism() {
        let params = SynthParams::new(1, 5, 500, 200);
        let corpus = synthesize_corpus(&params).unwrap();
        assert_eq!(corpus.n_train_instances(), 2500);
        assert_eq!(corpus.tasks.len(), 5);
        let again = synthesize_corpus(&params).unwrap();
        assert_eq!(corpus, again);
        let a = serde_json::to_string(&corpus).unwrap();
        let b = serde_json::to_string(&again).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_exhausted_vocabulary() {
        let err = synthesize(1, 5, 500, 4).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn task_vocabularies_are_disjoint() {
        let corpus = synthesize_corpus(&small_params()).unwrap();
        let mut alias_sets: Vec<HashSet<String>> = Vec::new();
        for task in &corpus.tasks {
            let aliases: HashSet<String> = corpus.corpora[&task.task_id]
                .iter()
                .flat_map(|d| tokenize(&d.text).tokens)
                .filter(|t| t.starts_with('k'))
                .collect();
            alias_sets.push(aliases);
        }
        for i in 0..alias_sets.len() {
            for j in (i + 1)..alias_sets.len() {
                assert!(alias_sets[i].is_disjoint(&alias_sets[j]), "tasks {i} and {j} share aliases");
            }
        }
    }

    #[test]
    fn instances_respect_invariants_and_profiles() {
        let corpus = synthesize_corpus(&small_params()).unwrap();
        for (task_id, instances) in &corpus.train {
            let spec = corpus.task_spec(task_id).unwrap();
            spec.validate().unwrap();
            for inst in instances {
                inst.validate().unwrap();
            }
        }
        // reward-bearing tasks carry candidate lists, hard-label-only tasks
        // just their positive
        assert!(corpus.train["task0"].iter().all(|i| i.candidates.len() == 2));
        assert!(corpus.train["task3"].iter().all(|i| i.candidates.len() == 1));
        // profile shape: task0 has labels + rewards, task1/2 rewards only,
        // task3/4 labels only; task3 repeats twice.
        let has_pos = |t: &str| corpus.train[t].iter().all(|i| i.positive_index().is_some());
        let has_rew = |t: &str| corpus.train[t].iter().all(|i| i.log_rewards.is_some());
        assert!(has_pos("task0") && has_rew("task0"));
        assert!(!has_pos("task1") && has_rew("task1"));
        assert!(!has_pos("task2") && has_rew("task2"));
        assert!(has_pos("task3") && !has_rew("task3"));
        assert!(has_pos("task4") && !has_rew("task4"));
        assert_eq!(corpus.repetition["task3"], 2);
        assert_eq!(corpus.repetition["task0"], 1);
        assert_eq!(corpus.task_spec("task2").unwrap().reward_temperature_alpha, 0.1);
        assert!(!corpus.task_spec("task3").unwrap().use_stabilized_distillation);
    }

    #[test]
    fn rewards_rank_the_gold_candidate_highest() {
        let corpus = synthesize_corpus(&small_params()).unwrap();
        let mut gold_top = 0usize;
        let mut total = 0usize;
        for inst in &corpus.train["task0"] {
            let rewards = inst.log_rewards.as_ref().unwrap();
            let top = rewards
                .iter()
                .enumerate()
                .max_by(|(_, a), (_, b)| a.partial_cmp(b).unwrap())
                .unwrap()
                .0;
            total += 1;
            if Some(top) == inst.positive_index() {
                gold_top += 1;
            }
            assert!(rewards.iter().all(|r| r.is_finite()));
        }
        assert!(gold_top as f64 / total as f64 > 0.9, "{gold_top}/{total}");
    }

    #[test]
    fn heldout_gold_ids_resolve() {
        let corpus = synthesize_corpus(&small_params()).unwrap();
        assert_eq!(corpus.heldout.len(), 5 * 10);
        for h in &corpus.heldout {
            let docs = &corpus.corpora[&h.task_id];
            for gold in &h.gold_ids {
                assert!(docs.iter().any(|d| &d.id == gold), "missing {gold}");
            }
        }
    }

    #[test]
    fn suites_are_well_formed() {
        let params = small_params();
        let corpus = synthesize_corpus(&params).unwrap();
        let qa = derive_qa_suite(&corpus, &params, 20).unwrap();
        assert_eq!(qa.task_id, "task0");
        assert_eq!(qa.items.len(), 20);
        for item in &qa.items {
            assert_eq!(item.options.len(), 4);
            assert!(item.gold < 4);
            assert!(item.options[item.gold].starts_with("k0x"));
            for (i, opt) in item.options.iter().enumerate() {
                if i != item.gold {
                    assert!(opt.starts_with('d'));
                }
            }
        }
        let icl = derive_icl_suite(&corpus, &params, 15).unwrap();
        assert_eq!(icl.task_id, "task1");
        let tool = derive_tool_suite(&corpus, &params, 15).unwrap();
        assert_eq!(tool.task_id, "task3");
        assert!(tool.requests.iter().all(|r| !r.gold_ids.is_empty()));
        let conv = derive_conv_suite(&corpus, &params, 15).unwrap();
        assert_eq!(conv.task_id, "task4");
        assert!(conv.conversations.iter().all(|c| c.turns.len() == 2));
    }

    #[test]
    fn icl_examples_contain_the_concept() {
        let corpus = synthesize_corpus(&small_params()).unwrap();
        for doc in &corpus.corpora["task1"] {
            if doc.id.contains("-k") {
                let toks = tokenize(&doc.text);
                assert!(toks.tokens.iter().any(|t| t.starts_with('c')));
                assert!(toks.tokens.iter().any(|t| t.starts_with("k1x")));
            }
        }
    }

    #[test]
    fn memory_suite_layout() {
        let suite = synthesize_memory_suite(7, 5, 8);
        assert_eq!(suite.documents.len(), 5);
        let again = synthesize_memory_suite(7, 5, 8);
        assert_eq!(suite, again);
        for doc in &suite.documents {
            let toks = tokenize(doc);
            let n_chunks = toks.len() / suite.chunk_size;
            // 6 motif + 9 filler + partial + query + target = 18
            assert_eq!(n_chunks, 18);
            let chunks: Vec<&[String]> = toks.tokens.chunks(suite.chunk_size).collect();
            // target repeats the early payload chunk verbatim
            assert_eq!(chunks[17], chunks[1]);
            assert_eq!(chunks[1], chunks[3]);
            // query chunk shares most of the anchor
            let shared = chunks[16].iter().filter(|t| chunks[0].contains(t)).count();
            assert!(shared >= suite.chunk_size - 2);
        }
    }
}
