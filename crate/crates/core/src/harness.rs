//! Evaluation harnesses for the five retrieval-augmentation scenarios, plus
//! the ranking metrics they report.
//!
//! Every scenario follows the same pattern: encode the query with the task's
//! query instruction, retrieve from a pre-built index, assemble a plain
//! newline-joined prompt, and either score answer options with the oracle
//! (accuracy / perplexity scenarios) or score the ranking directly (NDCG
//! scenarios). Setting the retrieval depth to zero disables augmentation and
//! yields the no-retrieval baseline by construction: the oracle sees the bare
//! query.

use serde::{Deserialize, Serialize};

use crate::corpus::{chunk, tokenize, TokenSeq};
use crate::encoder::{encode, Embedding, EncoderParams, TaskSpec};
use crate::error::{Error, Result};
use crate::index::{build, search, VectorIndex};
use crate::oracle::{perplexity, reward, OracleModel};
use crate::par;

/// Scenario result: the aggregate metric value plus per-item values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenario: String,
    pub metric: String,
    pub value: f64,
    pub n: usize,
    pub per_item: Vec<f64>,
}

impl EvalReport {
    fn from_items(scenario: &str, metric: &str, per_item: Vec<f64>) -> Self {
        let n = per_item.len();
        let value = if n == 0 { 0.0 } else { per_item.iter().sum::<f64>() / n as f64 };
        EvalReport { scenario: scenario.to_string(), metric: metric.to_string(), value, n, per_item }
    }
}

/// NDCG@k with explicit gains: `DCG_k = sum gain_i / log2(i + 1)` over ranked
/// positions i = 1..k, normalized by the ideal DCG. Defined as 0 when the
/// ideal is 0.
pub fn ndcg(ranked_ids: &[String], relevant: &[(String, f64)], k: usize) -> f64 {
    assert!(k >= 1, "k must be >= 1");
    let gain_of = |id: &str| -> f64 {
        relevant
            .iter()
            .find(|(rid, _)| rid == id)
            .map(|(_, g)| *g)
            .unwrap_or(0.0)
    };
    let dcg: f64 = ranked_ids
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, id)| gain_of(id) / ((i + 2) as f64).log2())
        .sum();
    let mut ideal_gains: Vec<f64> = relevant.iter().map(|(_, g)| *g).collect();
    ideal_gains.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let idcg: f64 = ideal_gains
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, g)| g / ((i + 2) as f64).log2())
        .sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

/// Exact match under the token-containment rule: 1 iff any gold answer's
/// token sequence appears as a contiguous run inside the prediction's tokens.
pub fn exact_match(prediction: &str, gold_answers: &[String]) -> Result<f64> {
    if gold_answers.is_empty() {
        return Err(Error::invalid("gold answer list must be nonempty"));
    }
    let pred = tokenize(prediction);
    for gold in gold_answers {
        let g = tokenize(gold);
        if g.is_empty() {
            return Ok(1.0);
        }
        if pred.tokens.windows(g.len()).any(|w| w == g.tokens.as_slice()) {
            return Ok(1.0);
        }
    }
    Ok(0.0)
}

/// `|gold ∩ top-k| / |gold|`.
pub fn recall_at_k(ranked: &[String], gold: &[String], k: usize) -> Result<f64> {
    if gold.is_empty() {
        return Err(Error::invalid("gold id list must be nonempty"));
    }
    let top: Vec<&String> = ranked.iter().take(k).collect();
    let hits = gold.iter().filter(|g| top.contains(g)).count();
    Ok(hits as f64 / gold.len() as f64)
}

/// A multiple-choice question answered by scoring each option's oracle reward
/// given the assembled context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaItem {
    pub question: String,
    pub options: Vec<String>,
    pub gold: usize,
}

/// An in-context-learning test item: the instruction retrieves examples, then
/// options are scored exactly as in the knowledge scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IclItem {
    pub instruction: String,
    pub options: Vec<String>,
    pub gold: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolRequest {
    pub text: String,
    pub gold_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conversation {
    pub turns: Vec<String>,
    pub query: String,
    pub gold_ids: Vec<String>,
}

fn retrieve_payloads(
    index: &VectorIndex,
    params: &EncoderParams,
    task: &TaskSpec,
    query: &str,
    k: usize,
) -> Result<Vec<String>> {
    if k == 0 || index.is_empty() {
        return Ok(Vec::new());
    }
    let q = encode(&task.query_instruction, query, params);
    let hits = search(index, &q, k)?;
    Ok(hits
        .iter()
        .map(|(id, _)| index.get(id).expect("hit id must exist").payload.clone())
        .collect())
}

/// Picks the option with the highest oracle reward given the context; ties go
/// to the lower index.
fn best_option(oracle: &OracleModel, context: &TokenSeq, options: &[String]) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, opt) in options.iter().enumerate() {
        let score = reward(oracle, context, &tokenize(opt));
        if score > best_score {
            best_score = score;
            best = i;
        }
    }
    best
}

fn option_accuracy_eval(
    scenario: &str,
    queries: &[(String, Vec<String>, usize)],
    index: &VectorIndex,
    params: &EncoderParams,
    task: &TaskSpec,
    oracle: &OracleModel,
    k: usize,
) -> Result<EvalReport> {
    for (_, options, gold) in queries {
        if options.is_empty() {
            return Err(Error::invalid("option list must be nonempty"));
        }
        if *gold >= options.len() {
            return Err(Error::invalid("gold option index out of range"));
        }
    }
    let per_item: Vec<Result<f64>> = par::map_slice(queries, |(query, options, gold)| {
        let passages = retrieve_payloads(index, params, task, query, k)?;
        let mut prompt = passages.join("\n");
        if !prompt.is_empty() {
            prompt.push('\n');
        }
        prompt.push_str(query);
        let picked = best_option(oracle, &tokenize(&prompt), options);
        Ok(if picked == *gold { 1.0 } else { 0.0 })
    });
    let per_item = per_item.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok(EvalReport::from_items(scenario, "accuracy", per_item))
}

/// Knowledge scenario: retrieve top-k passages for each question, prepend
/// them to the question, and score the answer options with the oracle.
/// `k = 0` is the no-retrieval baseline.
pub fn eval_knowledge(
    items: &[QaItem],
    corpus_index: &VectorIndex,
    params: &EncoderParams,
    task: &TaskSpec,
    oracle: &OracleModel,
    k: usize,
) -> Result<EvalReport> {
    let queries: Vec<(String, Vec<String>, usize)> = items
        .iter()
        .map(|i| (i.question.clone(), i.options.clone(), i.gold))
        .collect();
    option_accuracy_eval("knowledge", &queries, corpus_index, params, task, oracle, k)
}

/// In-context-learning scenario: retrieve top-k demonstration examples by the
/// instruction, prepend them, and score the options.
pub fn eval_icl(
    items: &[IclItem],
    example_index: &VectorIndex,
    params: &EncoderParams,
    task: &TaskSpec,
    oracle: &OracleModel,
    k: usize,
) -> Result<EvalReport> {
    let queries: Vec<(String, Vec<String>, usize)> = items
        .iter()
        .map(|i| (i.instruction.clone(), i.options.clone(), i.gold))
        .collect();
    option_accuracy_eval("icl", &queries, example_index, params, task, oracle, k)
}

/// Tool selection: mean NDCG@k of the gold tools over the retrieved ranking.
pub fn eval_tool(
    requests: &[ToolRequest],
    tool_index: &VectorIndex,
    params: &EncoderParams,
    task: &TaskSpec,
    k: usize,
) -> Result<EvalReport> {
    ranking_eval("tool", requests.iter().map(|r| (r.text.clone(), r.gold_ids.clone())), tool_index, params, task, k)
}

/// Conversational search: the query is the whole conversation concatenated
/// with the final query; mean NDCG@k against the gold passages.
pub fn eval_convsearch(
    conversations: &[Conversation],
    passage_index: &VectorIndex,
    params: &EncoderParams,
    task: &TaskSpec,
    k: usize,
) -> Result<EvalReport> {
    let queries = conversations.iter().map(|c| {
        let mut text = c.turns.join("\n");
        if !text.is_empty() {
            text.push('\n');
        }
        text.push_str(&c.query);
        (text, c.gold_ids.clone())
    });
    ranking_eval("convsearch", queries, passage_index, params, task, k)
}

fn ranking_eval(
    scenario: &str,
    queries: impl Iterator<Item = (String, Vec<String>)>,
    index: &VectorIndex,
    params: &EncoderParams,
    task: &TaskSpec,
    k: usize,
) -> Result<EvalReport> {
    let queries: Vec<(String, Vec<String>)> = queries.collect();
    for (_, gold) in &queries {
        if gold.is_empty() {
            return Err(Error::invalid("request without any gold id"));
        }
    }
    let metric = format!("ndcg@{k}");
    let per_item: Vec<Result<f64>> = par::map_slice(&queries, |(text, gold)| {
        let q = encode(&task.query_instruction, text, params);
        let hits = search(index, &q, k)?;
        let ranked: Vec<String> = hits.into_iter().map(|(id, _)| id).collect();
        let relevant: Vec<(String, f64)> = gold.iter().map(|g| (g.clone(), 1.0)).collect();
        Ok(ndcg(&ranked, &relevant, k))
    });
    let per_item = per_item.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok(EvalReport::from_items(scenario, &metric, per_item))
}

/// How the memory scenario augments the recent context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemoryAugmentation {
    None,
    Recency,
    Retrieval,
}

/// Order in which retrieved chunks are back-filled in front of the recent
/// context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackfillOrder {
    Chronological,
    Score,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemoryCfg {
    /// Chunks retrieved per document (the continuation of each retrieved
    /// chunk is appended as well, so the budget is twice this).
    pub n_chunks: usize,
    pub chunk_size: usize,
    /// Recent chunks always kept in context; the last of them is the query.
    pub recent_window: usize,
    pub augmentation: MemoryAugmentation,
    pub backfill: BackfillOrder,
}

impl Default for MemoryCfg {
    fn default() -> Self {
        MemoryCfg {
            n_chunks: 8,
            chunk_size: 128,
            recent_window: 1,
            augmentation: MemoryAugmentation::Retrieval,
            backfill: BackfillOrder::Chronological,
        }
    }
}

/// The chunk span immediately preceding the recent window, sized to the
/// retrieval budget: all of history when it is shorter than the budget, empty
/// when the budget is 0.
pub fn recency_baseline(context_chunks: &[TokenSeq], recent_window: usize, budget_chunks: usize) -> Vec<TokenSeq> {
    let history_len = context_chunks.len().saturating_sub(recent_window);
    let start = history_len.saturating_sub(budget_chunks);
    context_chunks[start..history_len].to_vec()
}

/// Union of retrieved chunk indices with their immediate successors,
/// deduplicated and in chronological order. Successors falling outside the
/// history (into the recent window or beyond) are skipped.
pub fn memory_context_indices(retrieved: &[usize], history_len: usize) -> Vec<usize> {
    let mut indices = memory_context_indices_by_score(retrieved, history_len);
    indices.sort_unstable();
    indices
}

/// Same chunk set as [`memory_context_indices`] but kept in retrieval-score
/// order, each retrieved chunk immediately followed by its successor.
pub fn memory_context_indices_by_score(retrieved: &[usize], history_len: usize) -> Vec<usize> {
    let mut seen = std::collections::HashSet::new();
    let mut indices = Vec::with_capacity(retrieved.len() * 2);
    for &i in retrieved {
        if seen.insert(i) {
            indices.push(i);
        }
        if i + 1 < history_len && seen.insert(i + 1) {
            indices.push(i + 1);
        }
    }
    indices
}

/// Long-context memory scenario: per document, split into chunks, treat the
/// last chunk as the generation target, query with the latest context chunk,
/// back-fill the context per the configured augmentation, and measure target
/// perplexity under the oracle. Documents too short for the window are
/// skipped; the skip count is returned alongside the report.
pub fn eval_memory(
    documents: &[String],
    params: &EncoderParams,
    task: &TaskSpec,
    oracle: &OracleModel,
    cfg: &MemoryCfg,
) -> Result<(EvalReport, usize)> {
    if cfg.chunk_size == 0 {
        return Err(Error::invalid("chunk_size must be >= 1"));
    }
    if cfg.recent_window == 0 {
        return Err(Error::invalid("recent_window must be >= 1"));
    }
    let min_chunks = cfg.recent_window + 2;
    let chunked: Vec<Vec<TokenSeq>> = documents
        .iter()
        .map(|d| chunk(&tokenize(d), cfg.chunk_size).map(|c| c.chunks))
        .collect::<Result<_>>()?;
    let usable: Vec<&Vec<TokenSeq>> = chunked.iter().filter(|c| c.len() >= min_chunks).collect();
    let skipped = chunked.len() - usable.len();

    let per_item: Vec<Result<f64>> = par::map_slice(&usable, |chunks| {
        let target = chunks.last().unwrap();
        let context = &chunks[..chunks.len() - 1];
        let history_len = context.len() - cfg.recent_window;
        let query_chunk = context.last().unwrap();

        let augment: Vec<TokenSeq> = match cfg.augmentation {
            MemoryAugmentation::None => Vec::new(),
            MemoryAugmentation::Recency => {
                recency_baseline(context, cfg.recent_window, 2 * cfg.n_chunks)
            }
            MemoryAugmentation::Retrieval => {
                if cfg.n_chunks == 0 || history_len == 0 {
                    Vec::new()
                } else {
                    let items: Vec<(String, Embedding, String)> = (0..history_len)
                        .map(|i| {
                            let text = context[i].join();
                            (format!("{i:06}"), encode(&task.key_instruction, &text, params), String::new())
                        })
                        .collect();
                    let index = build(items)?;
                    let q = encode(&task.query_instruction, &query_chunk.join(), params);
                    let hits = search(&index, &q, cfg.n_chunks)?;
                    let retrieved: Vec<usize> = hits
                        .iter()
                        .map(|(id, _)| id.parse::<usize>().expect("chunk id"))
                        .collect();
                    let ordered = match cfg.backfill {
                        BackfillOrder::Chronological => {
                            memory_context_indices(&retrieved, history_len)
                        }
                        BackfillOrder::Score => {
                            memory_context_indices_by_score(&retrieved, history_len)
                        }
                    };
                    ordered.into_iter().map(|i| context[i].clone()).collect()
                }
            }
        };
        let mut context_tokens = TokenSeq::default();
        for c in augment.iter().chain(&context[history_len..]) {
            context_tokens.tokens.extend(c.tokens.iter().cloned());
        }
        perplexity(oracle, target, &context_tokens)
    });
    let per_item = per_item.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok((EvalReport::from_items("memory", "perplexity", per_item), skipped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::init_params;
    use crate::oracle::fit_oracle;

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn binary(v: &[&str]) -> Vec<(String, f64)> {
        v.iter().map(|s| (s.to_string(), 1.0)).collect()
    }

    #[test]
    fn ndcg_basics() {
        assert_eq!(ndcg(&ids(&["a", "b", "c"]), &binary(&["a", "b", "c"]), 3), 1.0);
        assert_eq!(ndcg(&ids(&["a", "b"]), &[], 2), 0.0);
        let v = ndcg(&ids(&["x", "gold", "y", "z", "w"]), &binary(&["gold"]), 5);
        assert!((v - 0.6309297535714575).abs() < 1e-12);
    }

    #[test]
    fn ndcg_ignores_items_below_k() {
        let relevant = binary(&["a", "b"]);
        let x = ndcg(&ids(&["a", "c", "b", "d"]), &relevant, 2);
        let y = ndcg(&ids(&["a", "c", "d", "b"]), &relevant, 2);
        assert_eq!(x, y);
    }

    #[test]
    fn ndcg_matches_permutation_oracle() {
        // Ideal DCG found by exhaustively permuting the ranked list.
        use itertools::Itertools;
        let mut rng_state = 0x9E3779B97F4A7C15u64;
        let mut next = || {
            rng_state ^= rng_state << 13;
            rng_state ^= rng_state >> 7;
            rng_state ^= rng_state << 17;
            (rng_state % 4) as f64
        };
        for len in 1..=6usize {
            let ranked: Vec<String> = (0..len).map(|i| format!("i{i}")).collect();
            for _ in 0..5 {
                let relevant: Vec<(String, f64)> =
                    ranked.iter().map(|id| (id.clone(), next())).collect();
                for k in 1..=len {
                    let dcg_of = |order: &[&String]| -> f64 {
                        order
                            .iter()
                            .take(k)
                            .enumerate()
                            .map(|(i, id)| {
                                relevant
                                    .iter()
                                    .find(|(rid, _)| &rid == id)
                                    .map(|(_, g)| *g)
                                    .unwrap_or(0.0)
                                    / ((i + 2) as f64).log2()
                            })
                            .sum()
                    };
                    let best = ranked
                        .iter()
                        .permutations(len)
                        .map(|p| dcg_of(&p))
                        .fold(0.0f64, f64::max);
                    let expected = if best == 0.0 { 0.0 } else { dcg_of(&ranked.iter().collect::<Vec<_>>()) / best };
                    let got = ndcg(&ranked, &relevant, k);
                    assert!((got - expected).abs() < 1e-12, "len {len} k {k}");
                }
            }
        }
    }

    #[test]
    fn exact_match_containment() {
        let gold = vec!["New York".to_string()];
        assert_eq!(exact_match("new york", &gold).unwrap(), 1.0);
        assert_eq!(exact_match("the answer is New York, I think", &gold).unwrap(), 1.0);
        assert_eq!(exact_match("york new", &gold).unwrap(), 0.0);
        assert_eq!(exact_match("totally different", &gold).unwrap(), 0.0);
        assert!(exact_match("anything", &[]).is_err());
    }

    #[test]
    fn recall_at_k_counts_gold_hits() {
        let ranked = ids(&["a", "b", "c", "d"]);
        assert_eq!(recall_at_k(&ranked, &ids(&["b", "z"]), 2).unwrap(), 0.5);
        assert_eq!(recall_at_k(&ranked, &ids(&["a"]), 1).unwrap(), 1.0);
        assert!(recall_at_k(&ranked, &[], 3).is_err());
    }

    fn task() -> TaskSpec {
        TaskSpec {
            task_id: "mem".into(),
            query_instruction: "find earlier chunks for mem".into(),
            key_instruction: "store this chunk for mem".into(),
            use_stabilized_distillation: true,
            reward_temperature_alpha: 0.1,
        }
    }

    #[test]
    fn recency_baseline_spans() {
        let chunks: Vec<TokenSeq> = (0..10).map(|i| tokenize(&format!("t{i}"))).collect();
        // window 2, budget 3: history is 0..8, span is chunks 5..8
        let span = recency_baseline(&chunks, 2, 3);
        assert_eq!(span.len(), 3);
        assert_eq!(span[0].tokens, vec!["t5"]);
        assert_eq!(span[2].tokens, vec!["t7"]);
        // budget 0 -> empty
        assert!(recency_baseline(&chunks, 2, 0).is_empty());
        // budget larger than history -> all history
        assert_eq!(recency_baseline(&chunks, 2, 99).len(), 8);
        assert_eq!(recency_baseline(&chunks, 2, 99), recency_baseline(&chunks, 2, 99));
    }

    #[test]
    fn backfill_orders_cover_the_same_chunks() {
        let retrieved = [5usize, 1, 3];
        let chrono = memory_context_indices(&retrieved, 8);
        let scored = memory_context_indices_by_score(&retrieved, 8);
        assert_eq!(chrono, vec![1, 2, 3, 4, 5, 6]);
        assert_eq!(scored, vec![5, 6, 1, 2, 3, 4]);
        let mut sorted = scored.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, chrono);
    }

    #[test]
    fn memory_indices_skip_out_of_range_successors() {
        // Retrieving the final historical chunk (index 7 of history length 8)
        // must not pull in the window chunk.
        assert_eq!(memory_context_indices(&[7], 8), vec![7]);
        assert_eq!(memory_context_indices(&[2, 0], 8), vec![0, 1, 2, 3]);
        // duplicate successors collapse
        assert_eq!(memory_context_indices(&[3, 4], 8), vec![3, 4, 5]);
    }

    fn memory_doc() -> String {
        // Chunks of 4 tokens: anchor, payload, six fillers, a near-anchor
        // query chunk, then the payload again as the target. Retrieving the
        // anchor pulls in its successor (the payload), which is what makes
        // augmentation win.
        let anchor = "a1 a2 a3 a4";
        let payload = "b1 b2 b3 b4";
        let filler: Vec<String> = (0..6).map(|i| format!("f{i}a f{i}b f{i}c f{i}d")).collect();
        let query_chunk = "a1 a2 a3 q0";
        format!("{anchor} {payload} {} {query_chunk} {payload}", filler.join(" "))
    }

    #[test]
    fn memory_retrieval_beats_none_on_repeating_doc() {
        let params = init_params(3, 512, 16, 8);
        let doc = memory_doc();
        let oracle = fit_oracle(&[tokenize(&doc)], 0.9);
        let cfg = MemoryCfg { n_chunks: 2, chunk_size: 4, recent_window: 1, ..MemoryCfg::default() };
        let (aug, skipped) =
            eval_memory(std::slice::from_ref(&doc), &params, &task(), &oracle, &cfg).unwrap();
        assert_eq!(skipped, 0);
        let none_cfg = MemoryCfg { augmentation: MemoryAugmentation::None, ..cfg };
        let (none, _) = eval_memory(&[doc], &params, &task(), &oracle, &none_cfg).unwrap();
        assert!(aug.value < none.value, "aug {} vs none {}", aug.value, none.value);
    }

    #[test]
    fn memory_uniform_oracle_ppl_is_vocab_size() {
        let params = init_params(3, 512, 16, 8);
        let doc = memory_doc();
        let oracle = fit_oracle(&[], 0.0);
        let v = oracle.vocab_size() as f64;
        for augmentation in [MemoryAugmentation::None, MemoryAugmentation::Recency, MemoryAugmentation::Retrieval] {
            let cfg = MemoryCfg { n_chunks: 2, chunk_size: 4, recent_window: 1, augmentation, ..MemoryCfg::default() };
            let (report, _) =
                eval_memory(std::slice::from_ref(&doc), &params, &task(), &oracle, &cfg).unwrap();
            assert!((report.value - v).abs() < 1e-9);
        }
    }

    #[test]
    fn memory_skips_short_documents() {
        let params = init_params(3, 512, 16, 8);
        let oracle = fit_oracle(&[], 0.5);
        let cfg = MemoryCfg { n_chunks: 1, chunk_size: 4, recent_window: 1, augmentation: MemoryAugmentation::None, ..MemoryCfg::default() };
        let docs = vec!["a b c d e f g h".to_string(), memory_doc()];
        let (report, skipped) = eval_memory(&docs, &params, &task(), &oracle, &cfg).unwrap();
        assert_eq!(skipped, 1);
        assert_eq!(report.n, 1);
    }

    #[test]
    fn k_zero_is_the_none_baseline() {
        let params = init_params(9, 512, 16, 8);
        let oracle = fit_oracle(&[tokenize("alpha beta gamma")], 0.9);
        let corpus = build(vec![
            ("p0".into(), encode("store", "alpha beta", &params), "alpha beta".into()),
            ("p1".into(), encode("store", "gamma delta", &params), "gamma delta".into()),
        ])
        .unwrap();
        let items = vec![QaItem {
            question: "which greek letter".into(),
            options: vec!["alpha".into(), "omega".into()],
            gold: 0,
        }];
        let with_zero = eval_knowledge(&items, &corpus, &params, &task(), &oracle, 0).unwrap();
        // Independent no-retrieval scorer: options against the bare question.
        let ctx = tokenize("which greek letter");
        let s_alpha = reward(&oracle, &ctx, &tokenize("alpha"));
        let s_omega = reward(&oracle, &ctx, &tokenize("omega"));
        let expected = if s_alpha > s_omega { 1.0 } else { 0.0 };
        assert_eq!(with_zero.per_item, vec![expected]);
    }

    #[test]
    fn knowledge_retrieval_beats_none_with_answer_passage() {
        // Corpus contains the verbatim answer passage; copy-heavy oracle.
        let params = init_params(17, 1024, 16, 8);
        let passages = [
            ("p0".to_string(), "the capital of freedonia is zapow".to_string()),
            ("p1".to_string(), "rivers of arcadia flow north".to_string()),
            ("p2".to_string(), "mount qux is very tall".to_string()),
        ];
        let oracle = fit_oracle(&passages.iter().map(|(_, t)| tokenize(t)).collect::<Vec<_>>(), 0.95);
        let t = task();
        let index = build(
            passages
                .iter()
                .map(|(id, text)| (id.clone(), encode(&t.key_instruction, text, &params), text.clone()))
                .collect(),
        )
        .unwrap();
        let items = vec![QaItem {
            question: "what is the capital of freedonia".into(),
            options: vec!["zapow".into(), "blorn".into(), "krent".into()],
            gold: 0,
        }];
        let augmented = eval_knowledge(&items, &index, &params, &t, &oracle, 3).unwrap();
        let none = eval_knowledge(&items, &index, &params, &t, &oracle, 0).unwrap();
        assert!(augmented.value > none.value || (augmented.value == 1.0 && none.value == 1.0));
        assert_eq!(augmented.value, 1.0);
    }

    #[test]
    fn single_question_single_option_accuracy_is_binary() {
        let params = init_params(1, 512, 16, 8);
        let oracle = fit_oracle(&[], 0.5);
        let index = build(vec![]).unwrap();
        let items = vec![QaItem { question: "q".into(), options: vec!["only".into()], gold: 0 }];
        let report = eval_knowledge(&items, &index, &params, &task(), &oracle, 0).unwrap();
        assert_eq!(report.value, 1.0);
        assert!(eval_knowledge(
            &[QaItem { question: "q".into(), options: vec![], gold: 0 }],
            &index,
            &params,
            &task(),
            &oracle,
            0
        )
        .is_err());
    }

    #[test]
    fn icl_near_duplicate_pool_helps() {
        let params = init_params(23, 1024, 16, 8);
        let t = task();
        let pool = [
            ("e0".to_string(), "classify fruit apple answer sweetfruit".to_string()),
            ("e1".to_string(), "classify metal iron answer hardmetal".to_string()),
            ("e2".to_string(), "classify bird crow answer blackbird".to_string()),
        ];
        let oracle = fit_oracle(&pool.iter().map(|(_, t)| tokenize(t)).collect::<Vec<_>>(), 0.95);
        let index = build(
            pool.iter()
                .map(|(id, text)| (id.clone(), encode(&t.key_instruction, text, &params), text.clone()))
                .collect(),
        )
        .unwrap();
        let items = vec![IclItem {
            instruction: "classify fruit apple answer".into(),
            options: vec!["sweetfruit".into(), "quartz".into()],
            gold: 0,
        }];
        let augmented = eval_icl(&items, &index, &params, &t, &oracle, 2).unwrap();
        let none = eval_icl(&items, &index, &params, &t, &oracle, 0).unwrap();
        assert!(augmented.value >= none.value);
        assert_eq!(augmented.value, 1.0);
    }

    #[test]
    fn icl_retrieves_exactly_top_k() {
        let params = init_params(29, 1024, 16, 8);
        let t = task();
        let pool: Vec<(String, String)> = (0..6)
            .map(|i| (format!("e{i}"), format!("example number {i} about topic{i}")))
            .collect();
        let index = build(
            pool.iter()
                .map(|(id, text)| (id.clone(), encode(&t.key_instruction, text, &params), text.clone()))
                .collect(),
        )
        .unwrap();
        let query = "example about topic3";
        let q = encode(&t.query_instruction, query, &params);
        let expected = search(&index, &q, 3).unwrap();
        let got = retrieve_payloads(&index, &params, &t, query, 3).unwrap();
        let expected_payloads: Vec<String> = expected
            .iter()
            .map(|(id, _)| index.get(id).unwrap().payload.clone())
            .collect();
        assert_eq!(got, expected_payloads);
    }

    #[test]
    fn tool_ndcg_cases() {
        let params = init_params(31, 2048, 32, 32);
        let t = task();
        let tools: Vec<(String, String)> = (0..6)
            .map(|i| {
                (
                    format!("tool{i}"),
                    format!("widget{i} lever{i} crank{i} sprocket{i} flange{i} rotor{i}"),
                )
            })
            .collect();
        let index = build(
            tools
                .iter()
                .map(|(id, text)| (id.clone(), encode(&t.key_instruction, text, &params), text.clone()))
                .collect(),
        )
        .unwrap();
        // Query that lexically matches tool3: should rank it first.
        let reqs = vec![ToolRequest {
            text: "widget3 lever3 crank3 sprocket3 flange3 rotor3".into(),
            gold_ids: ids(&["tool3"]),
        }];
        let report = eval_tool(&reqs, &index, &params, &t, 5).unwrap();
        assert_eq!(report.metric, "ndcg@5");
        assert_eq!(report.value, 1.0);

        // Gold absent from the index: 0 for that request.
        let reqs = vec![ToolRequest { text: "anything".into(), gold_ids: ids(&["missing"]) }];
        let report = eval_tool(&reqs, &index, &params, &t, 5).unwrap();
        assert_eq!(report.value, 0.0);

        let reqs = vec![ToolRequest { text: "no gold".into(), gold_ids: vec![] }];
        assert!(eval_tool(&reqs, &index, &params, &t, 5).is_err());
    }

    #[test]
    fn convsearch_concatenates_history() {
        let params = init_params(37, 1024, 16, 8);
        let t = task();
        let passages: Vec<(String, String)> = vec![
            ("p0".into(), "booking trains to paris".into()),
            ("p1".into(), "growing tomatoes at home".into()),
        ];
        let index = build(
            passages
                .iter()
                .map(|(id, text)| (id.clone(), encode(&t.key_instruction, text, &params), text.clone()))
                .collect(),
        )
        .unwrap();
        let convs = vec![Conversation {
            turns: vec!["i want to travel".into(), "by train".into()],
            query: "booking trains to paris".into(),
            gold_ids: ids(&["p0"]),
        }];
        let report = eval_convsearch(&convs, &index, &params, &t, 2).unwrap();
        assert_eq!(report.metric, "ndcg@2");
        assert_eq!(report.value, 1.0);
    }
}
