//! Property tests over the public API: tokenizer idempotence, chunk length
//! conservation, JSONL round-tripping, unit-norm embeddings, weight
//! normalization, bounded log-probabilities, scheduling multiset
//! preservation, and metric ranges.

use std::collections::BTreeMap;

use proptest::prelude::*;

use uniembed::batching::{schedule_epoch, BatchConfig};
use uniembed::corpus::{
    chunk, load_instances_from, save_instances, tokenize, Candidate, TokenSeq, TrainingInstance,
};
use uniembed::encoder::{dot, encode, init_params};
use uniembed::harness::{ndcg, recall_at_k};
use uniembed::oracle::{fit_oracle, token_logprob, weights_from_rewards};

fn token_strategy() -> impl Strategy<Value = String> {
    "[a-z0-9]{1,6}"
}

proptest! {
    #[test]
    fn tokenize_is_idempotent_on_joined_output(text in ".{0,80}") {
        let once = tokenize(&text);
        let twice = tokenize(&once.join());
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn tokenize_emits_only_lowercase_alnum_runs(text in ".{0,80}") {
        for tok in tokenize(&text).tokens {
            prop_assert!(!tok.is_empty());
            prop_assert!(tok.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit()));
        }
    }

    #[test]
    fn chunk_conserves_whole_chunks(len in 0usize..200, size in 1usize..20) {
        let seq = TokenSeq::new((0..len).map(|i| format!("t{i}")).collect());
        let doc = chunk(&seq, size).unwrap();
        let total: usize = doc.chunks.iter().map(|c| c.len()).sum();
        prop_assert_eq!(total, size * (len / size));
        prop_assert!(doc.chunks.iter().all(|c| c.len() == size));
    }

    #[test]
    fn instances_round_trip_through_jsonl(
        queries in proptest::collection::vec(token_strategy(), 1..5),
        with_rewards in any::<bool>(),
    ) {
        let instances: Vec<TrainingInstance> = queries
            .iter()
            .enumerate()
            .map(|(i, q)| TrainingInstance {
                task_id: format!("t{}", i % 2),
                query_text: q.clone(),
                candidates: vec![
                    Candidate { text: format!("{q} key"), is_hard_label_positive: true },
                    Candidate { text: "other".into(), is_hard_label_positive: false },
                ],
                log_rewards: with_rewards.then(|| vec![-0.5, -1.0 - i as f64]),
            })
            .collect();
        let mut buf = Vec::new();
        save_instances(&mut buf, &instances).unwrap();
        let loaded = load_instances_from(buf.as_slice(), "").unwrap();
        prop_assert_eq!(loaded, instances);
    }

    #[test]
    fn embeddings_are_unit_norm(
        seed in 0u64..64,
        instr in proptest::collection::vec(token_strategy(), 0..4),
        text in proptest::collection::vec(token_strategy(), 1..8),
    ) {
        let params = init_params(seed, 128, 8, 6);
        let e = encode(&instr.join(" "), &text.join(" "), &params);
        let norm = dot(&e.vector, &e.vector).sqrt();
        prop_assert!((norm - 1.0).abs() < 1e-6, "norm {}", norm);
    }

    #[test]
    fn reward_weights_normalize_and_stay_positive(
        rewards in proptest::collection::vec(-20.0f64..2.0, 1..8),
        alpha in 0.01f64..5.0,
    ) {
        let ws = weights_from_rewards(&rewards, alpha).unwrap();
        let sum: f64 = ws.weights.iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
        prop_assert!(ws.weights.iter().all(|w| *w > 0.0));
    }

    #[test]
    fn token_logprob_is_finite_and_nonpositive(
        corpus_texts in proptest::collection::vec(proptest::collection::vec(token_strategy(), 0..6), 0..4),
        context in proptest::collection::vec(token_strategy(), 0..6),
        token in token_strategy(),
        lambda in 0.0f64..=1.0,
    ) {
        let corpus: Vec<TokenSeq> = corpus_texts
            .iter()
            .map(|t| TokenSeq::new(t.clone()))
            .collect();
        let model = fit_oracle(&corpus, lambda);
        let lp = token_logprob(&model, &token, &TokenSeq::new(context), None);
        prop_assert!(lp.is_finite());
        prop_assert!(lp <= 0.0);
    }

    #[test]
    fn scheduling_preserves_the_repetition_multiset(
        sizes in proptest::collection::vec(1usize..12, 1..4),
        b in 1usize..4,
        k in 1usize..3,
        seed in 0u64..32,
        rep in 1usize..3,
    ) {
        let datasets: BTreeMap<String, Vec<TrainingInstance>> = sizes
            .iter()
            .enumerate()
            .map(|(t, &n)| {
                let task = format!("t{t}");
                let instances = (0..n)
                    .map(|i| TrainingInstance {
                        task_id: task.clone(),
                        query_text: format!("q{i}"),
                        candidates: vec![Candidate { text: "k".into(), is_hard_label_positive: true }],
                        log_rewards: None,
                    })
                    .collect();
                (task, instances)
            })
            .collect();
        let mut repetition = BTreeMap::new();
        repetition.insert("t0".to_string(), rep);
        let cfg = BatchConfig { batch_size: b, shards: k, candidates_per_instance: 1, seed, repetition };
        let batches = schedule_epoch(&datasets, &cfg).unwrap();
        prop_assert!(batches.iter().all(|batch| batch.is_single_task()));
        let scheduled: usize = batches.iter().map(|batch| batch.instances.len()).sum();
        let expected: usize = sizes.iter().enumerate().map(|(t, &n)| if t == 0 { n * rep } else { n }).sum();
        prop_assert_eq!(scheduled, expected);
        prop_assert!(batches.iter().all(|batch| batch.instances.len() <= b * k));
    }

    #[test]
    fn ranking_metrics_stay_in_range(
        n_ranked in 1usize..8,
        n_gold in 1usize..5,
        k in 1usize..8,
    ) {
        let ranked: Vec<String> = (0..n_ranked).map(|i| format!("r{i}")).collect();
        let gold: Vec<String> = (0..n_gold).map(|i| format!("r{}", i * 2)).collect();
        let relevant: Vec<(String, f64)> = gold.iter().map(|g| (g.clone(), 1.0)).collect();
        let v = ndcg(&ranked, &relevant, k);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&v), "ndcg {}", v);
        let r = recall_at_k(&ranked, &gold, k).unwrap();
        prop_assert!((0.0..=1.0).contains(&r));
    }
}
