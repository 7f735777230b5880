use std::collections::BTreeMap;

use proptest::prelude::*;

use feedloop_core::analytics::{tie_adjust, win_rate, RankingRecord};
use feedloop_core::selection::{cosine_similarity, postprocess_summary, select};
use feedloop_core::validate::{validate_record, ValidationContext};
use feedloop_core::word_removal::{
    benchmark_size, build_sentence, build_target, generate_benchmark, parse_sentence, Lexicon,
};
use feedloop_core::{
    DecodingParams, EmbeddingVector, FeedbackRecord, GeneratedOutput, Producer, RefinementBatch,
    Strategy as Selection, TaskInput, Timestamp,
};

/// Competition ranks (1 + number strictly better) from arbitrary scores.
fn competition_ranks(scores: &[u8]) -> Vec<u32> {
    scores
        .iter()
        .map(|s| 1 + scores.iter().filter(|o| *o < s).count() as u32)
        .collect()
}

/// Fractional ranking computed from positions: each entry gets the mean of
/// the 1-based positions its tie group would occupy in sorted order.
fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .map(|v| {
            let less = values.iter().filter(|o| *o < v).count() as f64;
            let equal = values.iter().filter(|o| *o == v).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

fn arb_ranking() -> impl Strategy<Value = Vec<u32>> {
    (1usize..=8).prop_flat_map(|m| prop::collection::vec(0u8..m as u8, m)).prop_map(|s| competition_ranks(&s))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn best_of_n_matches_linear_scan(scores in prop::collection::vec(-4i8..=4, 1..30)) {
        let scores: Vec<f64> = scores.iter().map(|&s| f64::from(s) / 4.0).collect();
        let mut best = 0;
        for (i, s) in scores.iter().enumerate() {
            if *s > scores[best] {
                best = i;
            }
        }
        prop_assert_eq!(select(Selection::BestOfN, scores.len(), Some(&scores), None).unwrap(), best);
    }

    #[test]
    fn postprocess_is_idempotent(text in "[a-z .!?\n,-]{0,60}") {
        let once = postprocess_summary(&text);
        let twice = postprocess_summary(&once.text);
        prop_assert_eq!(once.text, twice.text);
    }
}

proptest! {
    #[test]
    fn tie_adjust_matches_fractional_ranking(raw in arb_ranking()) {
        let adjusted = tie_adjust(&raw).unwrap();
        let as_f: Vec<f64> = raw.iter().map(|&r| r as f64).collect();
        let oracle = fractional_ranks(&as_f);
        prop_assert_eq!(&adjusted, &oracle);
        let reranked = fractional_ranks(&adjusted);
        prop_assert_eq!(&reranked, &adjusted);
        let m = raw.len() as f64;
        prop_assert_eq!(adjusted.iter().sum::<f64>(), m * (m + 1.0) / 2.0);
    }

    #[test]
    fn cosine_is_bounded_and_symmetric(
        a in prop::collection::vec(-100.0f64..100.0, 4),
        b in prop::collection::vec(-100.0f64..100.0, 4),
    ) {
        let (ea, eb) = (EmbeddingVector::new(a), EmbeddingVector::new(b));
        prop_assume!(ea.norm() > 1e-6 && eb.norm() > 1e-6);
        let c = cosine_similarity(&ea, &eb).unwrap();
        prop_assert!((-1.0..=1.0).contains(&c));
        prop_assert!((c - cosine_similarity(&eb, &ea).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn random_selection_stays_in_range(n in 1usize..50, seed in any::<u64>()) {
        let i = select(Selection::RandomOfN, n, None, Some(seed)).unwrap();
        prop_assert!(i < n);
        prop_assert_eq!(i, select(Selection::RandomOfN, n, None, Some(seed)).unwrap());
    }

    #[test]
    fn postprocess_output_shape(text in "\\PC{0,80}") {
        let p = postprocess_summary(&text);
        if let Some(c) = p.text.chars().next() {
            prop_assert!(c.is_alphanumeric());
        }
        if p.flag.is_none() {
            prop_assert!(p.text.ends_with(['.', '!', '?']));
        }
    }

    #[test]
    fn benchmark_instances_are_valid(seed in any::<u64>(), per_k in 1usize..4, shuffle in any::<u64>()) {
        let mut words = Lexicon::placeholder().words().to_vec();
        let rot = (shuffle % 25) as usize;
        words.rotate_left(rot);
        let lex = Lexicon::new(words).unwrap();
        let instances = generate_benchmark(&lex, per_k, seed).unwrap();
        prop_assert_eq!(instances.len(), benchmark_size(per_k));
        for inst in &instances {
            prop_assert!(inst.violations().is_empty(), "{:?}: {:?}", inst.instance_id, inst.violations());
            let parsed = parse_sentence(&inst.sentence);
            prop_assert_eq!(parsed.as_deref(), Some(inst.offensive_words.as_slice()));
        }
    }

    #[test]
    fn target_without_removal_restores_sentence(idx in prop::collection::vec(0usize..25, 1..=10)) {
        let lex = Lexicon::placeholder();
        let mut words: Vec<&str> = Vec::new();
        for i in idx {
            let w = lex.words()[i].as_str();
            if !words.contains(&w) {
                words.push(w);
            }
        }
        let none: [&str; 0] = [];
        let target = build_target(&words, &none).unwrap();
        prop_assert_eq!(target.replace(" and ", ", and "), build_sentence(&words).unwrap());
    }

    #[test]
    fn relabeling_methods_keeps_values(
        rankings in prop::collection::vec(prop::collection::vec(0u8..3, 3), 1..20)
    ) {
        let mk = |labels: [&str; 3]| -> Vec<RankingRecord> {
            rankings.iter().enumerate().map(|(i, s)| {
                let raw = competition_ranks(s);
                RankingRecord::new(
                    i.to_string(),
                    "e",
                    labels.iter().map(|l| l.to_string()).zip(raw).collect::<BTreeMap<_, _>>(),
                ).unwrap()
            }).collect()
        };
        let original = win_rate(&mk(["a", "b", "c"]), "a", "b").unwrap();
        let renamed = win_rate(&mk(["x", "y", "z"]), "x", "y").unwrap();
        prop_assert_eq!((original.wins, original.ties, original.losses), (renamed.wins, renamed.ties, renamed.losses));
        prop_assert_eq!(original.p, renamed.p);
        prop_assert_eq!(original.se, renamed.se);
    }

    #[test]
    fn domain_values_round_trip(
        text in "[a-zA-Z .!?\n]{1,40}",
        scores in prop::collection::vec(-1.0f64..1.0, 1..6),
        secs in 0i64..4_000_000_000,
        human in any::<bool>(),
    ) {
        let created_at = Timestamp::from_unix(secs);
        let task = TaskInput { task_id: "t".into(), title: text.clone(), body: text.clone(), source_tag: "s".into() };
        let output = GeneratedOutput {
            output_id: "o".into(),
            task_id: "t".into(),
            text: text.clone(),
            producer: if human { Producer::Human } else { Producer::Model },
            model_tag: (!human).then(|| "m".to_string()),
            method_tag: Some("initial_summary".into()),
            decoding: (!human).then(DecodingParams::summarization),
            created_at,
            quality_flags: vec![],
        };
        let feedback = FeedbackRecord {
            feedback_id: "f".into(), task_id: "t".into(), output_id: "o".into(),
            text: text.clone(), annotator_id: "a".into(), created_at,
        };
        let batch = RefinementBatch {
            batch_id: "b".into(), task_id: "t".into(), initial_output_id: "o".into(),
            feedback_id: Some("f".into()),
            candidates: vec![output.clone(); scores.len()],
            scores: Some(scores.clone()),
            selected_index: 0,
            strategy: Selection::BestOfN,
        };
        prop_assert_eq!(serde_json::from_str::<TaskInput>(&serde_json::to_string(&task).unwrap()).unwrap(), task);
        prop_assert_eq!(serde_json::from_str::<GeneratedOutput>(&serde_json::to_string(&output).unwrap()).unwrap(), output.clone());
        prop_assert_eq!(serde_json::from_str::<FeedbackRecord>(&serde_json::to_string(&feedback).unwrap()).unwrap(), feedback);
        prop_assert_eq!(serde_json::from_str::<RefinementBatch>(&serde_json::to_string(&batch).unwrap()).unwrap(), batch);
        let ctx = ValidationContext::default();
        prop_assert!(validate_record(&output, &ctx).violations.iter().all(|v| v.invariant == "text nonempty"));
    }
}
