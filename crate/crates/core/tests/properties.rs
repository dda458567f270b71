use std::collections::HashSet;

use fsed::corpus::{Corpus, EventMention, LabelSpace};
use fsed::evaluator::{self, bucket_mentions, metrics_from_confusion};
use fsed::model::{classify_event, Distance, EventEmbedding, PrototypeSpace};
use fsed::promptkit::{self, EventOrder, PromptConfig, TriggerOrder};
use fsed::sampler::{self, TestPool};
use fsed::synthetic::{self, SeparableSpec};
use fsed::trainer::{build_model, TrainConfig};
use fsed::EncoderSpec;
use ndarray::{Array1, Array2};
use proptest::prelude::*;

fn mention(id: String, label: String, trigger: &str, len: usize) -> EventMention {
    let mut words: Vec<String> = (0..len.max(1)).map(|i| format!("w{i}")).collect();
    words[0] = trigger.to_string();
    EventMention {
        id,
        words,
        trigger_start: 0,
        trigger_end: 1,
        trigger: trigger.to_string(),
        label,
    }
}

fn corpus_from_counts(counts: &[usize]) -> Corpus {
    let ms = counts.iter().enumerate().flat_map(|(t, &n)| {
        (0..n).map(move |i| mention(format!("{t}-{i}"), format!("L{t}"), &format!("trig{}", i % 3), 3))
    });
    Corpus::from_mentions(ms).0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_partitions_kept_types(counts in prop::collection::vec(1usize..30, 1..8), k in 1usize..6, seed in any::<u64>()) {
        let c = corpus_from_counts(&counts);
        match sampler::make_true_fewshot_split(&c, k, seed) {
            Ok(s) => {
                let all: Vec<&String> = s.train.iter().chain(&s.valid).chain(&s.test).collect();
                let unique: HashSet<&String> = all.iter().copied().collect();
                prop_assert_eq!(all.len(), unique.len());
                let expected: usize = counts.iter().filter(|&&n| n > 2 * k).sum();
                prop_assert_eq!(all.len(), expected);
                prop_assert_eq!(s.train.len(), k * s.kept_labels.len());
                prop_assert_eq!(s.valid.len(), k * s.kept_labels.len());
            }
            Err(_) => prop_assert!(counts.iter().all(|&n| n <= 2 * k)),
        }
    }

    #[test]
    fn split_is_seed_deterministic(counts in prop::collection::vec(5usize..20, 1..5), seed in any::<u64>()) {
        let c = corpus_from_counts(&counts);
        let a = sampler::make_true_fewshot_split(&c, 2, seed).unwrap();
        let b = sampler::make_true_fewshot_split(&c, 2, seed).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn class_distribution_normalized(
        n in 1usize..8,
        d in 1usize..6,
        vals in prop::collection::vec(-10.0f64..10.0, 60),
        squared in any::<bool>(),
    ) {
        let protos = Array2::from_shape_fn((n, d), |(i, j)| vals[(i * d + j) % vals.len()]);
        let e0 = EventEmbedding(Array1::from_shape_fn(d, |j| vals[(59 - j) % vals.len()]));
        let labels = LabelSpace::new((0..n).map(|i| format!("L{i}")));
        let dist = if squared { Distance::Squared } else { Distance::Euclidean };
        let p = classify_event(&e0, &PrototypeSpace { vectors: protos, seed: 0 }, &labels, dist).unwrap();
        let sum: f64 = p.distribution.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9);
        prop_assert!(p.distribution.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn class_distribution_shift_invariant(
        vals in prop::collection::vec(-5.0f64..5.0, 12),
        shift in prop::collection::vec(-50.0f64..50.0, 3),
    ) {
        let protos = Array2::from_shape_vec((3, 3), vals[..9].to_vec()).unwrap();
        let e0 = Array1::from_vec(vals[9..].to_vec());
        let s = Array1::from_vec(shift);
        let labels = LabelSpace::new(["a", "b", "c"]);
        let a = classify_event(&EventEmbedding(e0.clone()), &PrototypeSpace { vectors: protos.clone(), seed: 0 }, &labels, Distance::Euclidean).unwrap();
        let moved = &protos + &s.view().insert_axis(ndarray::Axis(0));
        let b = classify_event(&EventEmbedding(&e0 + &s), &PrototypeSpace { vectors: moved, seed: 0 }, &labels, Distance::Euclidean).unwrap();
        for (x, y) in a.distribution.iter().zip(&b.distribution) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn weighted_metrics_bounded(cells in prop::collection::vec(0u64..6, 16)) {
        prop_assume!(cells.iter().sum::<u64>() > 0);
        let confusion: Vec<Vec<u64>> = cells.chunks(4).map(|r| r.to_vec()).collect();
        let r = metrics_from_confusion(&confusion, &LabelSpace::new(["a", "b", "c", "d"])).unwrap();
        for v in [r.accuracy, r.weighted_precision, r.weighted_recall, r.weighted_f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        // weighted recall reduces to accuracy
        prop_assert!((r.weighted_recall - r.accuracy).abs() < 1e-12);
    }

    #[test]
    fn buckets_partition_mentions(lens in prop::collection::vec(1usize..80, 0..40)) {
        let ms: Vec<EventMention> = lens.iter().enumerate().map(|(i, &n)| mention(i.to_string(), "L".into(), "t", n)).collect();
        let refs: Vec<&EventMention> = ms.iter().collect();
        let (buckets, outside) = bucket_mentions(&refs, &evaluator::DEFAULT_INTERVALS).unwrap();
        let mut ids: Vec<&str> = buckets.iter().flatten().chain(&outside).map(|m| m.id.as_str()).collect();
        ids.sort_unstable();
        let mut want: Vec<&str> = ms.iter().map(|m| m.id.as_str()).collect();
        want.sort_unstable();
        prop_assert_eq!(ids, want);
        for (b, &(lo, hi)) in buckets.iter().zip(&evaluator::DEFAULT_INTERVALS) {
            prop_assert!(b.iter().all(|m| lo < m.len() && m.len() <= hi));
        }
    }

    #[test]
    fn ontology_switch_only_drops_its_segment(t in 0usize..2, e in 0usize..6, n in 1usize..12) {
        let m = mention("x".into(), "L".into(), "went", n);
        let on = PromptConfig { trigger_order: TriggerOrder::ALL[t], event_order: EventOrder::ALL[e], ..Default::default() };
        let off = PromptConfig { use_ontology: false, ..on.clone() };
        let with = promptkit::assemble_event_prompt(&m, Some("went"), &on).unwrap().text;
        let without = promptkit::assemble_event_prompt(&m, Some("went"), &off).unwrap().text;
        let sep_onto = format!(" [SEP] {}", on.ontology_event);
        let onto_sep = format!("{} [SEP] ", on.ontology_event);
        let deleted = if with.contains(&sep_onto) { with.replacen(&sep_onto, "", 1) } else { with.replacen(&onto_sep, "", 1) };
        prop_assert_eq!(deleted, without);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn predictions_independent_of_batch_size(seed in 0u64..1000, batch in 1usize..40) {
        let c = synthetic::separable_corpus(&SeparableSpec { per_type: 8, n_types: 4, ..Default::default() });
        let split = sampler::make_true_fewshot_split(&c, 2, seed).unwrap();
        let model = build_model(&c, &split, &TrainConfig::default(), &EncoderSpec::default(), &PromptConfig::default(), seed).unwrap();
        let test = c.select(&split.test);
        let a = evaluator::predict(&model, &test, batch).unwrap();
        let b = evaluator::predict(&model, &test, test.len()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn ius_takes_k_per_type(seed in any::<u64>(), k in 1usize..5) {
        let c = corpus_from_counts(&[20, 15, 12]);
        let split = sampler::make_true_fewshot_split(&c, 1, 0).unwrap();
        let pool = TestPool::from_split(&c, &split);
        let s = sampler::sample_ius(&pool, k, seed).unwrap();
        for label in ["L0", "L1", "L2"] {
            prop_assert_eq!(c.select(&s.ids).iter().filter(|m| m.label == label).count(), k);
        }
    }
}
