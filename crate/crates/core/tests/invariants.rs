//! Property tests for the structural invariants of the pipeline.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use proptest::prelude::*;

use nxkt::bm25::{idf, top_k, Bm25Index, Bm25Scoring};
use nxkt::encoding::{build_vocab, decode_pair, encode_pair, tokenize};
use nxkt::eval::select_answer;
use nxkt::kb::{filter_by_category, Cell, ExplanatoryFact, KnowledgeBase, KnowledgeCategory, Triple};
use nxkt::model::{init_params, score_pair, softmax2, EncoderConfig, Preset};
use nxkt::qa::{MultipleChoiceQuestion, Split};
use nxkt::taskgen::{gen_cloze_examples, gen_completion_examples, Role, TaskGenConfig};
use nxkt::Execution;

fn word() -> impl Strategy<Value = String> {
    "[a-z]{1,6}"
}

fn category() -> impl Strategy<Value = KnowledgeCategory> {
    prop::sample::select(KnowledgeCategory::ALL.to_vec())
}

/// A knowledge base of `facts` rows; every third fact has no triple.
fn knowledge_base(facts: Vec<(KnowledgeCategory, String, String)>) -> KnowledgeBase {
    let mut rows = Vec::new();
    let mut triples = Vec::new();
    for (i, (cat, s, o)) in facts.into_iter().enumerate() {
        let id = format!("f{i}");
        // subjects made unique so negative sampling never collides
        let subject = format!("{s}{i}");
        rows.push(ExplanatoryFact {
            fact_id: id.clone(),
            table_name: format!("T{}", i % 4),
            category: cat,
            cells: vec![
                Cell {
                    role: "SUBJECT".into(),
                    text: subject.clone(),
                },
                Cell {
                    role: "OBJECT".into(),
                    text: o.clone(),
                },
            ],
        });
        if i % 3 != 2 {
            triples.push(Triple {
                subject,
                predicate: "has".into(),
                object: format!("{o}{i}"),
                source_fact_id: id,
            });
        }
    }
    KnowledgeBase::from_parts(rows, triples, BTreeMap::new())
}

fn kb_strategy() -> impl Strategy<Value = KnowledgeBase> {
    prop::collection::vec((category(), word(), word()), 3..40).prop_map(knowledge_base)
}

fn question(id: usize, stem: String, candidates: Vec<String>, gold: usize) -> MultipleChoiceQuestion {
    MultipleChoiceQuestion {
        question_id: format!("q{id}"),
        stem,
        gold_index: Some(gold % candidates.len()),
        candidates,
        dataset_tag: "prop".into(),
        split: Split::Train,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn category_filters_partition_the_kb(kb in kb_strategy(), pick in prop::collection::btree_set(category(), 0..=3)) {
        let singles: Vec<KnowledgeBase> = KnowledgeCategory::ALL
            .iter()
            .map(|c| filter_by_category(&kb, &BTreeSet::from([*c])))
            .collect();
        let mut owner: HashMap<&str, usize> = HashMap::new();
        for (i, part) in singles.iter().enumerate() {
            for f in &part.facts {
                prop_assert!(owner.insert(f.fact_id.as_str(), i).is_none());
            }
        }
        prop_assert_eq!(owner.len(), kb.len());
        prop_assert_eq!(singles.iter().map(|p| p.triples.len()).sum::<usize>(), kb.triples.len());

        let subset = filter_by_category(&kb, &pick);
        let expected: usize = pick.iter().map(|c| kb.counts.get(*c)).sum();
        prop_assert_eq!(subset.len(), expected);
        prop_assert!(subset.facts.iter().all(|f| pick.contains(&f.category)));
        prop_assert_eq!(subset.counts.total(), subset.len());
    }

    #[test]
    fn completion_groups_hold_one_positive(kb in kb_strategy(), negatives in 1usize..4, seed in any::<u64>()) {
        let cfg = TaskGenConfig { negatives_per_positive: negatives, rng_seed: seed, ..TaskGenConfig::default() };
        let out = gen_completion_examples(&kb, &cfg).unwrap();
        prop_assert_eq!(out.collisions, 0);
        let mut groups: BTreeMap<(String, Option<Role>), (usize, usize)> = BTreeMap::new();
        for e in &out.examples {
            let g = groups.entry((e.group_id.clone(), e.masked_role)).or_default();
            g.0 += usize::from(e.label == 1);
            g.1 += 1;
        }
        prop_assert_eq!(groups.len(), kb.triples.len() * cfg.mask_roles.len());
        for (pos, n) in groups.values() {
            prop_assert_eq!(*pos, 1);
            prop_assert_eq!(*n, 1 + negatives);
        }
    }

    #[test]
    fn question_pairs_hold_one_positive(
        qs in prop::collection::vec((word(), prop::collection::vec(word(), 2..6), any::<usize>()), 1..20)
    ) {
        let questions: Vec<MultipleChoiceQuestion> = qs
            .into_iter()
            .enumerate()
            .map(|(i, (stem, cands, gold))| question(i, stem, cands, gold))
            .collect();
        let pairs = gen_cloze_examples(&questions).unwrap();
        for q in &questions {
            let mine: Vec<_> = pairs.iter().filter(|p| p.group_id == q.question_id).collect();
            prop_assert_eq!(mine.len(), q.candidates.len());
            prop_assert_eq!(mine.iter().filter(|p| p.label == 1).count(), 1);
            let gold = mine.iter().find(|p| p.label == 1).unwrap();
            prop_assert_eq!(Some(gold.answer_text.as_str()), q.gold());
        }
    }

    #[test]
    fn encoding_round_trips_and_truncates_the_question(
        q in prop::collection::vec(word(), 0..30),
        a in prop::collection::vec(word(), 1..6),
        max_len in 9usize..48,
    ) {
        let (q, a) = (q.join(" "), a.join(" "));
        let vocab = build_vocab([q.as_str(), a.as_str()], 1, usize::MAX);
        let seq = encode_pair(&q, &a, &vocab, max_len).unwrap();
        prop_assert_eq!(seq.len(), max_len);
        prop_assert_eq!(seq.segment_ids.len(), max_len);
        let active = seq.active_positions();
        prop_assert_eq!(active.clone(), (0..active.len()).collect::<Vec<_>>());
        let (dq, da) = decode_pair(&seq, &vocab).unwrap();
        let (tq, ta) = (tokenize(&q), tokenize(&a));
        prop_assert_eq!(&da, &ta);
        prop_assert!(tq.starts_with(&dq));
        prop_assert_eq!(dq.len(), tq.len().min(max_len - 3 - ta.len()));
    }

    #[test]
    fn softmax_is_a_distribution(l0 in -1e6f64..1e6, l1 in -1e6f64..1e6, shift in -50f64..50.0) {
        let p = softmax2([l0, l1]);
        prop_assert!((p[0] + p[1] - 1.0).abs() <= 1e-12);
        prop_assert!(p.iter().all(|x| (0.0..=1.0).contains(x)));
        let q = softmax2([l0 + shift, l1 + shift]);
        prop_assert!((p[1] - q[1]).abs() <= 1e-9);
        prop_assert_eq!(l1 > l0, p[1] > 0.5);
    }

    #[test]
    fn argmax_picks_the_first_maximum(scores in prop::collection::vec(prop::sample::select(vec![0.0f64, 0.25, 0.5, 1.0]), 1..8)) {
        let best = scores.iter().cloned().fold(f64::MIN, f64::max);
        let first = scores.iter().position(|&s| s == best);
        prop_assert_eq!(select_answer(&scores), first);
    }

    #[test]
    fn argmax_skips_unusable_scores(
        scores in prop::collection::vec(prop_oneof![Just(f64::NAN), Just(f64::NEG_INFINITY), -5f64..5.0], 1..8)
    ) {
        let usable: Vec<(usize, f64)> = scores.iter().cloned().enumerate().filter(|(_, s)| s.is_finite()).collect();
        let expected = usable
            .iter()
            .fold(None::<(usize, f64)>, |acc, &(i, s)| match acc {
                Some((_, b)) if b >= s => acc,
                _ => Some((i, s)),
            })
            .map(|(i, _)| i);
        prop_assert_eq!(select_answer(&scores), expected);
    }

    #[test]
    fn topk_is_a_stable_descending_prefix(scores in prop::collection::vec(prop::sample::select(vec![0.0f64, 0.1, 0.3, 0.7]), 0..30), k in 0usize..10) {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|a, b| scores[*b].total_cmp(&scores[*a]));
        order.truncate(k);
        prop_assert_eq!(top_k(&scores, k), order);
    }

    #[test]
    fn idf_is_positive_and_falls_with_document_frequency(n in 1usize..10_000, a in 0u32..10_000, b in 0u32..10_000) {
        let (lo, hi) = (a.min(b).min(n as u32), a.max(b).min(n as u32));
        prop_assert!(idf(n, hi) > 0.0);
        prop_assert!(idf(n, lo) >= idf(n, hi));
    }

    #[test]
    fn bm25_similarities_are_bounded(
        docs in prop::collection::vec(prop::collection::vec("[a-e]{1,2}", 1..8), 1..12),
        query in prop::collection::vec("[a-g]{1,2}", 1..6),
    ) {
        let sentences: Vec<(String, String)> = docs.iter().enumerate().map(|(i, d)| (format!("d{i}"), d.join(" "))).collect();
        let index = Bm25Index::build(&sentences, 1.2, 0.75, Execution::Sequential).unwrap();
        let query = query.join(" ");
        let cos = index.similarities(&query, Bm25Scoring::Cosine);
        prop_assert_eq!(cos.len(), sentences.len());
        prop_assert!(cos.iter().all(|s| (-1e-12..=1.0 + 1e-12).contains(s)));
        let okapi = index.similarities(&query, Bm25Scoring::Okapi);
        prop_assert!(okapi.iter().all(|s| *s >= 0.0));
        // A document sharing no query term scores zero under both schemes.
        let q_terms: BTreeSet<String> = tokenize(&query).into_iter().collect();
        for (i, (_, text)) in sentences.iter().enumerate() {
            if tokenize(text).iter().all(|t| !q_terms.contains(t)) {
                prop_assert_eq!(cos[i], 0.0);
                prop_assert_eq!(okapi[i], 0.0);
            }
        }
        let parallel = Bm25Index::build(&sentences, 1.2, 0.75, Execution::Parallel).unwrap();
        prop_assert_eq!(parallel.similarities(&query, Bm25Scoring::Cosine), cos);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn padding_never_changes_the_score(
        q in prop::collection::vec(word(), 1..8),
        a in prop::collection::vec(word(), 1..4),
        extra in 1usize..24,
        seed in 0u64..1000,
    ) {
        let (q, a) = (q.join(" "), a.join(" "));
        let vocab = build_vocab([q.as_str(), a.as_str()], 1, usize::MAX);
        let short_len = (tokenize(&q).len() + tokenize(&a).len() + 3).max(8);
        let long_len = short_len + extra;
        let cfg = EncoderConfig { dropout_rate: 0.1, ..Preset::Tiny.config(vocab.len(), long_len) };
        let params = init_params(&cfg, seed).unwrap();
        let short = encode_pair(&q, &a, &vocab, short_len).unwrap();
        let long = encode_pair(&q, &a, &vocab, long_len).unwrap();
        let (s, l) = (score_pair(&params, &short).unwrap(), score_pair(&params, &long).unwrap());
        prop_assert!((s - l).abs() <= 1e-12, "{} vs {}", s, l);
    }
}
