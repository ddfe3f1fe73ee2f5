//! Pair-classification examples: knowledge-base completion with negative
//! sampling, and cloze-style recasting of multiple-choice questions.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::{KnowledgeBase, Triple};
use crate::qa::MultipleChoiceQuestion;

/// Resampling budget when a drawn negative coincides with the true answer.
pub const MAX_NEGATIVE_TRIES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    KbCompletion,
    ClozeQa,
    TargetFineTune,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Subject,
    Predicate,
    Object,
}

impl Role {
    pub fn component(self, t: &Triple) -> &str {
        match self {
            Role::Subject => &t.subject,
            Role::Predicate => &t.predicate,
            Role::Object => &t.object,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairExample {
    pub question_text: String,
    pub answer_text: String,
    pub label: u8,
    pub origin: Origin,
    pub group_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masked_role: Option<Role>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskGenConfig {
    pub negatives_per_positive: usize,
    pub mask_roles: BTreeSet<Role>,
    pub rng_seed: u64,
}

impl Default for TaskGenConfig {
    fn default() -> Self {
        TaskGenConfig {
            negatives_per_positive: 1,
            mask_roles: [Role::Subject, Role::Object].into_iter().collect(),
            rng_seed: 0,
        }
    }
}

impl TaskGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.negatives_per_positive == 0 {
            return Err(Error::Config("negatives_per_positive must be ≥ 1".into()));
        }
        if self.mask_roles.is_empty() {
            return Err(Error::Config("mask_roles must not be empty".into()));
        }
        Ok(())
    }
}

/// The question side of a masked triple: the other components in
/// subject-predicate-object order, gap closed.
pub fn masked_question(t: &Triple, role: Role) -> String {
    [Role::Subject, Role::Predicate, Role::Object]
        .into_iter()
        .filter(|r| *r != role)
        .map(|r| r.component(t))
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegativeSample {
    pub text: String,
    /// The text still equals the true answer after all resampling attempts.
    pub collision: bool,
}

fn sample_negative_at(index: usize, role: Role, triples: &[Triple], rng: &mut impl Rng) -> NegativeSample {
    let truth = role.component(&triples[index]);
    let n = triples.len();
    let mut text = String::new();
    for _ in 0..MAX_NEGATIVE_TRIES {
        let mut j = rng.random_range(0..n - 1);
        if j >= index {
            j += 1;
        }
        text = role.component(&triples[j]).to_string();
        if text != truth && !text.is_empty() {
            return NegativeSample { text, collision: false };
        }
    }
    NegativeSample {
        collision: text == truth,
        text,
    }
}

/// Draw the `role` component of a uniformly chosen triple from a different fact.
pub fn sample_negative(triple: &Triple, role: Role, kb: &KnowledgeBase, rng: &mut impl Rng) -> Result<NegativeSample> {
    if kb.triples.len() < 2 {
        return Err(Error::Generation("negative sampling needs at least two triples".into()));
    }
    let index = kb
        .triples
        .iter()
        .position(|t| t.source_fact_id == triple.source_fact_id)
        .ok_or_else(|| Error::Generation(format!("triple {} not in knowledge base", triple.source_fact_id)))?;
    Ok(sample_negative_at(index, role, &kb.triples, rng))
}

#[derive(Debug, Clone, Default)]
pub struct CompletionExamples {
    pub examples: Vec<PairExample>,
    /// Negatives that still equal the positive answer after resampling.
    pub collisions: usize,
}

/// Knowledge-base completion pairs: for each triple and masked role, one
/// positive and `negatives_per_positive` negatives, then a seeded shuffle.
pub fn gen_completion_examples(kb: &KnowledgeBase, cfg: &TaskGenConfig) -> Result<CompletionExamples> {
    cfg.validate()?;
    if kb.triples.len() < 2 {
        return Err(Error::Generation(format!(
            "knowledge base has {} triple(s); at least 2 are needed",
            kb.triples.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut out = CompletionExamples::default();
    for (i, t) in kb.triples.iter().enumerate() {
        for &role in &cfg.mask_roles {
            let answer = role.component(t);
            let question = masked_question(t, role);
            if answer.is_empty() || question.is_empty() {
                continue;
            }
            let mk = |answer: String, label| PairExample {
                question_text: question.clone(),
                answer_text: answer,
                label,
                origin: Origin::KbCompletion,
                group_id: t.source_fact_id.clone(),
                masked_role: Some(role),
            };
            out.examples.push(mk(answer.to_string(), 1));
            for _ in 0..cfg.negatives_per_positive {
                let neg = sample_negative_at(i, role, &kb.triples, &mut rng);
                if neg.collision {
                    out.collisions += 1;
                }
                out.examples.push(mk(neg.text, 0));
            }
        }
    }
    out.examples.shuffle(&mut rng);
    Ok(out)
}

/// One pair per candidate, labelled 1 for the gold answer.
pub fn gen_cloze_examples(questions: &[MultipleChoiceQuestion]) -> Result<Vec<PairExample>> {
    gen_question_examples(questions, Origin::ClozeQa)
}

/// Same shape as cloze pairs, tagged as target-dataset fine-tuning data.
pub fn gen_finetune_examples(questions: &[MultipleChoiceQuestion]) -> Result<Vec<PairExample>> {
    gen_question_examples(questions, Origin::TargetFineTune)
}

fn gen_question_examples(questions: &[MultipleChoiceQuestion], origin: Origin) -> Result<Vec<PairExample>> {
    let mut out = Vec::with_capacity(questions.len() * 4);
    for q in questions {
        let gold = q
            .gold_index
            .ok_or_else(|| Error::Generation(format!("question {} has no gold answer", q.question_id)))?;
        for (i, c) in q.candidates.iter().enumerate() {
            out.push(PairExample {
                question_text: q.stem.clone(),
                answer_text: c.clone(),
                label: u8::from(i == gold),
                origin,
                group_id: q.question_id.clone(),
                masked_role: None,
            });
        }
    }
    Ok(out)
}

pub fn write_examples_jsonl(examples: &[PairExample], mut out: impl Write) -> Result<()> {
    for e in examples {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n").map_err(|e| Error::io("<examples>", e))?;
    }
    Ok(())
}

pub fn read_examples_jsonl(reader: impl BufRead) -> Result<Vec<PairExample>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<examples>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::DatasetParse {
            path: "<examples>".into(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::{CategoryCounts, ExplanatoryFact};
    use crate::qa::Split;
    use std::collections::BTreeMap;

    fn triple(s: &str, p: &str, o: &str, id: &str) -> Triple {
        Triple {
            subject: s.into(),
            predicate: p.into(),
            object: o.into(),
            source_fact_id: id.into(),
        }
    }

    fn kb_of(triples: Vec<Triple>) -> KnowledgeBase {
        KnowledgeBase {
            facts: Vec::<ExplanatoryFact>::new(),
            triples,
            counts: CategoryCounts::default(),
            dropped: 0,
            skipped_rows: BTreeMap::new(),
        }
    }

    #[test]
    fn masking_definitions() {
        let t = triple("ice", "is a kind of", "solid", "f1");
        assert_eq!(masked_question(&t, Role::Object), "ice is a kind of");
        assert_eq!(masked_question(&t, Role::Subject), "is a kind of solid");
        assert_eq!(masked_question(&t, Role::Predicate), "ice solid");
    }

    /// Brute-force oracle: with two triples every donor is forced, so the full
    /// output multiset can be enumerated by hand.
    #[test]
    fn two_triple_kb_enumeration() {
        let a = triple("ice", "is a kind of", "solid", "a");
        let b = triple("steam", "is a kind of", "gas", "b");
        let kb = kb_of(vec![a.clone(), b.clone()]);
        let cfg = TaskGenConfig::default();
        let got = gen_completion_examples(&kb, &cfg).unwrap();

        let mut expected = Vec::new();
        for (me, other) in [(&a, &b), (&b, &a)] {
            for role in [Role::Subject, Role::Object] {
                let q = masked_question(me, role);
                expected.push((q.clone(), role.component(me).to_string(), 1u8));
                expected.push((q, role.component(other).to_string(), 0u8));
            }
        }
        let mut actual: Vec<_> = got
            .examples
            .iter()
            .map(|e| (e.question_text.clone(), e.answer_text.clone(), e.label))
            .collect();
        expected.sort();
        actual.sort();
        assert_eq!(actual, expected);
        assert_eq!(got.examples.len(), 8);
        assert_eq!(got.examples.iter().filter(|e| e.label == 1).count(), 4);
        assert_eq!(got.collisions, 0);
    }

    #[test]
    fn too_small_kb_errors() {
        let kb = kb_of(vec![triple("a", "b", "c", "x")]);
        assert!(matches!(
            gen_completion_examples(&kb, &TaskGenConfig::default()),
            Err(Error::Generation(_))
        ));
    }

    #[test]
    fn collisions_are_flagged() {
        // both donors share the same object: every object negative collides
        let kb = kb_of(vec![
            triple("ice", "is a", "solid", "a"),
            triple("rock", "is a", "solid", "b"),
        ]);
        let cfg = TaskGenConfig {
            mask_roles: [Role::Object].into_iter().collect(),
            ..Default::default()
        };
        let got = gen_completion_examples(&kb, &cfg).unwrap();
        assert_eq!(got.collisions, 2);
        let neg = sample_negative(&kb.triples[0], Role::Subject, &kb, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(neg.text, "rock");
        assert!(!neg.collision);
    }

    #[test]
    fn ratio_and_seed_behaviour() {
        let triples: Vec<Triple> = (0..30)
            .map(|i| triple(&format!("s{i}"), "rel", &format!("o{i}"), &format!("f{i}")))
            .collect();
        let kb = kb_of(triples);
        let cfg = TaskGenConfig {
            negatives_per_positive: 3,
            rng_seed: 5,
            ..Default::default()
        };
        let a = gen_completion_examples(&kb, &cfg).unwrap().examples;
        let b = gen_completion_examples(&kb, &cfg).unwrap().examples;
        assert_eq!(a, b);
        assert_eq!(a.len(), 30 * 2 * 4);
        let pos = a.iter().filter(|e| e.label == 1).count();
        assert_eq!(pos * 3, a.len() - pos);

        let c = gen_completion_examples(
            &kb,
            &TaskGenConfig {
                rng_seed: 6,
                ..cfg.clone()
            },
        )
        .unwrap()
        .examples;
        let positives = |xs: &[PairExample]| {
            let mut p: Vec<_> = xs
                .iter()
                .filter(|e| e.label == 1)
                .cloned()
                .map(|e| (e.question_text, e.answer_text))
                .collect();
            p.sort();
            p
        };
        let negatives = |xs: &[PairExample]| {
            let mut p: Vec<_> = xs
                .iter()
                .filter(|e| e.label == 0)
                .cloned()
                .map(|e| (e.question_text, e.answer_text))
                .collect();
            p.sort();
            p
        };
        assert_eq!(positives(&a), positives(&c));
        assert_ne!(negatives(&a), negatives(&c));
    }

    fn question(id: &str, n: usize, gold: Option<usize>) -> MultipleChoiceQuestion {
        MultipleChoiceQuestion {
            question_id: id.into(),
            stem: "which one".into(),
            candidates: (0..n).map(|i| format!("c{i}")).collect(),
            gold_index: gold,
            dataset_tag: "t".into(),
            split: Split::Train,
        }
    }

    #[test]
    fn cloze_pairs() {
        let ex = gen_cloze_examples(&[question("q1", 4, Some(2))]).unwrap();
        assert_eq!(ex.len(), 4);
        assert_eq!(ex.iter().map(|e| e.label).collect::<Vec<_>>(), vec![0, 0, 1, 0]);
        let ex = gen_cloze_examples(&[question("q2", 2, Some(0))]).unwrap();
        assert_eq!(ex.iter().map(|e| e.label).collect::<Vec<_>>(), vec![1, 0]);
        let err = gen_cloze_examples(&[question("hidden", 3, None)]).unwrap_err();
        assert!(err.to_string().contains("hidden"));
        let ft = gen_finetune_examples(&[question("q3", 3, Some(1))]).unwrap();
        assert!(ft.iter().all(|e| e.origin == Origin::TargetFineTune));
    }

    #[test]
    fn jsonl_round_trip() {
        let ex = gen_cloze_examples(&[question("q1", 3, Some(1))]).unwrap();
        let mut buf = Vec::new();
        write_examples_jsonl(&ex, &mut buf).unwrap();
        assert_eq!(read_examples_jsonl(&buf[..]).unwrap(), ex);
    }
}
