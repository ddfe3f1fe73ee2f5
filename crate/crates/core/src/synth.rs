//! Deterministic synthetic mini-corpus in the same on-disk formats as the
//! real data: explanation tables, a column mapping, a category manifest,
//! WorldTree-style question files, and an ARC-style target dataset.
//!
//! Entities are invented words, so no fact can be answered from prior
//! knowledge. Every table fact yields one question that masks its object;
//! the target dataset masks the subject instead.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kb::{parse_table, CategoryManifest, KnowledgeBase, KnowledgeCategory, MappingFile};
use crate::qa::{write_arc_jsonl, write_worldtree_questions, MultipleChoiceQuestion, Split};

pub const DEFAULT_SEED: u64 = 2021;
pub const QUESTION_TAG: &str = "synthetic";
pub const TARGET_TAG: &str = "synthetic-target";

struct TableShape {
    name: &'static str,
    category: KnowledgeCategory,
    facts: usize,
    kind: Shape,
}

enum Shape {
    /// `SUBJECT  [FILL]=relation  OBJECT`
    Binary {
        subject: &'static str,
        relation: &'static str,
        object: &'static str,
    },
    /// `[FILL]=if  CONDITION  [FILL]=then  RESULT`
    Conditional,
}

const TABLES: [TableShape; 6] = [
    TableShape {
        name: "KINDOF",
        category: KnowledgeCategory::Retrieval,
        facts: 45,
        kind: Shape::Binary {
            subject: "HYPONYM",
            relation: "is a kind of",
            object: "HYPERNYM",
        },
    },
    TableShape {
        name: "PROPERTIES",
        category: KnowledgeCategory::Retrieval,
        facts: 30,
        kind: Shape::Binary {
            subject: "OBJECT",
            relation: "has the property",
            object: "PROPERTY",
        },
    },
    TableShape {
        name: "USEDFOR",
        category: KnowledgeCategory::InferenceSupporting,
        facts: 35,
        kind: Shape::Binary {
            subject: "TOOL",
            relation: "is used for",
            object: "PURPOSE",
        },
    },
    TableShape {
        name: "REQUIRES",
        category: KnowledgeCategory::InferenceSupporting,
        facts: 30,
        kind: Shape::Binary {
            subject: "ORGANISM",
            relation: "requires",
            object: "REQUIREMENT",
        },
    },
    TableShape {
        name: "CAUSE",
        category: KnowledgeCategory::ComplexInference,
        facts: 35,
        kind: Shape::Binary {
            subject: "CAUSE",
            relation: "causes",
            object: "EFFECT",
        },
    },
    TableShape {
        name: "IFTHEN",
        category: KnowledgeCategory::ComplexInference,
        facts: 25,
        kind: Shape::Conditional,
    },
];

/// Objects shared by every table, so a random object is always type-plausible.
pub const OBJECT_POOL: usize = 40;

/// Total facts across all generated tables.
pub const FACT_COUNT: usize = 45 + 30 + 35 + 30 + 35 + 25;

/// One generated fact before rendering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthFact {
    pub uid: String,
    pub table: &'static str,
    pub subject: String,
    pub relation: String,
    pub object: String,
}

impl SynthFact {
    /// Question side when the object is masked.
    pub fn object_stem(&self) -> String {
        format!("{} {}", self.subject, self.relation)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub facts: Vec<SynthFact>,
    /// Table name → TSV text.
    pub tables: BTreeMap<String, String>,
    pub mapping_toml: String,
    pub categories_toml: String,
    pub questions: Vec<MultipleChoiceQuestion>,
    pub target: Vec<MultipleChoiceQuestion>,
    /// Question id → uid of the fact it was derived from.
    pub sources: BTreeMap<String, String>,
}

fn word_factory(rng: &mut ChaCha8Rng) -> impl FnMut() -> String + '_ {
    const ONSETS: [&str; 16] = [
        "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "tr",
    ];
    const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
    const CODAS: [&str; 6] = ["", "", "n", "l", "x", "m"];
    let mut used: HashSet<String> = HashSet::new();
    move || loop {
        let syllables = rng.random_range(2..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS.choose(rng).unwrap());
            w.push_str(VOWELS.choose(rng).unwrap());
        }
        w.push_str(CODAS.choose(rng).unwrap());
        if used.insert(w.clone()) {
            return w;
        }
    }
}

fn split_for(position: usize, total: usize) -> Split {
    // 60 / 20 / 20
    let train = total * 3 / 5;
    let dev = total / 5;
    if position < train {
        Split::Train
    } else if position < train + dev {
        Split::Dev
    } else {
        Split::Test
    }
}

/// Three distractors for `gold` drawn from `pool`, avoiding `exclude`.
fn distractors(rng: &mut ChaCha8Rng, pool: &[String], gold: &str, exclude: &BTreeSet<&str>) -> Vec<String> {
    let mut options: Vec<&String> = pool
        .iter()
        .filter(|o| o.as_str() != gold && !exclude.contains(o.as_str()))
        .collect();
    options.shuffle(rng);
    options.into_iter().take(3).cloned().collect()
}

fn place_gold(rng: &mut ChaCha8Rng, gold: String, mut others: Vec<String>) -> (Vec<String>, usize) {
    let at = rng.random_range(0..=others.len());
    others.insert(at, gold);
    (others, at)
}

impl SyntheticCorpus {
    pub fn generate(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut word_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5_eed0_fa11);
        let mut word = word_factory(&mut word_rng);

        let mut facts = Vec::with_capacity(FACT_COUNT);
        let mut tables = BTreeMap::new();
        let objects: Vec<String> = (0..OBJECT_POOL).map(|_| word()).collect();
        let mut next_object = 0;
        for shape in &TABLES {
            let mut tsv = String::new();
            match shape.kind {
                Shape::Binary { subject, object, .. } => {
                    let _ = writeln!(tsv, "{subject}\t[FILL]\t{object}\t[SKIP] COMMENTS\t[SKIP] UID");
                }
                Shape::Conditional => {
                    tsv.push_str("[FILL]\tCONDITION\t[FILL]\tRESULT\t[SKIP] UID\n");
                }
            }
            for i in 0..shape.facts {
                let uid = format!("{}-{:04}", shape.name.to_lowercase(), i + 1);
                let subject = word();
                // every object is used at least once, the rest uniformly
                let object = if next_object < objects.len() {
                    next_object += 1;
                    objects[next_object - 1].clone()
                } else {
                    objects.choose(&mut rng).unwrap().clone()
                };
                let relation = match shape.kind {
                    Shape::Binary { relation, .. } => {
                        let _ = writeln!(tsv, "{subject}\t{relation}\t{object}\t\t{uid}");
                        relation.to_string()
                    }
                    Shape::Conditional => {
                        let _ = writeln!(tsv, "if\t{subject}\tthen\t{object}\t{uid}");
                        "then".to_string()
                    }
                };
                let subject = match shape.kind {
                    Shape::Binary { .. } => subject,
                    Shape::Conditional => format!("if {subject}"),
                };
                facts.push(SynthFact {
                    uid,
                    table: shape.name,
                    subject,
                    relation,
                    object,
                });
            }
            if shape.name == "KINDOF" {
                // one malformed row to exercise the arity check
                tsv.push_str("stray\trow\n");
            }
            tables.insert(shape.name.to_string(), tsv);
        }

        let mut mapping_toml = String::new();
        for shape in &TABLES {
            let (s, p, o) = match shape.kind {
                Shape::Binary { subject, object, .. } => (
                    format!("\"{subject}\""),
                    "\"[FILL]\"".to_string(),
                    format!("\"{object}\""),
                ),
                Shape::Conditional => (
                    "\"[FILL]\", \"CONDITION\"".to_string(),
                    "\"[FILL]#2\"".to_string(),
                    "\"RESULT\"".to_string(),
                ),
            };
            let _ = writeln!(
                mapping_toml,
                "[[table]]\nname = \"{}\"\nsubject = [{s}]\npredicate = [{p}]\nobject = [{o}]\n",
                shape.name
            );
        }
        let mut categories_toml = String::from("[tables]\n");
        for shape in &TABLES {
            let _ = writeln!(categories_toml, "{} = \"{}\"", shape.name, shape.category.as_str());
        }

        // Questions: two object-masked questions per fact with separate distractor draws,
        // facts split 60/20/20 after a seeded shuffle.
        let mut order: Vec<usize> = (0..facts.len()).collect();
        order.shuffle(&mut rng);
        let mut questions = Vec::with_capacity(facts.len());
        let mut target = Vec::with_capacity(facts.len());
        let mut sources = BTreeMap::new();
        for (pos, &fi) in order.iter().enumerate() {
            let f: &SynthFact = &facts[fi];
            let split = split_for(pos, facts.len());
            let valid_objects: BTreeSet<&str> = facts
                .iter()
                .filter(|g| g.table == f.table && g.subject == f.subject)
                .map(|g| g.object.as_str())
                .collect();
            let others = distractors(&mut rng, &objects, &f.object, &valid_objects);
            let (candidates, gold) = place_gold(&mut rng, f.object.clone(), others);
            sources.insert(format!("SYN-{:04}", pos + 1), f.uid.clone());
            sources.insert(format!("TGT-{:04}", pos + 1), f.uid.clone());
            questions.push(MultipleChoiceQuestion {
                question_id: format!("SYN-{:04}", pos + 1),
                stem: f.object_stem(),
                candidates,
                gold_index: Some(gold),
                dataset_tag: QUESTION_TAG.into(),
                split,
            });

            // Target set: same question style, fresh distractors.
            let others = distractors(&mut rng, &objects, &f.object, &valid_objects);
            let (candidates, gold) = place_gold(&mut rng, f.object.clone(), others);
            target.push(MultipleChoiceQuestion {
                question_id: format!("TGT-{:04}", pos + 1),
                stem: f.object_stem(),
                candidates,
                gold_index: Some(gold),
                dataset_tag: TARGET_TAG.into(),
                split,
            });
        }

        SyntheticCorpus {
            facts,
            tables,
            mapping_toml,
            categories_toml,
            questions,
            target,
            sources,
        }
    }

    /// Uids of the facts behind the questions of `split`.
    pub fn facts_in(&self, split: Split) -> BTreeSet<String> {
        self.questions
            .iter()
            .filter(|q| q.split == split)
            .map(|q| self.sources[&q.question_id].clone())
            .collect()
    }

    pub fn questions_in(&self, split: Split) -> Vec<MultipleChoiceQuestion> {
        self.questions.iter().filter(|q| q.split == split).cloned().collect()
    }

    pub fn target_in(&self, split: Split) -> Vec<MultipleChoiceQuestion> {
        self.target.iter().filter(|q| q.split == split).cloned().collect()
    }

    /// Parse the generated tables into a knowledge base without touching disk.
    pub fn knowledge_base(&self) -> Result<KnowledgeBase> {
        let mapping = MappingFile::from_toml(&self.mapping_toml)?;
        let manifest = CategoryManifest::from_toml(&self.categories_toml)?;
        let parsed = manifest
            .tables
            .iter()
            .map(|(name, cat)| parse_table(self.tables[name].as_bytes(), name, *cat))
            .collect::<Result<Vec<_>>>()?;
        KnowledgeBase::from_tables(parsed, &mapping)
    }

    /// Every file of the corpus as `(relative path, contents)`, sorted by path.
    pub fn files(&self) -> Result<Vec<(String, Vec<u8>)>> {
        let mut files = Vec::new();
        for (name, tsv) in &self.tables {
            files.push((format!("tables/{name}.tsv"), tsv.clone().into_bytes()));
        }
        files.push(("mapping.toml".into(), self.mapping_toml.clone().into_bytes()));
        files.push(("categories.toml".into(), self.categories_toml.clone().into_bytes()));
        for split in Split::ALL {
            let mut buf = Vec::new();
            write_worldtree_questions(&self.questions_in(split), &mut buf)?;
            files.push((format!("questions/{QUESTION_TAG}-{split}.tsv"), buf));
            let mut buf = Vec::new();
            write_arc_jsonl(&self.target_in(split), &mut buf)?;
            files.push((format!("questions/{TARGET_TAG}-{split}.jsonl"), buf));
        }
        files.sort();
        Ok(files)
    }

    pub fn write_to(&self, dir: &Path) -> Result<()> {
        for (rel, bytes) in self.files()? {
            let path = dir.join(rel);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qa::{read_arc_or_openbook, read_worldtree_questions};

    #[test]
    fn deterministic() {
        let a = SyntheticCorpus::generate(7);
        let b = SyntheticCorpus::generate(7);
        assert_eq!(a.files().unwrap(), b.files().unwrap());
        let c = SyntheticCorpus::generate(8);
        assert_ne!(a.files().unwrap(), c.files().unwrap());
    }

    #[test]
    fn knowledge_base_shape() {
        let corpus = SyntheticCorpus::generate(DEFAULT_SEED);
        let kb = corpus.knowledge_base().unwrap();
        assert_eq!(kb.triples.len(), FACT_COUNT);
        assert_eq!(kb.triples.len(), 200);
        assert_eq!(kb.skipped_rows.get("KINDOF"), Some(&1));
        assert_eq!(kb.counts.total(), 200);
        let t = kb
            .triples
            .iter()
            .find(|t| t.source_fact_id.starts_with("ifthen"))
            .unwrap();
        assert!(t.subject.starts_with("if ") && t.predicate == "then");
        for (t, f) in kb.triples.iter().zip({
            let mut fs = corpus.facts.clone();
            fs.sort_by(|a, b| a.table.cmp(b.table));
            fs
        }) {
            assert_eq!(
                (t.subject.as_str(), t.object.as_str()),
                (f.subject.as_str(), f.object.as_str())
            );
        }
    }

    #[test]
    fn questions_are_well_formed() {
        let corpus = SyntheticCorpus::generate(DEFAULT_SEED);
        assert_eq!(corpus.questions.len(), 200);
        let counts = Split::ALL.map(|s| corpus.questions_in(s).len());
        assert_eq!(counts, [120, 40, 40]);
        for q in corpus.questions.iter().chain(&corpus.target) {
            assert_eq!(q.candidates.len(), 4);
            let distinct: BTreeSet<&String> = q.candidates.iter().collect();
            assert_eq!(distinct.len(), 4, "{q:?}");
        }
    }

    #[test]
    fn files_parse_with_the_regular_loaders() {
        let corpus = SyntheticCorpus::generate(DEFAULT_SEED);
        let files: BTreeMap<String, Vec<u8>> = corpus.files().unwrap().into_iter().collect();
        let dev = read_worldtree_questions(
            &files["questions/synthetic-dev.tsv"][..],
            Path::new("dev.tsv"),
            Split::Dev,
            QUESTION_TAG,
        )
        .unwrap();
        assert_eq!(dev.skipped, 0);
        assert_eq!(dev.questions, corpus.questions_in(Split::Dev));
        let tgt = read_arc_or_openbook(
            &files["questions/synthetic-target-test.jsonl"][..],
            Path::new("t.jsonl"),
            Split::Test,
            TARGET_TAG,
        )
        .unwrap();
        assert_eq!(tgt.questions, corpus.target_in(Split::Test));
    }
}
