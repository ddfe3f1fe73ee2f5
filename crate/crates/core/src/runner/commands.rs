//! Pipeline commands. Each reads its inputs from the data root or from the
//! outputs of an earlier command, writes into the output directory, and
//! records a manifest; a command whose manifest key is unchanged is skipped.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bm25::{ir_answer, kb_sentences, Bm25Index};
use crate::encoding::{build_vocab, Vocabulary};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate, evaluate_with, render_results_table, repeated_eval, AblationRow, AblationTable, ConfigLabel,
    KnowledgeSubset, RepeatedReport,
};
use crate::kb::{
    filter_by_category, load_knowledge_base, CategoryManifest, KnowledgeBase, KnowledgeCategory, MappingFile,
};
use crate::model::{init_params, load_checkpoint, save_checkpoint, CheckpointStage, EncoderConfig, ModelParams};
use crate::qa::{
    dataset_stats, load_arc_or_openbook, load_worldtree_questions, render_stats_table, DatasetStats, LoadedQuestions,
    MultipleChoiceQuestion, Split,
};
use crate::synth::{SyntheticCorpus, QUESTION_TAG, TARGET_TAG};
use crate::taskgen::{
    gen_cloze_examples, gen_completion_examples, gen_finetune_examples, read_examples_jsonl, write_examples_jsonl,
    PairExample,
};
use crate::train::TrainingCurve;

use super::config::{DatasetFormat, DatasetSpec, LoadedConfig};
use super::manifest::{hash_strings, Manifest};
use super::recipe::{finetune_name, run_recipe, RecipeData, StageRunner, TargetData};

/// Where every artifact lives under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }
    pub fn kb(&self) -> PathBuf {
        self.root.join("kb.jsonl")
    }
    pub fn kb_summary(&self) -> PathBuf {
        self.root.join("kb-summary.json")
    }
    pub fn kb_summary_text(&self) -> PathBuf {
        self.root.join("kb-summary.txt")
    }
    pub fn stats(&self) -> PathBuf {
        self.root.join("stats.json")
    }
    pub fn stats_text(&self) -> PathBuf {
        self.root.join("stats.txt")
    }
    pub fn examples(&self) -> PathBuf {
        self.root.join("examples")
    }
    pub fn completion(&self) -> PathBuf {
        self.examples().join("completion.jsonl")
    }
    pub fn cloze(&self) -> PathBuf {
        self.examples().join("cloze.jsonl")
    }
    pub fn finetune(&self, tag: &str) -> PathBuf {
        self.examples().join(format!("finetune-{tag}.jsonl"))
    }
    pub fn vocab(&self) -> PathBuf {
        self.root.join("vocab.txt")
    }
    pub fn runs(&self) -> PathBuf {
        self.root.join("runs")
    }
    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.runs().join(format!("seed-{seed}"))
    }
    pub fn checkpoint(&self, seed: u64, name: &str) -> PathBuf {
        self.seed_dir(seed).join(format!("{name}.ckpt"))
    }
    pub fn curve(&self, seed: u64, name: &str) -> PathBuf {
        self.seed_dir(seed).join(format!("curve-{name}.csv"))
    }
    pub fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }
    pub fn eval_report(&self, label: &ConfigLabel) -> PathBuf {
        self.eval_dir().join(format!("{}.json", label_slug(label)))
    }
    pub fn baseline(&self) -> PathBuf {
        self.root.join("baseline")
    }
    pub fn bm25_cache(&self) -> PathBuf {
        self.baseline().join("bm25.idx")
    }
    pub fn ablation(&self) -> PathBuf {
        self.root.join("ablation")
    }
    pub fn cell(&self, subset: KnowledgeSubset, label: &ConfigLabel) -> Layout {
        Layout::new(self.ablation().join(format!("{subset}-{}", label.stages())))
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report")
    }
    pub fn manifest(&self, command: &str) -> PathBuf {
        Manifest::path_for(&self.root.join("manifests"), command)
    }
}

pub fn label_slug(label: &ConfigLabel) -> String {
    label.to_string().replace(' ', "_")
}

/// What a command did.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    /// Skipped because its manifest was current.
    pub up_to_date: bool,
    pub outputs: Vec<PathBuf>,
    pub summary: String,
}

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        mkdir(parent)?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &serde_json::to_string_pretty(value)?)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn require(path: &Path, producer: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            producer: producer.to_string(),
        })
    }
}

/// Skip-or-run wrapper around a command body.
/// The parts of the configuration a command reads, so unrelated edits
/// (say, a learning rate) leave its outputs current.
fn scoped_snapshot(cfg: &LoadedConfig, sections: &[&str]) -> Result<String> {
    let full = serde_json::to_value(&cfg.config)?;
    let picked: serde_json::Map<String, serde_json::Value> = sections
        .iter()
        .filter_map(|k| full.get(*k).map(|v| (k.to_string(), v.clone())))
        .collect();
    Ok(serde_json::Value::Object(picked).to_string())
}

fn with_manifest(
    layout: &Layout,
    command: &str,
    snapshot: &str,
    inputs: &[PathBuf],
    extra: &[&str],
    force: bool,
    body: impl FnOnce() -> Result<Outcome>,
) -> Result<Outcome> {
    let mut manifest = Manifest::new(command, snapshot, inputs, extra)?;
    let path = layout.manifest(command);
    if !force && manifest.is_current(&path) {
        let old = Manifest::load(&path)?;
        log::info!("{command}: up to date");
        return Ok(Outcome {
            up_to_date: true,
            outputs: old.outputs,
            summary: format!("{command}: up to date"),
        });
    }
    let outcome = body()?;
    manifest.outputs = outcome.outputs.clone();
    manifest.save(&path)?;
    Ok(outcome)
}

fn knowledge_inputs(cfg: &LoadedConfig) -> Vec<PathBuf> {
    let k = &cfg.config.knowledge;
    let mut v = vec![cfg.data_path(&k.tables), cfg.data_path(&k.categories)];
    if let Some(m) = &k.mapping {
        v.push(cfg.data_path(m));
    }
    v
}

fn dataset_inputs(cfg: &LoadedConfig) -> Vec<PathBuf> {
    cfg.config
        .datasets
        .iter()
        .flat_map(|d| [&d.train, &d.dev, &d.test])
        .flatten()
        .map(|p| cfg.data_path(p))
        .collect()
}

pub fn load_split(cfg: &LoadedConfig, d: &DatasetSpec, split: Split) -> Result<Option<LoadedQuestions>> {
    let path = match split {
        Split::Train => &d.train,
        Split::Dev => &d.dev,
        Split::Test => &d.test,
    };
    let Some(path) = path else { return Ok(None) };
    let path = cfg.data_path(path);
    let loaded = match d.format {
        DatasetFormat::Worldtree => load_worldtree_questions(&path, split, &d.tag)?,
        DatasetFormat::Arc => load_arc_or_openbook(&path, split, &d.tag)?,
    };
    if loaded.skipped > 0 {
        log::warn!("{}: skipped {} malformed record(s)", path.display(), loaded.skipped);
    }
    Ok(Some(loaded))
}

fn questions(cfg: &LoadedConfig, d: &DatasetSpec, split: Split) -> Result<Vec<MultipleChoiceQuestion>> {
    Ok(load_split(cfg, d, split)?.map(|l| l.questions).unwrap_or_default())
}

/// Datasets that get a fine-tuning stage.
pub fn finetune_targets(cfg: &LoadedConfig) -> Vec<&DatasetSpec> {
    cfg.config
        .datasets
        .iter()
        .filter(|d| !d.cloze_source && d.train.is_some())
        .collect()
}

// ---------------------------------------------------------------- ingest

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSummary {
    pub table: String,
    pub category: KnowledgeCategory,
    pub facts: usize,
    pub skipped_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbSummary {
    pub tables: Vec<TableSummary>,
    pub facts_by_category: BTreeMap<String, usize>,
    pub total_facts: usize,
    pub triples: usize,
    pub dropped_facts: usize,
    pub skipped_rows: usize,
}

impl KbSummary {
    pub fn of(kb: &KnowledgeBase) -> Self {
        let mut tables: BTreeMap<String, TableSummary> = BTreeMap::new();
        for f in &kb.facts {
            tables
                .entry(f.table_name.clone())
                .or_insert_with(|| TableSummary {
                    table: f.table_name.clone(),
                    category: f.category,
                    facts: 0,
                    skipped_rows: 0,
                })
                .facts += 1;
        }
        for (name, n) in &kb.skipped_rows {
            if let Some(t) = tables.get_mut(name) {
                t.skipped_rows = *n;
            }
        }
        KbSummary {
            tables: tables.into_values().collect(),
            facts_by_category: KnowledgeCategory::ALL
                .into_iter()
                .map(|c| (c.as_str().to_string(), kb.counts.get(c)))
                .collect(),
            total_facts: kb.len(),
            triples: kb.triples.len(),
            dropped_facts: kb.dropped,
            skipped_rows: kb.skipped_rows.values().sum(),
        }
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for c in KnowledgeCategory::ALL {
            let _ = writeln!(s, "{:<22} {:>7}", c.as_str(), self.facts_by_category[c.as_str()]);
        }
        let _ = writeln!(s, "{:<22} {:>7}", "total", self.total_facts);
        let _ = writeln!(s, "{:<22} {:>7}", "triples", self.triples);
        let _ = writeln!(s, "{:<22} {:>7}", "dropped (no triple)", self.dropped_facts);
        let _ = writeln!(s, "{:<22} {:>7}", "skipped rows", self.skipped_rows);
        for t in self.tables.iter().filter(|t| t.skipped_rows > 0) {
            let _ = writeln!(s, "  {:<20} {:>7}", t.table, t.skipped_rows);
        }
        s
    }
}

pub fn load_kb_from_config(cfg: &LoadedConfig) -> Result<KnowledgeBase> {
    let k = &cfg.config.knowledge;
    let mapping = match &k.mapping {
        Some(p) => MappingFile::load(&cfg.data_path(p))?,
        None => MappingFile::default(),
    };
    let manifest = CategoryManifest::load(&cfg.data_path(&k.categories))?;
    load_knowledge_base(&cfg.data_path(&k.tables), &mapping, &manifest, cfg.config.execution)
}

pub fn ingest(cfg: &LoadedConfig, force: bool) -> Result<Outcome> {
    cfg.check_paths()?;
    let layout = Layout::new(&cfg.output_dir);
    with_manifest(
        &layout,
        "ingest",
        &scoped_snapshot(cfg, &["knowledge"])?,
        &knowledge_inputs(cfg),
        &[],
        force,
        || {
            let kb = load_kb_from_config(cfg)?;
            mkdir(&layout.root)?;
            kb.save(&layout.kb())?;
            let summary = KbSummary::of(&kb);
            write_json(&layout.kb_summary(), &summary)?;
            let text = summary.render();
            write_text(&layout.kb_summary_text(), &text)?;
            Ok(Outcome {
                up_to_date: false,
                outputs: vec![layout.kb(), layout.kb_summary(), layout.kb_summary_text()],
                summary: text,
            })
        },
    )
}

// ---------------------------------------------------------------- stats

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub tag: String,
    pub counts: DatasetStats,
    pub skipped: usize,
}

pub fn dataset_summaries(cfg: &LoadedConfig) -> Result<Vec<DatasetSummary>> {
    let mut out = Vec::new();
    for d in &cfg.config.datasets {
        let mut all = Vec::new();
        let mut skipped = 0;
        for split in Split::ALL {
            if let Some(l) = load_split(cfg, d, split)? {
                skipped += l.skipped;
                all.extend(l.questions);
            }
        }
        out.push(DatasetSummary {
            tag: d.tag.clone(),
            counts: dataset_stats(&all),
            skipped,
        });
    }
    Ok(out)
}

pub fn stats(cfg: &LoadedConfig, force: bool) -> Result<Outcome> {
    cfg.check_paths()?;
    let layout = Layout::new(&cfg.output_dir);
    with_manifest(
        &layout,
        "stats",
        &scoped_snapshot(cfg, &["dataset"])?,
        &dataset_inputs(cfg),
        &[],
        force,
        || {
            let rows = dataset_summaries(cfg)?;
            write_json(&layout.stats(), &rows)?;
            let table: Vec<(String, DatasetStats)> = rows.iter().map(|r| (r.tag.clone(), r.counts)).collect();
            let text = render_stats_table(&table);
            write_text(&layout.stats_text(), &text)?;
            Ok(Outcome {
                up_to_date: false,
                outputs: vec![layout.stats(), layout.stats_text()],
                summary: text,
            })
        },
    )
}

// ---------------------------------------------------------------- gen

fn save_examples(path: &Path, examples: &[PairExample]) -> Result<()> {
    if let Some(parent) = path.parent() {
        mkdir(parent)?;
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_examples_jsonl(examples, &mut w)?;
    std::io::Write::flush(&mut w).map_err(|e| Error::io(path, e))
}

pub fn load_examples(path: &Path) -> Result<Vec<PairExample>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_examples_jsonl(BufReader::new(file))
}

/// Vocabulary over the knowledge-base sentences and every question's text.
pub fn build_experiment_vocab(
    kb: &KnowledgeBase,
    questions: &[MultipleChoiceQuestion],
    min_freq: usize,
    max_size: usize,
) -> Vocabulary {
    let texts = kb.triples.iter().map(|t| t.sentence()).chain(
        questions
            .iter()
            .flat_map(|q| std::iter::once(q.stem.clone()).chain(q.candidates.iter().cloned())),
    );
    build_vocab(texts, min_freq, max_size)
}

pub fn gen(cfg: &LoadedConfig, force: bool) -> Result<Outcome> {
    cfg.check_paths()?;
    let layout = Layout::new(&cfg.output_dir);
    require(&layout.kb(), "ingest")?;
    let mut inputs = vec![layout.kb()];
    inputs.extend(dataset_inputs(cfg));
    with_manifest(
        &layout,
        "gen",
        &scoped_snapshot(cfg, &["dataset", "taskgen", "vocab"])?,
        &inputs,
        &[],
        force,
        || {
            let kb = KnowledgeBase::load_cache(&layout.kb())?;
            let completion = gen_completion_examples(&kb, &cfg.config.taskgen)?;
            if completion.collisions > 0 {
                log::warn!(
                    "{} negative(s) equal their positive after resampling",
                    completion.collisions
                );
            }
            save_examples(&layout.completion(), &completion.examples)?;
            let mut outputs = vec![layout.completion()];
            let mut summary = format!("completion: {} pairs\n", completion.examples.len());

            let mut all_questions = Vec::new();
            for d in &cfg.config.datasets {
                for split in Split::ALL {
                    all_questions.extend(questions(cfg, d, split)?);
                }
            }
            if let Some(src) = cfg.config.cloze_source() {
                let cloze = gen_cloze_examples(&questions(cfg, src, Split::Train)?)?;
                save_examples(&layout.cloze(), &cloze)?;
                outputs.push(layout.cloze());
                let _ = writeln!(summary, "cloze ({}): {} pairs", src.tag, cloze.len());
            }
            for d in finetune_targets(cfg) {
                let ft = gen_finetune_examples(&questions(cfg, d, Split::Train)?)?;
                save_examples(&layout.finetune(&d.tag), &ft)?;
                outputs.push(layout.finetune(&d.tag));
                let _ = writeln!(summary, "finetune ({}): {} pairs", d.tag, ft.len());
            }
            let vocab = build_experiment_vocab(
                &kb,
                &all_questions,
                cfg.config.vocab.min_freq,
                cfg.config.vocab.max_size,
            );
            vocab.save(&layout.vocab())?;
            outputs.push(layout.vocab());
            let _ = writeln!(summary, "vocabulary: {} tokens", vocab.len());
            Ok(Outcome {
                up_to_date: false,
                outputs,
                summary,
            })
        },
    )
}

// ---------------------------------------------------------------- train

fn params_fingerprint(p: &ModelParams) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&p.config).expect("serializable"));
    h.update(serde_json::to_vec(&p.lineage).expect("serializable"));
    for v in &p.values {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Reuses a checkpoint on disk when its sidecar key matches.
struct CachedStages<'a> {
    layout: &'a Layout,
    seed: u64,
    force: bool,
    trained: Vec<String>,
    reused: Vec<String>,
}

impl StageRunner for CachedStages<'_> {
    fn run(
        &mut self,
        name: &str,
        start: &ModelParams,
        stage_key: &str,
        train: &mut dyn FnMut() -> Result<(ModelParams, crate::train::TrainingCurve)>,
    ) -> Result<(ModelParams, crate::train::TrainingCurve)> {
        let ckpt = self.layout.checkpoint(self.seed, name);
        let curve_path = self.layout.curve(self.seed, name);
        let key_path = ckpt.with_extension("key");
        let fp = params_fingerprint(start);
        let key = hash_strings([name, stage_key, fp.as_str()]);
        if !self.force && ckpt.exists() && curve_path.exists() {
            if let Ok(old) = std::fs::read_to_string(&key_path) {
                if old.trim() == key {
                    let params = load_checkpoint(&ckpt)?;
                    let text = std::fs::read_to_string(&curve_path).map_err(|e| Error::io(&curve_path, e))?;
                    log::info!("seed {}: reusing {}", self.seed, ckpt.display());
                    self.reused.push(name.to_string());
                    return Ok((params, TrainingCurve::from_csv(&text)?));
                }
            }
        }
        log::info!("seed {}: training {name}", self.seed);
        let (params, curve) = train()?;
        mkdir(&self.layout.seed_dir(self.seed))?;
        save_checkpoint(&params, &ckpt)?;
        curve.write_csv(&curve_path)?;
        write_text(&key_path, &key)?;
        self.trained.push(name.to_string());
        // Continue from the stored f32 weights so a later resume sees the same start.
        Ok((load_checkpoint(&ckpt)?, curve))
    }
}

/// Inputs of a training run: where completion pairs come from and where runs go.
#[derive(Debug, Clone)]
pub struct TrainPlan {
    pub label: ConfigLabel,
    /// Shared artifacts (vocabulary, cloze and fine-tuning pairs).
    pub shared: Layout,
    /// Destination of checkpoints, curves and evaluation reports.
    pub runs: Layout,
    pub completion: PathBuf,
}

impl TrainPlan {
    pub fn main(cfg: &LoadedConfig) -> Result<Self> {
        let layout = Layout::new(&cfg.output_dir);
        Ok(TrainPlan {
            label: cfg.config.label()?,
            completion: layout.completion(),
            shared: layout.clone(),
            runs: layout,
        })
    }

    fn inputs(&self, cfg: &LoadedConfig) -> Vec<PathBuf> {
        let mut v = vec![self.shared.vocab()];
        if self.label.knowledge {
            v.push(self.completion.clone());
        }
        if self.label.cloze {
            v.push(self.shared.cloze());
        }
        if self.label.finetune {
            v.extend(finetune_targets(cfg).iter().map(|d| self.shared.finetune(&d.tag)));
        }
        v
    }
}

pub fn encoder_config(cfg: &LoadedConfig, label: &ConfigLabel, vocab: &Vocabulary) -> Result<EncoderConfig> {
    cfg.config.encoder.resolve(label.size.preset(), vocab.len())
}

pub fn train(cfg: &LoadedConfig, force: bool) -> Result<Outcome> {
    let plan = TrainPlan::main(cfg)?;
    train_plan(cfg, &plan, force)
}

pub fn train_plan(cfg: &LoadedConfig, plan: &TrainPlan, force: bool) -> Result<Outcome> {
    let inputs = plan.inputs(cfg);
    for p in &inputs {
        require(p, "gen")?;
    }
    let label_text = plan.label.to_string();
    let command = format!("train-{}", label_slug(&plan.label));
    with_manifest(
        &plan.runs,
        &command,
        &cfg.snapshot,
        &inputs,
        &[&label_text],
        force,
        || {
            let vocab = Vocabulary::load(&plan.shared.vocab())?;
            let encoder = encoder_config(cfg, &plan.label, &vocab)?;
            let completion = if plan.label.knowledge {
                load_examples(&plan.completion)?
            } else {
                Vec::new()
            };
            let cloze = if plan.label.cloze {
                load_examples(&plan.shared.cloze())?
            } else {
                Vec::new()
            };
            let cloze_dev = match cfg.config.cloze_source() {
                Some(src) => load_split(cfg, src, Split::Dev)?.map(|l| l.questions),
                None => None,
            };
            let mut target_train = Vec::new();
            let mut target_dev = Vec::new();
            if plan.label.finetune {
                for d in finetune_targets(cfg) {
                    target_train.push(load_examples(&plan.shared.finetune(&d.tag))?);
                    target_dev.push(load_split(cfg, d, Split::Dev)?.map(|l| l.questions));
                }
            }
            let targets: Vec<TargetData<'_>> = finetune_targets(cfg)
                .into_iter()
                .zip(&target_train)
                .zip(&target_dev)
                .map(|((d, train), dev)| TargetData {
                    tag: &d.tag,
                    train,
                    dev: dev.as_deref(),
                })
                .collect();
            let data = RecipeData {
                completion: &completion,
                cloze: &cloze,
                cloze_dev: cloze_dev.as_deref(),
                targets,
            };
            let mut outputs = Vec::new();
            let mut summary = String::new();
            for &seed in &cfg.config.seeds {
                let mut runner = CachedStages {
                    layout: &plan.runs,
                    seed,
                    force,
                    trained: Vec::new(),
                    reused: Vec::new(),
                };
                let out = run_recipe(
                    plan.label,
                    &encoder,
                    seed,
                    &data,
                    &cfg.config.stages,
                    &vocab,
                    cfg.config.execution,
                    &mut runner,
                )?;
                for s in &out.stages {
                    outputs.push(plan.runs.checkpoint(seed, &s.name));
                    outputs.push(plan.runs.curve(seed, &s.name));
                    let last = s.curve.records.last();
                    let _ = writeln!(
                        summary,
                        "seed {seed} {:<28} loss {:.4}{}",
                        s.name,
                        last.map_or(f64::NAN, |r| r.mean_loss),
                        last.and_then(|r| r.dev_accuracy)
                            .map(|a| format!("  dev {:.2}", 100.0 * a))
                            .unwrap_or_default()
                    );
                }
                if !runner.reused.is_empty() {
                    let _ = writeln!(summary, "seed {seed}: reused {}", runner.reused.join(", "));
                }
            }
            Ok(Outcome {
                up_to_date: false,
                outputs,
                summary,
            })
        },
    )
}

// ---------------------------------------------------------------- eval

/// Name of the last pre-fine-tuning checkpoint a label produces.
pub fn pretrained_name(label: &ConfigLabel) -> Option<&'static str> {
    match (label.knowledge, label.cloze) {
        (true, true) => Some("theta_kq"),
        (true, false) => Some("theta_k"),
        (false, true) => Some("theta_q"),
        (false, false) => None,
    }
}

fn pretrained_stage(label: &ConfigLabel) -> CheckpointStage {
    match (label.knowledge, label.cloze) {
        (true, true) => CheckpointStage::ThetaKQ,
        (true, false) => CheckpointStage::ThetaK,
        (false, true) => CheckpointStage::ThetaQ,
        (false, false) => CheckpointStage::Init,
    }
}

pub fn eval(cfg: &LoadedConfig, force: bool) -> Result<Outcome> {
    let plan = TrainPlan::main(cfg)?;
    eval_plan(cfg, &plan, force)
}

pub fn eval_plan(cfg: &LoadedConfig, plan: &TrainPlan, force: bool) -> Result<Outcome> {
    cfg.check_paths()?;
    let label = plan.label;
    let targets: Vec<String> = finetune_targets(cfg).iter().map(|d| d.tag.clone()).collect();
    let mut inputs = vec![plan.shared.vocab()];
    for &seed in &cfg.config.seeds {
        if let Some(name) = pretrained_name(&label) {
            inputs.push(plan.runs.checkpoint(seed, name));
        }
        if label.finetune {
            for tag in &targets {
                inputs.push(
                    plan.runs
                        .checkpoint(seed, &finetune_name(tag, pretrained_stage(&label))),
                );
            }
        }
    }
    require(&plan.shared.vocab(), "gen")?;
    for p in &inputs[1..] {
        require(p, "train")?;
    }
    inputs.extend(dataset_inputs(cfg));
    let command = format!("eval-{}", label_slug(&label));
    let out_json = plan.runs.eval_report(&label);
    let out_txt = out_json.with_extension("txt");
    with_manifest(&plan.runs, &command, &cfg.snapshot, &inputs, &[], force, || {
        let vocab = Vocabulary::load(&plan.shared.vocab())?;
        let encoder = encoder_config(cfg, &label, &vocab)?;
        let exec = cfg.config.execution;
        let label_text = label.to_string();
        let mut eval_sets = Vec::new();
        for d in &cfg.config.datasets {
            for split in [Split::Dev, Split::Test] {
                let qs = questions(cfg, d, split)?;
                if !qs.is_empty() {
                    eval_sets.push((d.tag.clone(), qs));
                }
            }
        }
        let reports = repeated_eval(&cfg.config.seeds, |seed| {
            let pretrained = match pretrained_name(&label) {
                Some(name) => load_checkpoint(&plan.runs.checkpoint(seed, name))?,
                None => init_params(&encoder, seed)?,
            };
            let mut runs = Vec::new();
            for (tag, qs) in &eval_sets {
                let model = if label.finetune && targets.contains(tag) {
                    load_checkpoint(&plan.runs.checkpoint(seed, &finetune_name(tag, pretrained.stage())))?
                } else {
                    pretrained.clone()
                };
                runs.push(evaluate(&model, qs, &vocab, encoder.max_len, &label_text, exec)?);
            }
            Ok(runs)
        })?;
        write_json(&out_json, &reports)?;
        let text = render_results_table(&[(label_text.clone(), reports)]);
        write_text(&out_txt, &text)?;
        Ok(Outcome {
            up_to_date: false,
            outputs: vec![out_json.clone(), out_txt.clone()],
            summary: text,
        })
    })
}

// ---------------------------------------------------------------- baseline

pub fn baseline(cfg: &LoadedConfig, force: bool) -> Result<Outcome> {
    cfg.check_paths()?;
    let layout = Layout::new(&cfg.output_dir);
    require(&layout.kb(), "ingest")?;
    let mut inputs = vec![layout.kb()];
    inputs.extend(dataset_inputs(cfg));
    with_manifest(
        &layout,
        "baseline",
        &scoped_snapshot(cfg, &["dataset", "retrieval"])?,
        &inputs,
        &[],
        force,
        || {
            let kb = KnowledgeBase::load_cache(&layout.kb())?;
            let r = cfg.config.retrieval;
            mkdir(&layout.baseline())?;
            let index = Bm25Index::load_or_build(
                &layout.bm25_cache(),
                &kb_sentences(&kb),
                r.k1,
                r.b,
                cfg.config.execution,
            )?;
            let mut reports = Vec::new();
            for d in &cfg.config.datasets {
                for split in [Split::Dev, Split::Test] {
                    let qs = questions(cfg, d, split)?;
                    if qs.is_empty() {
                        continue;
                    }
                    let report = evaluate_with(&qs, "BM25", cfg.config.execution, |q| {
                        Ok(ir_answer(q, &index, &r)?.predicted)
                    })?;
                    reports.push(RepeatedReport::from_runs(vec![0], vec![report])?);
                }
            }
            let json = layout.baseline().join("report.json");
            let txt = layout.baseline().join("report.txt");
            write_json(&json, &reports)?;
            let text = render_results_table(&[("BM25".to_string(), reports)]);
            write_text(&txt, &text)?;
            Ok(Outcome {
                up_to_date: false,
                outputs: vec![layout.bm25_cache(), json, txt],
                summary: text,
            })
        },
    )
}

// ---------------------------------------------------------------- ablate

/// Train and evaluate one ablation cell into its own directory.
pub fn run_cell(
    cfg: &LoadedConfig,
    subset: KnowledgeSubset,
    label: ConfigLabel,
    force: bool,
) -> Result<Vec<RepeatedReport>> {
    let shared = Layout::new(&cfg.output_dir);
    let runs = shared.cell(subset, &label);
    let completion = runs.completion();
    if label.knowledge {
        require(&shared.kb(), "ingest")?;
        let kb = KnowledgeBase::load_cache(&shared.kb())?;
        let restricted = filter_by_category(&kb, &subset.categories());
        let examples = gen_completion_examples(&restricted, &cfg.config.taskgen)?.examples;
        let unchanged = completion.exists() && load_examples(&completion)? == examples;
        if !unchanged {
            save_examples(&completion, &examples)?;
        }
    }
    let plan = TrainPlan {
        label,
        shared,
        runs: runs.clone(),
        completion,
    };
    train_plan(cfg, &plan, force)?;
    eval_plan(cfg, &plan, force)?;
    read_json(&runs.eval_report(&label))
}

fn cell_args(subset: KnowledgeSubset, label: &ConfigLabel) -> Vec<String> {
    vec![
        "--subset".into(),
        subset.to_string(),
        "--label".into(),
        label.to_string(),
    ]
}

/// Run every ablation cell, `jobs` at a time in child processes when `jobs > 1`.
pub fn ablate(cfg: &LoadedConfig, jobs: usize, force: bool) -> Result<Outcome> {
    let layout = Layout::new(&cfg.output_dir);
    require(&layout.kb(), "ingest")?;
    require(&layout.vocab(), "gen")?;
    let size = cfg.config.label()?.size;
    let cells = crate::eval::ablation_cells(size);
    if jobs > 1 {
        let source = cfg
            .source
            .as_ref()
            .ok_or_else(|| Error::Config("parallel ablation needs the configuration to come from a file".into()))?;
        let exe = std::env::current_exe().map_err(|e| Error::io("current executable", e))?;
        let mut pending: Vec<(KnowledgeSubset, ConfigLabel)> = cells.clone();
        pending.reverse();
        let mut running: Vec<(String, std::process::Child)> = Vec::new();
        while !pending.is_empty() || !running.is_empty() {
            while running.len() < jobs {
                let Some((subset, label)) = pending.pop() else { break };
                let mut cmd = std::process::Command::new(&exe);
                cmd.arg("--config").arg(source);
                for o in &cfg.overrides {
                    cmd.arg("--set").arg(o);
                }
                cmd.arg("cell").args(cell_args(subset, &label));
                if force {
                    cmd.arg("--force");
                }
                let name = format!("{subset} {label}");
                log::info!("ablation: starting cell {name}");
                let child = cmd.spawn().map_err(|e| Error::io(&exe, e))?;
                running.push((name, child));
            }
            let (name, mut child) = running.remove(0);
            let status = child.wait().map_err(|e| Error::io(&exe, e))?;
            if !status.success() {
                for (_, mut c) in running {
                    let _ = c.kill();
                }
                return Err(Error::Training(format!("ablation cell `{name}` failed ({status})")));
            }
        }
    }
    let mut table = AblationTable::default();
    for (subset, label) in cells {
        let reports = if jobs > 1 {
            read_json(&layout.cell(subset, &label).eval_report(&label))?
        } else {
            run_cell(cfg, subset, label, force)?
        };
        table.rows.push(AblationRow { subset, label, reports });
    }
    let json = layout.ablation().join("table.json");
    let txt = layout.ablation().join("table.txt");
    write_json(&json, &table)?;
    let text = table.render();
    write_text(&txt, &text)?;
    Ok(Outcome {
        up_to_date: false,
        outputs: vec![json, txt],
        summary: text,
    })
}

// ---------------------------------------------------------------- report

/// A gnuplot script plus one `.dat` per training curve found under `runs/`.
pub fn report(cfg: &LoadedConfig, force: bool) -> Result<Outcome> {
    let layout = Layout::new(&cfg.output_dir);
    let mut curves = Vec::new();
    if layout.runs().is_dir() {
        let mut seeds: Vec<PathBuf> = std::fs::read_dir(layout.runs())
            .map_err(|e| Error::io(layout.runs(), e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        seeds.sort();
        for dir in seeds {
            let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
                .map_err(|e| Error::io(&dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| n.starts_with("curve-") && n.ends_with(".csv"))
                })
                .collect();
            files.sort();
            curves.extend(files);
        }
    }
    if curves.is_empty() {
        return Err(Error::MissingArtifact {
            path: layout.runs().join("seed-*/curve-*.csv"),
            producer: "train".into(),
        });
    }
    with_manifest(&layout, "report", &cfg.snapshot, &curves, &[], force, || {
        let dir = layout.report();
        mkdir(&dir)?;
        let mut outputs = Vec::new();
        let mut series = Vec::new();
        for path in &curves {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let curve = TrainingCurve::from_csv(&text)?;
            let seed = path
                .parent()
                .and_then(|p| p.file_name())
                .and_then(|n| n.to_str())
                .unwrap_or("run");
            let stem = path.file_stem().and_then(|n| n.to_str()).unwrap_or("curve");
            let name = format!("{seed}-{}", stem.trim_start_matches("curve-"));
            let mut dat = String::from("# epoch loss dev_accuracy\n");
            for r in &curve.records {
                let acc = r.dev_accuracy.map_or("NaN".to_string(), |a| format!("{a:.6}"));
                let _ = writeln!(dat, "{} {:.8} {acc}", r.epoch, r.mean_loss);
            }
            let dat_path = dir.join(format!("{name}.dat"));
            write_text(&dat_path, &dat)?;
            outputs.push(dat_path);
            series.push(name);
        }
        let plot = |column: usize| {
            series
                .iter()
                .map(|n| format!("'{n}.dat' using 1:{column} with linespoints title '{n}'"))
                .collect::<Vec<_>>()
                .join(", \\\n     ")
        };
        let gp = format!(
            "set terminal pngcairo size 1200,500\n\
             set output 'curves.png'\n\
             set multiplot layout 1,2\n\
             set xlabel 'epoch'\n\
             set key outside bottom center horizontal\n\
             set ylabel 'mean loss'\n\
             plot {}\n\
             set ylabel 'dev accuracy'\n\
             set yrange [0:1]\n\
             plot {}\n\
             unset multiplot\n",
            plot(2),
            plot(3)
        );
        let gp_path = dir.join("curves.gp");
        write_text(&gp_path, &gp)?;
        outputs.push(gp_path.clone());
        Ok(Outcome {
            up_to_date: false,
            summary: format!(
                "{} curve(s); render with `cd {} && gnuplot curves.gp`",
                series.len(),
                dir.display()
            ),
            outputs,
        })
    })
}

// ---------------------------------------------------------------- synth

/// Experiment settings sized for the synthetic corpus on a single CPU.
pub fn synthetic_experiment_toml(output_dir: &str) -> String {
    format!(
        r#"# Synthetic corpus experiment, sized to run on one CPU core.
output_dir = "{output_dir}"
label = "K+Q tiny FT"
seeds = [0, 1, 2, 3, 4]

[knowledge]
tables = "tables"
categories = "categories.toml"
mapping = "mapping.toml"

[[dataset]]
tag = "{QUESTION_TAG}"
format = "worldtree"
train = "questions/{QUESTION_TAG}-train.tsv"
dev = "questions/{QUESTION_TAG}-dev.tsv"
test = "questions/{QUESTION_TAG}-test.tsv"
cloze_source = true

[[dataset]]
tag = "{TARGET_TAG}"
format = "arc"
train = "questions/{TARGET_TAG}-train.jsonl"
dev = "questions/{TARGET_TAG}-dev.jsonl"
test = "questions/{TARGET_TAG}-test.jsonl"

[encoder]
hidden_size = 32
num_layers = 2
num_heads = 2
feed_forward_size = 64
dropout_rate = 0.0
max_len = 16

[taskgen]
negatives_per_positive = 3
rng_seed = 1

[stages.knowledge]
batch_size = 4
learning_rate = 5e-4
epochs = 100

[stages.cloze]
batch_size = 16
learning_rate = 5e-4
epochs = 10

[stages.finetune]
batch_size = 16
learning_rate = 5e-5
epochs = 40
"#
    )
}

pub fn synth(dir: &Path, seed: u64, output_dir: &str) -> Result<Outcome> {
    let corpus = SyntheticCorpus::generate(seed);
    corpus.write_to(dir)?;
    let cfg_path = dir.join("experiment.toml");
    write_text(&cfg_path, &synthetic_experiment_toml(output_dir))?;
    let mut outputs: Vec<PathBuf> = corpus.files()?.into_iter().map(|(rel, _)| dir.join(rel)).collect();
    outputs.push(cfg_path.clone());
    Ok(Outcome {
        up_to_date: false,
        summary: format!(
            "wrote {} files to {}; run with `nxkt --config {}`",
            outputs.len(),
            dir.display(),
            cfg_path.display()
        ),
        outputs,
    })
}
