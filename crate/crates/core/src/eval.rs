//! Multiple-choice answering, accuracy reports, seed repetition, and the
//! knowledge-category ablation matrix.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoding::{encode_pair, Vocabulary};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::kb::{filter_by_category, KnowledgeBase, KnowledgeCategory};
use crate::model::{score_pair, ModelParams, Preset};
use crate::qa::{MultipleChoiceQuestion, Split, MIN_CANDIDATES};

/// Index of the highest score, lowest index on ties. Non-finite or NaN
/// scores never win; `None` when no score is usable.
pub fn select_answer(scores: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        if s.is_nan() || s == f64::NEG_INFINITY {
            continue;
        }
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

/// Model score of every candidate; candidates that fail to encode score −∞.
pub fn candidate_scores(
    params: &ModelParams,
    question: &MultipleChoiceQuestion,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<Vec<f64>> {
    question
        .candidates
        .iter()
        .map(|c| match encode_pair(&question.stem, c, vocab, max_len) {
            Ok(seq) => score_pair(params, &seq),
            Err(e) => {
                log::warn!("question {}: candidate `{c}` not scored: {e}", question.question_id);
                Ok(f64::NEG_INFINITY)
            }
        })
        .collect()
}

pub fn answer_question(
    params: &ModelParams,
    question: &MultipleChoiceQuestion,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<usize> {
    if question.candidates.len() < MIN_CANDIDATES {
        return Err(Error::Evaluation(format!(
            "question {} has fewer than {MIN_CANDIDATES} candidates",
            question.question_id
        )));
    }
    let scores = candidate_scores(params, question, vocab, max_len)?;
    select_answer(&scores).ok_or_else(|| {
        Error::Evaluation(format!(
            "no candidate of question {} could be scored",
            question.question_id
        ))
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub question_id: String,
    pub predicted: usize,
    pub gold: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset_tag: String,
    pub split: Split,
    pub config_label: String,
    /// Correct over questions with a gold answer.
    pub accuracy: f64,
    pub correct: usize,
    pub with_gold: usize,
    pub predictions: Vec<Prediction>,
}

impl EvalReport {
    /// Build a report from predicted indices aligned with `questions`.
    pub fn from_predictions(questions: &[MultipleChoiceQuestion], predicted: &[usize], config_label: &str) -> Self {
        assert_eq!(questions.len(), predicted.len());
        let predictions: Vec<Prediction> = questions
            .iter()
            .zip(predicted)
            .map(|(q, &p)| Prediction {
                question_id: q.question_id.clone(),
                predicted: p,
                gold: q.gold_index,
            })
            .collect();
        let with_gold = predictions.iter().filter(|p| p.gold.is_some()).count();
        let correct = predictions.iter().filter(|p| p.gold == Some(p.predicted)).count();
        EvalReport {
            dataset_tag: questions.first().map(|q| q.dataset_tag.clone()).unwrap_or_default(),
            split: questions.first().map(|q| q.split).unwrap_or(Split::Dev),
            config_label: config_label.to_string(),
            accuracy: if with_gold == 0 {
                0.0
            } else {
                correct as f64 / with_gold as f64
            },
            correct,
            with_gold,
            predictions,
        }
    }
}

/// Answer every question with an arbitrary chooser (model, BM25, test doubles).
pub fn evaluate_with<F>(
    questions: &[MultipleChoiceQuestion],
    config_label: &str,
    exec: Execution,
    choose: F,
) -> Result<EvalReport>
where
    F: Fn(&MultipleChoiceQuestion) -> Result<usize> + Sync + Send,
{
    let predicted = exec.map(questions, &choose).into_iter().collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_predictions(questions, &predicted, config_label))
}

pub fn evaluate(
    params: &ModelParams,
    questions: &[MultipleChoiceQuestion],
    vocab: &Vocabulary,
    max_len: usize,
    config_label: &str,
    exec: Execution,
) -> Result<EvalReport> {
    evaluate_with(questions, config_label, exec, |q| {
        answer_question(params, q, vocab, max_len)
    })
}

/// Mean and sample standard deviation (absent for fewer than two values).
pub fn mean_and_std(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, None);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, Some(var.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatedReport {
    pub dataset_tag: String,
    pub split: Split,
    pub config_label: String,
    pub seeds: Vec<u64>,
    pub runs: Vec<EvalReport>,
    pub mean: f64,
    pub std_dev: Option<f64>,
}

impl RepeatedReport {
    pub fn from_runs(seeds: Vec<u64>, runs: Vec<EvalReport>) -> Result<Self> {
        let first = runs
            .first()
            .ok_or_else(|| Error::Evaluation("no runs to aggregate".into()))?;
        if runs
            .iter()
            .any(|r| r.dataset_tag != first.dataset_tag || r.split != first.split)
        {
            return Err(Error::Evaluation("runs cover different datasets or splits".into()));
        }
        let acc: Vec<f64> = runs.iter().map(|r| r.accuracy).collect();
        let (mean, std_dev) = mean_and_std(&acc);
        Ok(RepeatedReport {
            dataset_tag: first.dataset_tag.clone(),
            split: first.split,
            config_label: first.config_label.clone(),
            seeds,
            runs,
            mean,
            std_dev,
        })
    }
}

/// Seeds `base, base+1, …` for `n_runs` repetitions.
pub fn run_seeds(base: u64, n_runs: usize) -> Vec<u64> {
    (0..n_runs as u64).map(|i| base.wrapping_add(i)).collect()
}

/// Run `recipe` once per seed; each run returns one report per evaluated
/// (dataset, split), always in the same order. Reports are aggregated per position.
pub fn repeated_eval<F>(seeds: &[u64], mut recipe: F) -> Result<Vec<RepeatedReport>>
where
    F: FnMut(u64) -> Result<Vec<EvalReport>>,
{
    let mut per_run = Vec::with_capacity(seeds.len());
    for &s in seeds {
        per_run.push(recipe(s)?);
    }
    let width = per_run.first().map_or(0, Vec::len);
    if per_run.iter().any(|r| r.len() != width) {
        return Err(Error::Evaluation("runs returned different numbers of reports".into()));
    }
    (0..width)
        .map(|j| RepeatedReport::from_runs(seeds.to_vec(), per_run.iter().map(|r| r[j].clone()).collect()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelSize {
    Tiny,
    Base,
    Large,
}

impl ModelSize {
    pub fn preset(self) -> Preset {
        match self {
            ModelSize::Tiny => Preset::Tiny,
            ModelSize::Base => Preset::Small,
            ModelSize::Large => Preset::Medium,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            ModelSize::Tiny => "tiny",
            ModelSize::Base => "base",
            ModelSize::Large => "large",
        }
    }
}

/// Which stages a configuration runs, e.g. `K+Q base FT`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ConfigLabel {
    pub knowledge: bool,
    pub cloze: bool,
    pub finetune: bool,
    pub size: ModelSize,
}

impl ConfigLabel {
    pub const fn new(knowledge: bool, cloze: bool, finetune: bool, size: ModelSize) -> Self {
        ConfigLabel {
            knowledge,
            cloze,
            finetune,
            size,
        }
    }

    pub fn stages(&self) -> &'static str {
        match (self.knowledge, self.cloze) {
            (true, true) => "K+Q",
            (true, false) => "K",
            (false, true) => "Q",
            (false, false) => "",
        }
    }
}

impl fmt::Display for ConfigLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if !self.stages().is_empty() {
            parts.push(self.stages());
        }
        parts.push(self.size.as_str());
        if self.finetune {
            parts.push("FT");
        }
        f.write_str(&parts.join(" "))
    }
}

impl FromStr for ConfigLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut label = ConfigLabel::new(false, false, false, ModelSize::Base);
        let mut any = false;
        for tok in s
            .split(|c: char| c.is_whitespace() || c == ',' || c == '_')
            .filter(|t| !t.is_empty())
        {
            any = true;
            match tok.to_ascii_lowercase().as_str() {
                "k" => label.knowledge = true,
                "q" => label.cloze = true,
                "k+q" => {
                    label.knowledge = true;
                    label.cloze = true;
                }
                "ft" => label.finetune = true,
                "tiny" => label.size = ModelSize::Tiny,
                "base" | "small" => label.size = ModelSize::Base,
                "large" | "medium" => label.size = ModelSize::Large,
                other => return Err(Error::Config(format!("unknown config label part `{other}`"))),
            }
        }
        if !any {
            return Err(Error::Config("empty config label".into()));
        }
        if !(label.knowledge || label.cloze || label.finetune) {
            return Err(Error::Config(format!("config label `{s}` enables no training stage")));
        }
        Ok(label)
    }
}

/// Knowledge available to the θ_K stage of an ablation cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnowledgeSubset {
    None,
    Only(KnowledgeCategory),
    All,
}

impl KnowledgeSubset {
    pub fn categories(self) -> BTreeSet<KnowledgeCategory> {
        match self {
            KnowledgeSubset::None => BTreeSet::new(),
            KnowledgeSubset::Only(c) => BTreeSet::from([c]),
            KnowledgeSubset::All => KnowledgeCategory::ALL.into_iter().collect(),
        }
    }
}

impl fmt::Display for KnowledgeSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KnowledgeSubset::None => f.write_str("None"),
            KnowledgeSubset::Only(KnowledgeCategory::Retrieval) => f.write_str("Ret"),
            KnowledgeSubset::Only(KnowledgeCategory::InferenceSupporting) => f.write_str("InSupp"),
            KnowledgeSubset::Only(KnowledgeCategory::ComplexInference) => f.write_str("Complex"),
            KnowledgeSubset::All => f.write_str("All"),
        }
    }
}

impl FromStr for KnowledgeSubset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(KnowledgeSubset::None),
            "all" => Ok(KnowledgeSubset::All),
            other => other.parse().map(KnowledgeSubset::Only),
        }
    }
}

/// The ablation rows: `None × Q`, then every category subset × {K, K+Q}.
pub fn ablation_cells(size: ModelSize) -> Vec<(KnowledgeSubset, ConfigLabel)> {
    let mut cells = vec![(KnowledgeSubset::None, ConfigLabel::new(false, true, false, size))];
    let subsets = KnowledgeCategory::ALL
        .into_iter()
        .map(KnowledgeSubset::Only)
        .chain([KnowledgeSubset::All]);
    for subset in subsets {
        cells.push((subset, ConfigLabel::new(true, false, false, size)));
        cells.push((subset, ConfigLabel::new(true, true, false, size)));
    }
    cells
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub subset: KnowledgeSubset,
    pub label: ConfigLabel,
    pub reports: Vec<RepeatedReport>,
}

impl AblationRow {
    pub fn row_label(&self) -> String {
        format!("{} {}", self.subset, self.label)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn render(&self) -> String {
        let rows: Vec<(String, Vec<RepeatedReport>)> =
            self.rows.iter().map(|r| (r.row_label(), r.reports.clone())).collect();
        render_results_table(&rows)
    }
}

/// Run `run_cell` on every ablation cell with the KB restricted to the cell's
/// categories (`None` for the Q-only row).
pub fn ablation_matrix<F>(kb: &KnowledgeBase, size: ModelSize, mut run_cell: F) -> Result<AblationTable>
where
    F: FnMut(Option<&KnowledgeBase>, ConfigLabel) -> Result<Vec<RepeatedReport>>,
{
    let mut table = AblationTable::default();
    for (subset, label) in ablation_cells(size) {
        let reports = if subset == KnowledgeSubset::None {
            run_cell(None, label)?
        } else {
            let restricted = filter_by_category(kb, &subset.categories());
            run_cell(Some(&restricted), label)?
        };
        table.rows.push(AblationRow { subset, label, reports });
    }
    Ok(table)
}

fn cell_text(r: &RepeatedReport) -> String {
    match r.std_dev {
        Some(sd) => format!("{:.2} ± {:.2}", 100.0 * r.mean, 100.0 * sd),
        None => format!("{:.2}", 100.0 * r.mean),
    }
}

/// Plain-text accuracy table: one row per label, a Dev and Test column per dataset.
pub fn render_results_table(rows: &[(String, Vec<RepeatedReport>)]) -> String {
    let mut datasets: Vec<String> = Vec::new();
    for (_, reps) in rows {
        for r in reps {
            if !datasets.contains(&r.dataset_tag) {
                datasets.push(r.dataset_tag.clone());
            }
        }
    }
    let mut columns: Vec<(String, Split)> = Vec::new();
    for d in &datasets {
        for s in [Split::Dev, Split::Test] {
            if rows
                .iter()
                .any(|(_, reps)| reps.iter().any(|r| &r.dataset_tag == d && r.split == s))
            {
                columns.push((d.clone(), s));
            }
        }
    }
    let mut grid: Vec<Vec<String>> = Vec::new();
    let mut header = vec![String::from("Config")];
    header.extend(
        columns
            .iter()
            .map(|(d, s)| format!("{d} {}", if *s == Split::Dev { "Dev" } else { "Test" })),
    );
    grid.push(header);
    for (label, reps) in rows {
        let mut line = vec![label.clone()];
        for (d, s) in &columns {
            line.push(
                reps.iter()
                    .find(|r| &r.dataset_tag == d && r.split == *s)
                    .map(cell_text)
                    .unwrap_or_else(|| "-".into()),
            );
        }
        grid.push(line);
    }
    let widths: Vec<usize> = (0..grid[0].len())
        .map(|c| grid.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in grid.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (t, w))| {
                let pad = w - t.chars().count();
                if c == 0 {
                    format!("{t}{}", " ".repeat(pad))
                } else {
                    format!("{}{t}", " ".repeat(pad))
                }
            })
            .collect();
        let _ = writeln!(out, "{}", cells.join(" | ").trim_end());
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            let _ = writeln!(out, "{}", rule.join("-+-"));
        }
    }
    out
}
