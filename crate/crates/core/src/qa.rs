//! Multiple-choice QA dataset loaders.
//!
//! WorldTree questions come as TSV with the choices embedded in the question
//! string (`... (A) ice (B) steam`); ARC and OpenBookQA come as JSON lines.
//! Both load into [`MultipleChoiceQuestion`].

use std::fmt::{self, Write as _};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_CANDIDATES: usize = 2;
pub const MAX_CANDIDATES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "dev" | "valid" | "validation" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultipleChoiceQuestion {
    pub question_id: String,
    pub stem: String,
    pub candidates: Vec<String>,
    pub gold_index: Option<usize>,
    pub dataset_tag: String,
    pub split: Split,
}

impl MultipleChoiceQuestion {
    pub fn gold(&self) -> Option<&str> {
        self.gold_index.map(|i| self.candidates[i].as_str())
    }
}

/// Questions read from one file plus the number of records skipped.
#[derive(Debug, Clone, Default)]
pub struct LoadedQuestions {
    pub questions: Vec<MultipleChoiceQuestion>,
    pub skipped: usize,
}

fn clean(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Map an answer key (`A`–`E` or `1`–`5`) to a 0-based index.
pub fn answer_key_index(key: &str) -> Option<usize> {
    let key = key.trim();
    let mut chars = key.chars();
    let c = chars.next()?;
    if chars.next().is_some() {
        return None;
    }
    match c {
        'A'..='Z' => Some(c as usize - 'A' as usize),
        'a'..='z' => Some(c as usize - 'a' as usize),
        '1'..='9' => Some(c as usize - '1' as usize),
        _ => None,
    }
}

/// Split `"stem (A) x (B) y"` into the stem and its candidates. Letter markers
/// are tried first, then numeric `(1)`, `(2)`, ...
pub fn split_choices(text: &str) -> Option<(String, Vec<String>)> {
    const LETTERS: [&str; 8] = ["(A)", "(B)", "(C)", "(D)", "(E)", "(F)", "(G)", "(H)"];
    const DIGITS: [&str; 8] = ["(1)", "(2)", "(3)", "(4)", "(5)", "(6)", "(7)", "(8)"];
    for markers in [LETTERS, DIGITS] {
        let Some(first) = text.find(markers[0]) else {
            continue;
        };
        let mut bounds = vec![first];
        let mut cursor = first + markers[0].len();
        for m in &markers[1..] {
            match text[cursor..].find(m) {
                Some(off) => {
                    bounds.push(cursor + off);
                    cursor += off + m.len();
                }
                None => break,
            }
        }
        if bounds.len() < 2 {
            continue;
        }
        let stem = text[..first].trim().to_string();
        let mut candidates = Vec::with_capacity(bounds.len());
        for (i, &start) in bounds.iter().enumerate() {
            let begin = start + markers[i].len();
            let end = bounds.get(i + 1).copied().unwrap_or(text.len());
            candidates.push(text[begin..end].trim().to_string());
        }
        return Some((stem, candidates));
    }
    None
}

fn unquote(field: &str) -> String {
    let f = field.trim();
    if f.len() >= 2 && f.starts_with('"') && f.ends_with('"') {
        f[1..f.len() - 1].replace("\"\"", "\"")
    } else {
        f.to_string()
    }
}

/// Load a WorldTree question TSV. Columns are located by header name
/// (`QuestionID`, `AnswerKey`, `question`, case-insensitive).
pub fn load_worldtree_questions(path: &Path, split: Split, tag: &str) -> Result<LoadedQuestions> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_worldtree_questions(BufReader::new(file), path, split, tag)
}

pub fn read_worldtree_questions(reader: impl BufRead, path: &Path, split: Split, tag: &str) -> Result<LoadedQuestions> {
    let err = |line: usize, message: String| Error::DatasetParse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| err(1, "empty file".into()))?
        .map_err(|e| Error::io(path, e))?;
    let columns: Vec<String> = header
        .trim_start_matches('\u{feff}')
        .split('\t')
        .map(|c| unquote(c).to_ascii_lowercase())
        .collect();
    let find = |name: &str| columns.iter().position(|c| c == name);
    let id_col = find("questionid").ok_or_else(|| err(1, "no QuestionID column".into()))?;
    let key_col = find("answerkey").ok_or_else(|| err(1, "no AnswerKey column".into()))?;
    let q_col = find("question").ok_or_else(|| err(1, "no question column".into()))?;

    let mut out = LoadedQuestions::default();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let get = |c: usize| fields.get(c).map(|f| unquote(f)).unwrap_or_default();
        let id = get(id_col);
        let Some((stem, candidates)) = split_choices(&get(q_col)) else {
            log::warn!("{}:{line_no}: unparseable choice markers in {id}", path.display());
            out.skipped += 1;
            continue;
        };
        let key = get(key_col);
        let gold_index = if key.is_empty() {
            if split != Split::Test {
                return Err(err(line_no, format!("question {id} has no answer key")));
            }
            None
        } else {
            match answer_key_index(&key) {
                Some(g) if g < candidates.len() => Some(g),
                _ => {
                    log::warn!("{}:{line_no}: bad answer key `{key}` for {id}", path.display());
                    out.skipped += 1;
                    continue;
                }
            }
        };
        if !(MIN_CANDIDATES..=MAX_CANDIDATES).contains(&candidates.len()) {
            log::warn!("{}:{line_no}: {id} has {} candidates", path.display(), candidates.len());
            out.skipped += 1;
            continue;
        }
        out.questions.push(MultipleChoiceQuestion {
            question_id: id,
            stem: clean(&stem),
            candidates: candidates.iter().map(|c| clean(c)).collect(),
            gold_index,
            dataset_tag: tag.to_string(),
            split,
        });
    }
    Ok(out)
}

#[derive(Debug, Deserialize, Serialize)]
struct JsonChoice {
    text: String,
    label: String,
}

#[derive(Debug, Deserialize, Serialize)]
struct JsonStem {
    stem: String,
    choices: Vec<JsonChoice>,
}

#[derive(Debug, Deserialize, Serialize)]
struct JsonQuestion {
    id: String,
    question: JsonStem,
    #[serde(rename = "answerKey", default)]
    answer_key: Option<String>,
}

/// Load an ARC or OpenBookQA JSON-lines file.
pub fn load_arc_or_openbook(path: &Path, split: Split, tag: &str) -> Result<LoadedQuestions> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_arc_or_openbook(BufReader::new(file), path, split, tag)
}

pub fn read_arc_or_openbook(reader: impl BufRead, path: &Path, split: Split, tag: &str) -> Result<LoadedQuestions> {
    let mut out = LoadedQuestions::default();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let q: JsonQuestion = serde_json::from_str(&line).map_err(|e| Error::DatasetParse {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        let n = q.question.choices.len();
        if !(MIN_CANDIDATES..=MAX_CANDIDATES).contains(&n) {
            log::warn!("{}:{line_no}: {} has {n} candidates", path.display(), q.id);
            out.skipped += 1;
            continue;
        }
        let key = q.answer_key.as_deref().map(str::trim).filter(|k| !k.is_empty());
        let gold_index = match key {
            None if split == Split::Test => None,
            None => {
                return Err(Error::DatasetParse {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: format!("question {} has no answer key", q.id),
                })
            }
            Some(k) => {
                let by_label = q.question.choices.iter().position(|c| c.label.trim() == k);
                match by_label.or_else(|| answer_key_index(k)) {
                    Some(g) if g < n => Some(g),
                    _ => {
                        log::warn!("{}:{line_no}: bad answer key `{k}`", path.display());
                        out.skipped += 1;
                        continue;
                    }
                }
            }
        };
        out.questions.push(MultipleChoiceQuestion {
            question_id: q.id,
            stem: clean(&q.question.stem),
            candidates: q.question.choices.iter().map(|c| clean(&c.text)).collect(),
            gold_index,
            dataset_tag: tag.to_string(),
            split,
        });
    }
    Ok(out)
}

/// Write questions in the WorldTree TSV layout (used for the synthetic corpus).
pub fn write_worldtree_questions(questions: &[MultipleChoiceQuestion], mut out: impl Write) -> Result<()> {
    let io = |e| Error::io("<questions>", e);
    writeln!(out, "QuestionID\tAnswerKey\tquestion").map_err(io)?;
    for q in questions {
        let mut text = q.stem.clone();
        for (i, c) in q.candidates.iter().enumerate() {
            write!(text, " ({}) {c}", (b'A' + i as u8) as char).expect("string write");
        }
        let key = q
            .gold_index
            .map(|g| ((b'A' + g as u8) as char).to_string())
            .unwrap_or_default();
        writeln!(out, "{}\t{key}\t{text}", q.question_id).map_err(io)?;
    }
    Ok(())
}

/// Write questions in the ARC JSON-lines layout (used for the synthetic corpus).
pub fn write_arc_jsonl(questions: &[MultipleChoiceQuestion], mut out: impl Write) -> Result<()> {
    for q in questions {
        let record = JsonQuestion {
            id: q.question_id.clone(),
            question: JsonStem {
                stem: q.stem.clone(),
                choices: q
                    .candidates
                    .iter()
                    .enumerate()
                    .map(|(i, c)| JsonChoice {
                        text: c.clone(),
                        label: ((b'A' + i as u8) as char).to_string(),
                    })
                    .collect(),
            },
            answer_key: q.gold_index.map(|g| ((b'A' + g as u8) as char).to_string()),
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n").map_err(|e| Error::io("<questions>", e))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

impl DatasetStats {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Dev => self.dev,
            Split::Test => self.test,
        }
    }
}

pub fn dataset_stats(questions: &[MultipleChoiceQuestion]) -> DatasetStats {
    let mut s = DatasetStats::default();
    for q in questions {
        match q.split {
            Split::Train => s.train += 1,
            Split::Dev => s.dev += 1,
            Split::Test => s.test += 1,
        }
    }
    s
}

/// Plain-text table with one row per dataset: `Dataset  #Train  #Dev  #Test`.
pub fn render_stats_table(rows: &[(String, DatasetStats)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(7);
    let mut s = format!(
        "{:<width$}  {:>8}  {:>8}  {:>8}\n",
        "Dataset", "#Train", "#Dev", "#Test"
    );
    for (name, st) in rows {
        let _ = writeln!(s, "{name:<width$}  {:>8}  {:>8}  {:>8}", st.train, st.dev, st.test);
    }
    s
}
