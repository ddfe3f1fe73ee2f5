//! Explanation-table ingestion.
//!
//! Tables are tab-separated with a header row. Columns whose header starts
//! with `[SKIP]` carry metadata (the `[SKIP] UID` column supplies the fact id);
//! every other column is content. Each fact is normalized into a
//! subject/predicate/object [`Triple`] through a per-table [`TableMapping`].

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;

const SKIP_PREFIX: &str = "[SKIP]";
const FILL_PREFIX: &str = "[FILL]";
const UID_COLUMN: &str = "[SKIP] UID";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnowledgeCategory {
    #[serde(alias = "ret")]
    Retrieval,
    #[serde(alias = "insupp")]
    InferenceSupporting,
    #[serde(alias = "complex")]
    ComplexInference,
}

impl KnowledgeCategory {
    pub const ALL: [KnowledgeCategory; 3] = [
        KnowledgeCategory::Retrieval,
        KnowledgeCategory::InferenceSupporting,
        KnowledgeCategory::ComplexInference,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            KnowledgeCategory::Retrieval => "retrieval",
            KnowledgeCategory::InferenceSupporting => "inference_supporting",
            KnowledgeCategory::ComplexInference => "complex_inference",
        }
    }
}

impl fmt::Display for KnowledgeCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KnowledgeCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace(['-', ' '], "_").as_str() {
            "retrieval" | "ret" => Ok(KnowledgeCategory::Retrieval),
            "inference_supporting" | "insupp" => Ok(KnowledgeCategory::InferenceSupporting),
            "complex_inference" | "complex" => Ok(KnowledgeCategory::ComplexInference),
            other => Err(Error::Config(format!("unknown knowledge category `{other}`"))),
        }
    }
}

/// One cell of a fact: the header label of its column and the normalized text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub role: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplanatoryFact {
    pub fact_id: String,
    pub table_name: String,
    pub category: KnowledgeCategory,
    pub cells: Vec<Cell>,
}

impl ExplanatoryFact {
    pub fn cell(&self, role: &str) -> Option<&str> {
        self.cells.iter().find(|c| c.role == role).map(|c| c.text.as_str())
    }

    /// All non-empty cell texts joined by single spaces.
    pub fn sentence(&self) -> String {
        join_nonempty(self.cells.iter().map(|c| c.text.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triple {
    pub subject: String,
    pub predicate: String,
    pub object: String,
    pub source_fact_id: String,
}

impl Triple {
    /// Subject, predicate and object joined by single spaces.
    pub fn sentence(&self) -> String {
        join_nonempty([self.subject.as_str(), self.predicate.as_str(), self.object.as_str()])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableMapping {
    #[serde(rename = "name")]
    pub table_name: String,
    #[serde(rename = "subject")]
    pub subject_columns: Vec<String>,
    #[serde(rename = "predicate", default)]
    pub predicate_columns: Vec<String>,
    #[serde(rename = "object")]
    pub object_columns: Vec<String>,
}

impl TableMapping {
    /// First content column → subject, last → object, the rest → predicate.
    pub fn heuristic(table_name: &str, content_columns: &[String]) -> Result<Self> {
        if content_columns.len() < 2 {
            return Err(Error::Config(format!(
                "table `{table_name}` has {} content column(s); the default mapping needs at least 2",
                content_columns.len()
            )));
        }
        let last = content_columns.len() - 1;
        Ok(TableMapping {
            table_name: table_name.to_string(),
            subject_columns: vec![content_columns[0].clone()],
            predicate_columns: content_columns[1..last].to_vec(),
            object_columns: vec![content_columns[last].clone()],
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.subject_columns.is_empty() || self.object_columns.is_empty() {
            return Err(Error::Config(format!(
                "mapping for `{}` needs at least one subject and one object column",
                self.table_name
            )));
        }
        let mut seen = HashSet::new();
        for col in self
            .subject_columns
            .iter()
            .chain(&self.predicate_columns)
            .chain(&self.object_columns)
        {
            if !seen.insert(col) {
                return Err(Error::Config(format!(
                    "mapping for `{}` assigns column `{col}` to more than one role",
                    self.table_name
                )));
            }
        }
        Ok(())
    }
}

/// Contents of a mapping file: explicit per-table column assignments.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingFile {
    #[serde(default, rename = "table")]
    pub tables: Vec<TableMapping>,
}

impl MappingFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        let file: MappingFile = toml::from_str(text).map_err(|e| Error::Config(format!("mapping file: {e}")))?;
        let mut names = HashSet::new();
        for m in &file.tables {
            m.validate()?;
            if !names.insert(&m.table_name) {
                return Err(Error::Config(format!(
                    "mapping file lists table `{}` twice",
                    m.table_name
                )));
            }
        }
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn get(&self, table: &str) -> Option<&TableMapping> {
        self.tables.iter().find(|m| m.table_name == table)
    }
}

/// Table name → knowledge category. Only listed tables are loaded.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryManifest {
    pub tables: BTreeMap<String, KnowledgeCategory>,
}

impl CategoryManifest {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("category manifest: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedTable {
    pub table_name: String,
    /// Header labels in file order (duplicated `[FILL]`/`[SKIP]` labels get a `#n` suffix).
    pub columns: Vec<String>,
    pub facts: Vec<ExplanatoryFact>,
    /// Data rows whose arity did not match the header.
    pub skipped_rows: usize,
}

impl ParsedTable {
    pub fn content_columns(&self) -> Vec<String> {
        self.columns
            .iter()
            .filter(|c| !c.starts_with(SKIP_PREFIX))
            .cloned()
            .collect()
    }
}

/// Lowercase, collapse internal whitespace, strip surrounding punctuation.
pub fn normalize_text(raw: &str) -> String {
    let collapsed = raw.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    collapsed.trim_matches(|c: char| !c.is_alphanumeric()).to_string()
}

fn join_nonempty<'a>(parts: impl IntoIterator<Item = &'a str>) -> String {
    parts
        .into_iter()
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

fn parse_header(table_name: &str, line: &str) -> Result<Vec<String>> {
    let mut columns = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for raw in line.trim_end_matches(['\r', '\n']).split('\t') {
        let name = raw.trim().to_string();
        if name.is_empty() {
            return Err(Error::TableParse {
                table: table_name.to_string(),
                message: format!("empty column name at position {}", columns.len()),
            });
        }
        let n = seen.entry(name.clone()).or_insert(0);
        *n += 1;
        if *n > 1 {
            if name.starts_with(FILL_PREFIX) || name.starts_with(SKIP_PREFIX) {
                columns.push(format!("{name}#{n}"));
                continue;
            }
            return Err(Error::TableParse {
                table: table_name.to_string(),
                message: format!("duplicate column name `{name}`"),
            });
        }
        columns.push(name);
    }
    Ok(columns)
}

/// Parse one explanation table. Rows whose field count differs from the
/// header are skipped and counted; rows with no content text are ignored.
pub fn parse_table(reader: impl BufRead, table_name: &str, category: KnowledgeCategory) -> Result<ParsedTable> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(line) => line.map_err(|e| Error::TableParse {
            table: table_name.to_string(),
            message: e.to_string(),
        })?,
        None => {
            return Err(Error::TableParse {
                table: table_name.to_string(),
                message: "missing header row".into(),
            })
        }
    };
    let header = header.trim_start_matches('\u{feff}');
    let columns = parse_header(table_name, header)?;
    let uid_col = columns.iter().position(|c| c == UID_COLUMN);

    let mut facts = Vec::new();
    let mut skipped_rows = 0;
    let mut ids = HashSet::new();
    for (row_index, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::TableParse {
            table: table_name.to_string(),
            message: e.to_string(),
        })?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != columns.len() {
            skipped_rows += 1;
            log::warn!(
                "table {table_name}: row {} has {} fields, header has {}",
                row_index + 1,
                fields.len(),
                columns.len()
            );
            continue;
        }
        let cells: Vec<Cell> = columns
            .iter()
            .zip(&fields)
            .filter(|(role, _)| !role.starts_with(SKIP_PREFIX))
            .map(|(role, text)| Cell {
                role: role.clone(),
                text: normalize_text(text),
            })
            .collect();
        if cells.iter().all(|c| c.text.is_empty()) {
            continue;
        }
        let mut fact_id = uid_col
            .map(|i| fields[i].trim().to_string())
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| format!("{table_name}#{}", row_index + 1));
        if !ids.insert(fact_id.clone()) {
            fact_id = format!("{fact_id}#{}", row_index + 1);
            ids.insert(fact_id.clone());
        }
        facts.push(ExplanatoryFact {
            fact_id,
            table_name: table_name.to_string(),
            category,
            cells,
        });
    }
    Ok(ParsedTable {
        table_name: table_name.to_string(),
        columns,
        facts,
        skipped_rows,
    })
}

/// Result of mapping a fact: either a triple or a drop for an empty subject/object.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Normalized {
    Triple(Triple),
    Dropped,
}

pub fn normalize_to_triple(fact: &ExplanatoryFact, mapping: &TableMapping) -> Result<Normalized> {
    if mapping.table_name != fact.table_name {
        return Err(Error::Config(format!(
            "mapping for `{}` applied to fact from `{}`",
            mapping.table_name, fact.table_name
        )));
    }
    let join = |columns: &[String]| -> Result<String> {
        let mut parts = Vec::with_capacity(columns.len());
        for col in columns {
            let text = fact.cell(col).ok_or_else(|| {
                Error::Config(format!(
                    "mapping for `{}` references column `{col}` absent from fact {}",
                    mapping.table_name, fact.fact_id
                ))
            })?;
            parts.push(text);
        }
        Ok(join_nonempty(parts))
    };
    let subject = join(&mapping.subject_columns)?;
    let predicate = join(&mapping.predicate_columns)?;
    let object = join(&mapping.object_columns)?;
    if subject.is_empty() || object.is_empty() {
        return Ok(Normalized::Dropped);
    }
    Ok(Normalized::Triple(Triple {
        subject,
        predicate,
        object,
        source_fact_id: fact.fact_id.clone(),
    }))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub retrieval: usize,
    pub inference_supporting: usize,
    pub complex_inference: usize,
}

impl CategoryCounts {
    pub fn get(&self, c: KnowledgeCategory) -> usize {
        match c {
            KnowledgeCategory::Retrieval => self.retrieval,
            KnowledgeCategory::InferenceSupporting => self.inference_supporting,
            KnowledgeCategory::ComplexInference => self.complex_inference,
        }
    }

    fn bump(&mut self, c: KnowledgeCategory) {
        match c {
            KnowledgeCategory::Retrieval => self.retrieval += 1,
            KnowledgeCategory::InferenceSupporting => self.inference_supporting += 1,
            KnowledgeCategory::ComplexInference => self.complex_inference += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.retrieval + self.inference_supporting + self.complex_inference
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    pub facts: Vec<ExplanatoryFact>,
    pub triples: Vec<Triple>,
    pub counts: CategoryCounts,
    /// Facts that produced no triple (empty subject or object).
    pub dropped: usize,
    /// Rows skipped for arity mismatch, per table.
    pub skipped_rows: BTreeMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct KbRecord {
    fact: ExplanatoryFact,
    triple: Option<Triple>,
}

impl KnowledgeBase {
    /// Assemble from facts (already in canonical order) and their triples.
    pub fn from_parts(
        facts: Vec<ExplanatoryFact>,
        triples: Vec<Triple>,
        skipped_rows: BTreeMap<String, usize>,
    ) -> Self {
        let mut counts = CategoryCounts::default();
        for f in &facts {
            counts.bump(f.category);
        }
        let dropped = facts.len() - triples.len();
        KnowledgeBase {
            facts,
            triples,
            counts,
            dropped,
            skipped_rows,
        }
    }

    /// Normalize every fact with the mapping for its table (or the default heuristic).
    pub fn from_tables(tables: Vec<ParsedTable>, mappings: &MappingFile) -> Result<Self> {
        let mut tables = tables;
        tables.sort_by(|a, b| a.table_name.cmp(&b.table_name));
        let mut facts = Vec::new();
        let mut triples = Vec::new();
        let mut skipped = BTreeMap::new();
        let mut ids = HashSet::new();
        for table in tables {
            let mapping = match mappings.get(&table.table_name) {
                Some(m) => m.clone(),
                None => TableMapping::heuristic(&table.table_name, &table.content_columns())?,
            };
            if table.skipped_rows > 0 {
                skipped.insert(table.table_name.clone(), table.skipped_rows);
            }
            for mut fact in table.facts {
                if !ids.insert(fact.fact_id.clone()) {
                    fact.fact_id = format!("{}:{}", fact.table_name, fact.fact_id);
                    if !ids.insert(fact.fact_id.clone()) {
                        return Err(Error::TableParse {
                            table: fact.table_name.clone(),
                            message: format!("duplicate fact id {}", fact.fact_id),
                        });
                    }
                }
                if let Normalized::Triple(t) = normalize_to_triple(&fact, &mapping)? {
                    triples.push(t);
                }
                facts.push(fact);
            }
        }
        Ok(Self::from_parts(facts, triples, skipped))
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    pub fn fact(&self, id: &str) -> Option<&ExplanatoryFact> {
        self.facts.iter().find(|f| f.fact_id == id)
    }

    /// Category of every triple, aligned with `self.triples`.
    pub fn triple_categories(&self) -> Vec<KnowledgeCategory> {
        let by_id: HashMap<&str, KnowledgeCategory> =
            self.facts.iter().map(|f| (f.fact_id.as_str(), f.category)).collect();
        self.triples.iter().map(|t| by_id[t.source_fact_id.as_str()]).collect()
    }

    /// Canonical JSON-lines serialization: one record per fact with its triple (or null).
    pub fn write_jsonl(&self, mut out: impl Write) -> Result<()> {
        let by_id: HashMap<&str, &Triple> = self.triples.iter().map(|t| (t.source_fact_id.as_str(), t)).collect();
        for fact in &self.facts {
            let record = KbRecord {
                fact: fact.clone(),
                triple: by_id.get(fact.fact_id.as_str()).map(|t| (*t).clone()),
            };
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n").map_err(|e| Error::io("<kb>", e))?;
        }
        Ok(())
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_jsonl(reader: impl BufRead) -> Result<Self> {
        let mut facts = Vec::new();
        let mut triples = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<kb>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: KbRecord = serde_json::from_str(&line).map_err(|e| Error::DatasetParse {
                path: "<kb>".into(),
                line: i + 1,
                message: e.to_string(),
            })?;
            facts.push(rec.fact);
            if let Some(t) = rec.triple {
                triples.push(t);
            }
        }
        Ok(Self::from_parts(facts, triples, BTreeMap::new()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_jsonl(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load_cache(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_jsonl(BufReader::new(file))
    }
}

/// Parse every table named in the manifest from `table_dir/<name>.tsv` and
/// normalize the facts into triples.
pub fn load_knowledge_base(
    table_dir: &Path,
    mappings: &MappingFile,
    manifest: &CategoryManifest,
    exec: Execution,
) -> Result<KnowledgeBase> {
    let entries: Vec<(String, KnowledgeCategory)> = manifest.tables.iter().map(|(k, v)| (k.clone(), *v)).collect();
    let missing: Vec<String> = entries
        .iter()
        .filter(|(name, _)| !table_path(table_dir, name).is_file())
        .map(|(name, _)| name.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingTables(missing));
    }
    let parsed = exec.map(&entries, |(name, category)| {
        let path = table_path(table_dir, name);
        let file = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        parse_table(BufReader::new(file), name, *category)
    });
    let tables = parsed.into_iter().collect::<Result<Vec<_>>>()?;
    KnowledgeBase::from_tables(tables, mappings)
}

pub fn table_path(table_dir: &Path, name: &str) -> std::path::PathBuf {
    table_dir.join(format!("{name}.tsv"))
}

/// Restrict a knowledge base to the given categories.
pub fn filter_by_category(kb: &KnowledgeBase, categories: &BTreeSet<KnowledgeCategory>) -> KnowledgeBase {
    let facts: Vec<ExplanatoryFact> = kb
        .facts
        .iter()
        .filter(|f| categories.contains(&f.category))
        .cloned()
        .collect();
    let kept: HashSet<&str> = facts.iter().map(|f| f.fact_id.as_str()).collect();
    let triples = kb
        .triples
        .iter()
        .filter(|t| kept.contains(t.source_fact_id.as_str()))
        .cloned()
        .collect();
    let tables: HashSet<&str> = facts.iter().map(|f| f.table_name.as_str()).collect();
    let skipped = kb
        .skipped_rows
        .iter()
        .filter(|(t, _)| tables.contains(t.as_str()))
        .map(|(t, n)| (t.clone(), *n))
        .collect();
    KnowledgeBase::from_parts(facts, triples, skipped)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds_table() -> &'static str {
        "X\tRELATION\tY\t[SKIP] UID\nice\tis a kind of\tsolid\tf1\n"
    }

    #[test]
    fn single_row_table() {
        let t = parse_table(kinds_table().as_bytes(), "KINDOF", KnowledgeCategory::Retrieval).unwrap();
        assert_eq!(t.facts.len(), 1);
        let f = &t.facts[0];
        assert_eq!(f.fact_id, "f1");
        assert_eq!(f.cells.len(), 3);
        assert_eq!(f.cell("RELATION"), Some("is a kind of"));
    }

    #[test]
    fn header_only_is_empty() {
        let t = parse_table("x\trelation\ty\n".as_bytes(), "T", KnowledgeCategory::Retrieval).unwrap();
        assert!(t.facts.is_empty());
        assert_eq!(t.skipped_rows, 0);
    }

    #[test]
    fn malformed_headers() {
        let err = parse_table("x\t\ty\n".as_bytes(), "BAD", KnowledgeCategory::Retrieval).unwrap_err();
        assert!(err.to_string().contains("BAD"), "{err}");
        let err = parse_table("x\tx\n".as_bytes(), "DUP", KnowledgeCategory::Retrieval).unwrap_err();
        assert!(err.to_string().contains("DUP"), "{err}");
        // repeated filler columns are allowed
        let t = parse_table(
            "x\t[FILL]\ty\t[FILL]\nice\tis\tcold\t.\n".as_bytes(),
            "FILLS",
            KnowledgeCategory::Retrieval,
        )
        .unwrap();
        assert_eq!(t.columns[3], "[FILL]#2");
    }

    #[test]
    fn arity_mismatch_is_skipped() {
        let raw = "x\trel\ty\na\tb\tc\nonly two\tfields\nd\te\tf\n";
        let t = parse_table(raw.as_bytes(), "T", KnowledgeCategory::Retrieval).unwrap();
        assert_eq!(t.facts.len(), 2);
        assert_eq!(t.skipped_rows, 1);
        assert_eq!(t.facts[1].fact_id, "T#3");
    }

    #[test]
    fn text_normalization() {
        assert_eq!(normalize_text("  Ice,  IS\ta kind "), "ice, is a kind");
        assert_eq!(normalize_text("\"solid.\""), "solid");
        assert_eq!(normalize_text("..."), "");
    }

    #[test]
    fn identity_mapping_triple() {
        let t = parse_table(kinds_table().as_bytes(), "KINDOF", KnowledgeCategory::Retrieval).unwrap();
        let m = TableMapping::heuristic("KINDOF", &t.content_columns()).unwrap();
        let got = normalize_to_triple(&t.facts[0], &m).unwrap();
        assert_eq!(
            got,
            Normalized::Triple(Triple {
                subject: "ice".into(),
                predicate: "is a kind of".into(),
                object: "solid".into(),
                source_fact_id: "f1".into(),
            })
        );
    }

    #[test]
    fn empty_object_drops() {
        let raw = "x\trel\ty\nice\tis a kind of\t\n";
        let t = parse_table(raw.as_bytes(), "T", KnowledgeCategory::Retrieval).unwrap();
        let m = TableMapping::heuristic("T", &t.content_columns()).unwrap();
        assert_eq!(normalize_to_triple(&t.facts[0], &m).unwrap(), Normalized::Dropped);
    }

    #[test]
    fn multi_column_subject_joins_with_single_spaces() {
        let raw = "det\tnoun\trel\ty\na \trock\tis made of\tminerals\n";
        let t = parse_table(raw.as_bytes(), "T", KnowledgeCategory::Retrieval).unwrap();
        let m = TableMapping {
            table_name: "T".into(),
            subject_columns: vec!["det".into(), "noun".into()],
            predicate_columns: vec!["rel".into()],
            object_columns: vec!["y".into()],
        };
        match normalize_to_triple(&t.facts[0], &m).unwrap() {
            Normalized::Triple(tr) => assert_eq!(tr.subject, "a rock"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_column_is_config_error() {
        let t = parse_table(kinds_table().as_bytes(), "KINDOF", KnowledgeCategory::Retrieval).unwrap();
        let m = TableMapping {
            table_name: "KINDOF".into(),
            subject_columns: vec!["NOPE".into()],
            predicate_columns: vec![],
            object_columns: vec!["Y".into()],
        };
        assert!(matches!(normalize_to_triple(&t.facts[0], &m), Err(Error::Config(_))));
    }

    #[test]
    fn mapping_file_rejects_overlap() {
        let bad = r#"
[[table]]
name = "T"
subject = ["a"]
predicate = ["a"]
object = ["b"]
"#;
        assert!(MappingFile::from_toml(bad).is_err());
        let good = r#"
[[table]]
name = "T"
subject = ["a"]
object = ["b"]
"#;
        let f = MappingFile::from_toml(good).unwrap();
        assert!(f.get("T").unwrap().predicate_columns.is_empty());
    }

    #[test]
    fn missing_tables_listed() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("A.tsv"), kinds_table()).unwrap();
        let manifest =
            CategoryManifest::from_toml("[tables]\nA = \"retrieval\"\nB = \"complex_inference\"\nC = \"insupp\"\n")
                .unwrap();
        let err =
            load_knowledge_base(dir.path(), &MappingFile::default(), &manifest, Execution::Sequential).unwrap_err();
        match err {
            Error::MissingTables(names) => assert_eq!(names, vec!["B", "C"]),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn filter_identity_and_empty() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("A.tsv"), kinds_table()).unwrap();
        std::fs::write(dir.path().join("B.tsv"), "x\tr\ty\nsun\tcauses\theat\n").unwrap();
        let manifest = CategoryManifest::from_toml("[tables]\nA = \"retrieval\"\nB = \"complex_inference\"\n").unwrap();
        let kb = load_knowledge_base(dir.path(), &MappingFile::default(), &manifest, Execution::Parallel).unwrap();
        assert_eq!(kb.counts.total(), 2);
        let all: BTreeSet<_> = KnowledgeCategory::ALL.into_iter().collect();
        assert_eq!(filter_by_category(&kb, &all), kb);
        let none = filter_by_category(&kb, &BTreeSet::new());
        assert!(none.is_empty() && none.triples.is_empty());
        let ret = filter_by_category(&kb, &[KnowledgeCategory::Retrieval].into_iter().collect());
        assert_eq!(ret.counts.retrieval, 1);
        assert_eq!(ret.triples[0].subject, "ice");
    }

    #[test]
    fn jsonl_round_trip() {
        let t = parse_table(kinds_table().as_bytes(), "KINDOF", KnowledgeCategory::Retrieval).unwrap();
        let kb = KnowledgeBase::from_tables(vec![t], &MappingFile::default()).unwrap();
        let text = kb.to_jsonl_string();
        let back = KnowledgeBase::read_jsonl(text.as_bytes()).unwrap();
        assert_eq!(back.facts, kb.facts);
        assert_eq!(back.triples, kb.triples);
        assert_eq!(back.to_jsonl_string(), text);
    }
}
