//! Experiment configuration file.
//!
//! Data paths are resolved against the data root: `$NXKT_DATA_ROOT` when set,
//! else `data_root` from the file (relative to the file), else the directory
//! holding the file. The output directory is resolved against the current
//! working directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bm25::RetrievalConfig;
use crate::encoding::DEFAULT_MAX_LEN;
use crate::error::{Error, Result};
use crate::eval::ConfigLabel;
use crate::exec::Execution;
use crate::model::{EncoderConfig, Preset};
use crate::taskgen::TaskGenConfig;
use crate::train::Hyperparams;

pub const DATA_ROOT_ENV: &str = "NXKT_DATA_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    /// Tab-separated, choices inline in the question text.
    Worldtree,
    /// JSON lines with `question.stem` / `question.choices` / `answerKey`.
    Arc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub tag: String,
    pub format: DatasetFormat,
    #[serde(default)]
    pub train: Option<PathBuf>,
    #[serde(default)]
    pub dev: Option<PathBuf>,
    #[serde(default)]
    pub test: Option<PathBuf>,
    /// Whether this dataset's training split feeds the cloze QA stage.
    #[serde(default)]
    pub cloze_source: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnowledgeSpec {
    /// Directory holding `<TABLE>.tsv` files.
    pub tables: PathBuf,
    /// Table → category manifest.
    pub categories: PathBuf,
    /// Optional explicit column mapping; unmapped tables use the positional default.
    #[serde(default)]
    pub mapping: Option<PathBuf>,
}

/// Encoder size: a preset with optional per-field overrides.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSpec {
    /// Defaults to the size named in the config label.
    pub preset: Option<Preset>,
    pub hidden_size: Option<usize>,
    pub num_layers: Option<usize>,
    pub num_heads: Option<usize>,
    pub feed_forward_size: Option<usize>,
    pub dropout_rate: Option<f64>,
    pub max_len: Option<usize>,
}

impl EncoderSpec {
    pub fn max_len(&self) -> usize {
        self.max_len.unwrap_or(DEFAULT_MAX_LEN)
    }

    pub fn resolve(&self, fallback: Preset, vocab_size: usize) -> Result<EncoderConfig> {
        let base = self.preset.unwrap_or(fallback).config(vocab_size, self.max_len());
        let cfg = EncoderConfig {
            hidden_size: self.hidden_size.unwrap_or(base.hidden_size),
            num_layers: self.num_layers.unwrap_or(base.num_layers),
            num_heads: self.num_heads.unwrap_or(base.num_heads),
            feed_forward_size: self.feed_forward_size.unwrap_or(base.feed_forward_size),
            dropout_rate: self.dropout_rate.unwrap_or(base.dropout_rate),
            ..base
        };
        cfg.validate().map_err(|e| at("encoder", e))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabSpec {
    pub min_freq: usize,
    pub max_size: usize,
}

impl Default for VocabSpec {
    fn default() -> Self {
        VocabSpec {
            min_freq: 1,
            max_size: 30_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageSettings {
    pub knowledge: Hyperparams,
    pub cloze: Hyperparams,
    pub finetune: Hyperparams,
}

impl Default for StageSettings {
    fn default() -> Self {
        StageSettings {
            knowledge: Hyperparams::default(),
            cloze: Hyperparams::default(),
            finetune: Hyperparams::fine_tuning(),
        }
    }
}

fn default_label() -> String {
    "K+Q base".into()
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    #[serde(default)]
    pub data_root: Option<PathBuf>,
    #[serde(default = "default_label")]
    pub label: String,
    /// Initialization seeds, one run each.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub execution: Execution,
    pub knowledge: KnowledgeSpec,
    #[serde(default, rename = "dataset")]
    pub datasets: Vec<DatasetSpec>,
    #[serde(default)]
    pub encoder: EncoderSpec,
    #[serde(default)]
    pub vocab: VocabSpec,
    #[serde(default)]
    pub taskgen: TaskGenConfig,
    #[serde(default)]
    pub stages: StageSettings,
    #[serde(default)]
    pub retrieval: RetrievalConfig,
}

/// A parsed config with its paths resolved.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    /// Effective TOML after overrides, stored in run manifests.
    pub snapshot: String,
    pub data_root: PathBuf,
    pub output_dir: PathBuf,
    /// Where the config came from, for re-invoking subcommands.
    pub source: Option<PathBuf>,
    pub overrides: Vec<String>,
}

/// Prefix a nested configuration error with the field it came from.
fn at(field: &str, e: Error) -> Error {
    match e {
        Error::Config(msg) => Error::Config(format!("{field}: {msg}")),
        other => Error::Config(format!("{field}: {other}")),
    }
}

/// Apply `a.b.c=value` to a TOML tree. The value is parsed as TOML and
/// falls back to a plain string.
fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {}", raw.trim()))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        table = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{part}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl ExperimentConfig {
    pub fn label(&self) -> Result<ConfigLabel> {
        self.label.parse().map_err(|e| at("label", e))
    }

    pub fn cloze_source(&self) -> Option<&DatasetSpec> {
        self.datasets.iter().find(|d| d.cloze_source)
    }

    /// Field-level checks that do not touch the filesystem.
    pub fn validate(&self) -> Result<()> {
        let label = self.label()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds: at least one seed is required".into()));
        }
        let mut tags = std::collections::HashSet::new();
        for (i, d) in self.datasets.iter().enumerate() {
            if d.tag.trim().is_empty() {
                return Err(Error::Config(format!("dataset[{i}].tag: must not be empty")));
            }
            if !tags.insert(&d.tag) {
                return Err(Error::Config(format!("dataset[{i}].tag: `{}` is used twice", d.tag)));
            }
            if d.train.is_none() && d.dev.is_none() && d.test.is_none() {
                return Err(Error::Config(format!("dataset[{i}]: no split paths given")));
            }
            if d.cloze_source && d.train.is_none() {
                return Err(Error::Config(format!("dataset[{i}].cloze_source: needs a train split")));
            }
        }
        if self.datasets.iter().filter(|d| d.cloze_source).count() > 1 {
            return Err(Error::Config(
                "dataset.cloze_source: only one dataset may feed the cloze stage".into(),
            ));
        }
        if label.cloze && self.cloze_source().is_none() {
            return Err(Error::Config(format!(
                "label: `{}` trains on cloze QA but no dataset has cloze_source = true",
                self.label
            )));
        }
        if label.finetune && !self.datasets.iter().any(|d| d.train.is_some() && !d.cloze_source) {
            return Err(Error::Config(format!(
                "label: `{}` fine-tunes but no target dataset (train split, cloze_source = false) is configured",
                self.label
            )));
        }
        for (name, h) in [
            ("stages.knowledge", &self.stages.knowledge),
            ("stages.cloze", &self.stages.cloze),
            ("stages.finetune", &self.stages.finetune),
        ] {
            h.validate().map_err(|e| at(name, e))?;
        }
        self.taskgen.validate().map_err(|e| at("taskgen", e))?;
        self.retrieval.validate().map_err(|e| at("retrieval", e))?;
        if self.vocab.max_size <= crate::encoding::NUM_SPECIAL {
            return Err(Error::Config(
                "vocab.max_size: must exceed the number of special tokens".into(),
            ));
        }
        self.encoder.resolve(label.size.preset(), self.vocab.max_size)?;
        Ok(())
    }
}

impl LoadedConfig {
    pub fn from_file(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut loaded = Self::from_str_in(&text, &base, overrides)?;
        loaded.source = Some(path.to_path_buf());
        Ok(loaded)
    }

    /// Parse `text` with relative data paths anchored at `base`.
    pub fn from_str_in(text: &str, base: &Path, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let snapshot = toml::to_string(&table).map_err(|e| Error::Config(format!("config: {e}")))?;
        let config: ExperimentConfig = toml::from_str(&snapshot).map_err(|e| Error::Config(format!("config: {e}")))?;
        config.validate()?;
        let data_root = match std::env::var_os(DATA_ROOT_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => match &config.data_root {
                Some(r) if r.is_absolute() => r.clone(),
                Some(r) => base.join(r),
                None => base.to_path_buf(),
            },
        };
        let output_dir = config.output_dir.clone();
        Ok(LoadedConfig {
            config,
            snapshot,
            data_root,
            output_dir,
            source: None,
            overrides: overrides.to_vec(),
        })
    }

    pub fn data_path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.data_root.join(p)
        }
    }

    /// Check that every referenced input exists.
    pub fn check_paths(&self) -> Result<()> {
        let k = &self.config.knowledge;
        let mut required = vec![("knowledge.tables", &k.tables), ("knowledge.categories", &k.categories)];
        if let Some(m) = &k.mapping {
            required.push(("knowledge.mapping", m));
        }
        for (field, p) in required {
            let full = self.data_path(p);
            if !full.exists() {
                return Err(Error::Config(format!("{field}: {} does not exist", full.display())));
            }
        }
        for (i, d) in self.config.datasets.iter().enumerate() {
            for (split, p) in [("train", &d.train), ("dev", &d.dev), ("test", &d.test)] {
                if let Some(p) = p {
                    let full = self.data_path(p);
                    if !full.is_file() {
                        return Err(Error::Config(format!(
                            "dataset[{i}].{split}: {} does not exist",
                            full.display()
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}
