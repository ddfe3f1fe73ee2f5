//! BM25 retrieval solver.
//!
//! Documents and queries become BM25-weighted term vectors compared by cosine
//! similarity. A candidate answer is scored by the summed similarity of the
//! top-K sentences retrieved for `stem + " " + candidate`.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoding::tokenize;
use crate::error::{Error, Result};
use crate::eval::select_answer;
use crate::exec::Execution;
use crate::kb::KnowledgeBase;
use crate::qa::MultipleChoiceQuestion;

pub const CACHE_MAGIC: &[u8; 8] = b"NXKTBM25";
pub const CACHE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bm25Scoring {
    /// Cosine between BM25-weighted query and document vectors.
    #[default]
    Cosine,
    /// Classic Okapi sum of document term weights over the query terms.
    Okapi,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub k: usize,
    pub k1: f64,
    pub b: f64,
    pub scoring: Bm25Scoring,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            k: 5,
            k1: 1.2,
            b: 0.75,
            scoring: Bm25Scoring::Cosine,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("retrieval k must be ≥ 1".into()));
        }
        if !(self.k1 >= 0.0) || !(0.0..=1.0).contains(&self.b) {
            return Err(Error::Config("need k1 ≥ 0 and 0 ≤ b ≤ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub fact_id: String,
    pub text: String,
    pub len: u32,
    /// `(term id, count)` sorted by term id.
    pub terms: Vec<(u32, u32)>,
}

#[derive(Debug, Clone)]
pub struct Bm25Index {
    k1: f64,
    b: f64,
    terms: Vec<String>,
    term_ids: HashMap<String, u32>,
    df: Vec<u32>,
    docs: Vec<Document>,
    avg_len: f64,
    idf: Vec<f64>,
    postings: Vec<Vec<(u32, f64)>>,
    doc_norms: Vec<f64>,
    corpus_hash: String,
}

/// `ln((N − df + 0.5)/(df + 0.5) + 1)`.
pub fn idf(n_docs: usize, df: u32) -> f64 {
    let (n, df) = (n_docs as f64, df as f64);
    ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
}

fn saturate(tf: f64, len: f64, avg_len: f64, k1: f64, b: f64) -> f64 {
    tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len / avg_len))
}

/// SHA-256 over the sentences and BM25 parameters, used as the cache key.
pub fn corpus_hash(sentences: &[(String, String)], k1: f64, b: f64) -> String {
    let mut h = Sha256::new();
    h.update(k1.to_le_bytes());
    h.update(b.to_le_bytes());
    for (id, text) in sentences {
        h.update(id.as_bytes());
        h.update([0x1f]);
        h.update(text.as_bytes());
        h.update([0x1e]);
    }
    hex::encode(h.finalize())
}

/// One `(fact id, sentence)` per triple, in KB order.
pub fn kb_sentences(kb: &KnowledgeBase) -> Vec<(String, String)> {
    kb.triples
        .iter()
        .map(|t| (t.source_fact_id.clone(), t.sentence()))
        .collect()
}

fn count_terms(tokens: &[String]) -> BTreeMap<&str, u32> {
    let mut counts = BTreeMap::new();
    for t in tokens {
        *counts.entry(t.as_str()).or_insert(0) += 1;
    }
    counts
}

impl Bm25Index {
    pub fn build(sentences: &[(String, String)], k1: f64, b: f64, exec: Execution) -> Result<Self> {
        if sentences.is_empty() {
            return Err(Error::Retrieval("cannot index an empty corpus".into()));
        }
        let tokenized = exec.map(sentences, |(_, text)| tokenize(text));
        let mut vocab: Vec<&str> = tokenized.iter().flatten().map(String::as_str).collect();
        vocab.sort_unstable();
        vocab.dedup();
        let terms: Vec<String> = vocab.iter().map(|t| t.to_string()).collect();
        let term_ids: HashMap<String, u32> = terms.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        let docs = sentences
            .iter()
            .zip(&tokenized)
            .map(|((id, text), toks)| Document {
                fact_id: id.clone(),
                text: text.clone(),
                len: toks.len() as u32,
                terms: count_terms(toks).into_iter().map(|(t, c)| (term_ids[t], c)).collect(),
            })
            .collect();
        Self::assemble(terms, docs, k1, b, corpus_hash(sentences, k1, b))
    }

    pub fn from_kb(kb: &KnowledgeBase, cfg: &RetrievalConfig, exec: Execution) -> Result<Self> {
        Self::build(&kb_sentences(kb), cfg.k1, cfg.b, exec)
    }

    /// Derive document frequencies, IDF, postings, and norms from the documents.
    fn assemble(terms: Vec<String>, docs: Vec<Document>, k1: f64, b: f64, corpus_hash: String) -> Result<Self> {
        let total: u64 = docs.iter().map(|d| d.len as u64).sum();
        if total == 0 {
            return Err(Error::Retrieval("corpus contains no terms".into()));
        }
        let avg_len = total as f64 / docs.len() as f64;
        let mut df = vec![0u32; terms.len()];
        for d in &docs {
            for &(t, _) in &d.terms {
                df[t as usize] += 1;
            }
        }
        let idf_v: Vec<f64> = df.iter().map(|&f| idf(docs.len(), f)).collect();
        let mut postings: Vec<Vec<(u32, f64)>> = vec![Vec::new(); terms.len()];
        let mut doc_norms = Vec::with_capacity(docs.len());
        for (i, d) in docs.iter().enumerate() {
            let mut sq = 0.0;
            for &(t, c) in &d.terms {
                let w = idf_v[t as usize] * saturate(c as f64, d.len as f64, avg_len, k1, b);
                postings[t as usize].push((i as u32, w));
                sq += w * w;
            }
            doc_norms.push(sq.sqrt());
        }
        let term_ids = terms.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Ok(Bm25Index {
            k1,
            b,
            terms,
            term_ids,
            df,
            docs,
            avg_len,
            idf: idf_v,
            postings,
            doc_norms,
            corpus_hash,
        })
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    pub fn doc(&self, i: usize) -> &Document {
        &self.docs[i]
    }

    pub fn doc_frequency(&self, term: &str) -> u32 {
        self.term_ids.get(term).map_or(0, |&t| self.df[t as usize])
    }

    pub fn corpus_hash(&self) -> &str {
        &self.corpus_hash
    }

    pub fn params(&self) -> (f64, f64) {
        (self.k1, self.b)
    }

    /// BM25 weights of a text measured against this index, keyed by term.
    /// Terms absent from the corpus get the `df = 0` IDF.
    pub fn bm25_vector(&self, text: &str) -> BTreeMap<String, f64> {
        let toks = tokenize(text);
        let len = toks.len() as f64;
        count_terms(&toks)
            .into_iter()
            .map(|(t, c)| {
                let idf_t = self
                    .term_ids
                    .get(t)
                    .map_or_else(|| idf(self.docs.len(), 0), |&id| self.idf[id as usize]);
                (
                    t.to_string(),
                    idf_t * saturate(c as f64, len, self.avg_len, self.k1, self.b),
                )
            })
            .collect()
    }

    /// Similarity of every document to `query`.
    pub fn similarities(&self, query: &str, scoring: Bm25Scoring) -> Vec<f64> {
        let mut acc = vec![0.0; self.docs.len()];
        match scoring {
            Bm25Scoring::Cosine => {
                let q = self.bm25_vector(query);
                let q_norm = q.values().map(|w| w * w).sum::<f64>().sqrt();
                for (t, wq) in &q {
                    if let Some(&id) = self.term_ids.get(t) {
                        for &(d, wd) in &self.postings[id as usize] {
                            acc[d as usize] += wq * wd;
                        }
                    }
                }
                for (s, dn) in acc.iter_mut().zip(&self.doc_norms) {
                    let denom = q_norm * dn;
                    *s = if denom > 0.0 { *s / denom } else { 0.0 };
                }
            }
            Bm25Scoring::Okapi => {
                let toks = tokenize(query);
                for t in count_terms(&toks).keys() {
                    if let Some(&id) = self.term_ids.get(*t) {
                        for &(d, wd) in &self.postings[id as usize] {
                            acc[d as usize] += wd;
                        }
                    }
                }
            }
        }
        acc
    }

    pub fn retrieve_topk(&self, query: &str, k: usize, scoring: Bm25Scoring) -> Vec<Retrieved> {
        let sims = self.similarities(query, scoring);
        top_k(&sims, k)
            .into_iter()
            .map(|doc| Retrieved {
                doc,
                similarity: sims[doc],
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write(&self, mut out: impl Write) -> Result<()> {
        let cache = CacheFile {
            magic: *CACHE_MAGIC,
            version: CACHE_VERSION,
            corpus_hash: self.corpus_hash.clone(),
            k1: self.k1,
            b: self.b,
            terms: self.terms.clone(),
            docs: self.docs.clone(),
        };
        let bytes = bincode::serde::encode_to_vec(&cache, bincode::config::standard())
            .map_err(|e| Error::Retrieval(format!("encoding BM25 cache: {e}")))?;
        out.write_all(&bytes).map_err(|e| Error::io("<bm25 cache>", e))
    }

    pub fn read(mut input: impl Read) -> Result<Self> {
        let mut data = Vec::new();
        input.read_to_end(&mut data).map_err(|e| Error::io("<bm25 cache>", e))?;
        let (cache, used): (CacheFile, usize) = bincode::serde::decode_from_slice(&data, bincode::config::standard())
            .map_err(|e| Error::Retrieval(format!("unreadable BM25 cache: {e}")))?;
        if &cache.magic != CACHE_MAGIC || cache.version != CACHE_VERSION {
            return Err(Error::Retrieval("not a BM25 cache file of this version".into()));
        }
        if used != data.len() {
            return Err(Error::Retrieval("trailing bytes in BM25 cache".into()));
        }
        let n_terms = cache.terms.len();
        if cache
            .docs
            .iter()
            .any(|d| d.terms.iter().any(|&(t, _)| t as usize >= n_terms))
        {
            return Err(Error::Retrieval("cache term id out of range".into()));
        }
        Self::assemble(cache.terms, cache.docs, cache.k1, cache.b, cache.corpus_hash)
    }

    /// Load the cached index when its key matches `sentences`, else build and cache it.
    pub fn load_or_build(
        cache: &Path,
        sentences: &[(String, String)],
        k1: f64,
        b: f64,
        exec: Execution,
    ) -> Result<Self> {
        let key = corpus_hash(sentences, k1, b);
        if cache.exists() {
            let file = std::fs::File::open(cache).map_err(|e| Error::io(cache, e))?;
            match Self::read(std::io::BufReader::new(file)) {
                Ok(idx) if idx.corpus_hash == key => {
                    log::info!("BM25 index loaded from {}", cache.display());
                    return Ok(idx);
                }
                Ok(_) => log::info!("BM25 cache {} is stale; rebuilding", cache.display()),
                Err(e) => log::warn!("ignoring unreadable BM25 cache {}: {e}", cache.display()),
            }
        }
        let idx = Self::build(sentences, k1, b, exec)?;
        idx.save(cache)?;
        Ok(idx)
    }
}

/// On-disk form of an index: documents and vocabulary; everything else is derived on load.
#[derive(Serialize, Deserialize)]
struct CacheFile {
    magic: [u8; 8],
    version: u32,
    corpus_hash: String,
    k1: f64,
    b: f64,
    terms: Vec<String>,
    docs: Vec<Document>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Retrieved {
    pub doc: usize,
    pub similarity: f64,
}

/// Indices of the `k` largest scores, descending, lower index first on ties.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    let cmp = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    let k = k.min(idx.len());
    if k == 0 {
        return Vec::new();
    }
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, cmp);
        idx.truncate(k);
    }
    idx.sort_by(cmp);
    idx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrAnswer {
    pub predicted: usize,
    /// Summed top-K similarity per candidate.
    pub scores: Vec<f64>,
}

/// Score each candidate by the summed similarity of its top-K sentences.
pub fn ir_answer(question: &MultipleChoiceQuestion, index: &Bm25Index, cfg: &RetrievalConfig) -> Result<IrAnswer> {
    if question.candidates.is_empty() {
        return Err(Error::Retrieval(format!(
            "question {} has no candidates",
            question.question_id
        )));
    }
    let scores: Vec<f64> = question
        .candidates
        .iter()
        .map(|c| {
            let query = format!("{} {}", question.stem, c);
            index
                .retrieve_topk(&query, cfg.k, cfg.scoring)
                .iter()
                .map(|r| r.similarity)
                .sum()
        })
        .collect();
    let predicted = select_answer(&scores).expect("finite scores");
    Ok(IrAnswer { predicted, scores })
}
