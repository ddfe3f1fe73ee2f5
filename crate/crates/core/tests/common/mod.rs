//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use nxkt::encoding::{encode_pair, EncodedSequence, Vocabulary};
use nxkt::model::{loss_and_gradients, DropoutMode, ModelParams};
use nxkt::Execution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-4;
pub const MAX_REL_ERR: f64 = 1e-4;
/// Magnitude below which both gradients are treated as zero.
pub const ZERO_FLOOR: f64 = 1e-7;

pub fn random_batch(
    vocab: &Vocabulary,
    rng: &mut ChaCha8Rng,
    size: usize,
    max_len: usize,
) -> (Vec<EncodedSequence>, Vec<u8>) {
    let words: Vec<&str> = vocab.tokens()[4..].iter().map(String::as_str).collect();
    let mut batch = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..size {
        let qn = rng.random_range(0..max_len - 3);
        let q: Vec<&str> = (0..qn).map(|_| words[rng.random_range(0..words.len())]).collect();
        let a = words[rng.random_range(0..words.len())];
        batch.push(encode_pair(&q.join(" "), a, vocab, max_len).unwrap());
        labels.push(rng.random_range(0..2u8));
    }
    (batch, labels)
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub parameters: usize,
    /// Worst relative error against the fourth-order central stencil.
    pub worst: f64,
    /// Worst relative error against the plain two-point central difference.
    pub worst_two_point: f64,
}

fn rel(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(ZERO_FLOOR)
}

/// Compare every analytic gradient entry with central differences of step `FD_STEP`.
pub fn gradient_check(
    params: &mut ModelParams,
    batch: &[EncodedSequence],
    labels: &[u8],
    mode: DropoutMode,
) -> GradCheck {
    let loss = |p: &ModelParams| {
        loss_and_gradients(p, batch, labels, mode, Execution::Sequential)
            .unwrap()
            .loss
    };
    let analytic = loss_and_gradients(params, batch, labels, mode, Execution::Sequential)
        .unwrap()
        .gradients;
    let h = FD_STEP;
    let mut out = GradCheck {
        parameters: 0,
        worst: 0.0,
        worst_two_point: 0.0,
    };
    for i in 0..params.values.len() {
        let orig = params.values[i];
        let mut at = |d: f64| {
            params.values[i] = orig + d;
            let l = loss(params);
            params.values[i] = orig;
            l
        };
        let (p1, m1, p2, m2) = (at(h), at(-h), at(2.0 * h), at(-2.0 * h));
        let two_point = (p1 - m1) / (2.0 * h);
        let four_point = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
        out.worst = out.worst.max(rel(analytic[i], four_point));
        out.worst_two_point = out.worst_two_point.max(rel(analytic[i], two_point));
        out.parameters += 1;
    }
    out
}

/// BM25 and cosine scoring written straight from the definitions, with no
/// index: every quantity is recomputed from the raw sentences per query.
pub mod bm25_oracle {
    use std::collections::{BTreeMap, BTreeSet};

    pub const K1: f64 = 1.2;
    pub const B: f64 = 0.75;

    fn words(text: &str) -> Vec<&str> {
        text.split_whitespace().collect()
    }

    fn weights(text: &str, corpus: &[String], k1: f64, b: f64) -> BTreeMap<String, f64> {
        let n = corpus.len() as f64;
        let avg = corpus.iter().map(|d| words(d).len() as f64).sum::<f64>() / n;
        let toks = words(text);
        let len = toks.len() as f64;
        let distinct: BTreeSet<&str> = toks.iter().copied().collect();
        distinct
            .into_iter()
            .map(|t| {
                let tf = toks.iter().filter(|w| **w == t).count() as f64;
                let df = corpus.iter().filter(|d| words(d).contains(&t)).count() as f64;
                let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
                let w = idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len / avg));
                (t.to_string(), w)
            })
            .collect()
    }

    pub fn cosine(query: &str, doc: &str, corpus: &[String]) -> f64 {
        let q = weights(query, corpus, K1, B);
        let d = weights(doc, corpus, K1, B);
        let dot: f64 = q.iter().filter_map(|(t, wq)| d.get(t).map(|wd| wq * wd)).sum();
        let nq = q.values().map(|w| w * w).sum::<f64>().sqrt();
        let nd = d.values().map(|w| w * w).sum::<f64>().sqrt();
        if nq * nd > 0.0 {
            dot / (nq * nd)
        } else {
            0.0
        }
    }

    /// `(doc, similarity)` for the `k` most similar documents.
    pub fn top_k(query: &str, corpus: &[String], k: usize) -> Vec<(usize, f64)> {
        let mut all: Vec<(usize, f64)> = corpus
            .iter()
            .enumerate()
            .map(|(i, d)| (i, cosine(query, d, corpus)))
            .collect();
        // Stable sort keeps the lower ordinal first among equal scores.
        all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        all.truncate(k);
        all
    }

    /// Per-candidate summed top-K similarity and the first maximal candidate.
    pub fn answer(stem: &str, candidates: &[String], corpus: &[String], k: usize) -> (usize, Vec<f64>) {
        let scores: Vec<f64> = candidates
            .iter()
            .map(|c| top_k(&format!("{stem} {c}"), corpus, k).iter().map(|(_, s)| s).sum())
            .collect();
        let mut best = 0;
        for (i, s) in scores.iter().enumerate() {
            if *s > scores[best] {
                best = i;
            }
        }
        (best, scores)
    }
}

/// Space-joined words drawn from a small pool so that terms repeat across
/// sentences and some sentences repeat outright.
pub fn random_sentence(rng: &mut ChaCha8Rng, pool: &[String], max_words: usize) -> String {
    let n = rng.random_range(1..=max_words);
    (0..n)
        .map(|_| pool[rng.random_range(0..pool.len())].as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn word_pool(rng: &mut ChaCha8Rng, size: usize) -> Vec<String> {
    const LETTERS: &[u8] = b"abcdefghijklmnopqrstuvwxyz";
    let mut pool = std::collections::BTreeSet::new();
    while pool.len() < size {
        let len = rng.random_range(2..6);
        let w: String = (0..len)
            .map(|_| LETTERS[rng.random_range(0..LETTERS.len())] as char)
            .collect();
        pool.insert(w);
    }
    pool.into_iter().collect()
}
