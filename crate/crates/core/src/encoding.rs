//! Whitespace tokenizer, vocabulary, and the `[CLS] q [SEP] a [SEP]` pair layout.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;
pub const NUM_SPECIAL: usize = 4;
pub const MIN_MAX_LEN: usize = 8;
pub const DEFAULT_MAX_LEN: usize = 128;

/// Lowercase, split on whitespace, strip leading/trailing punctuation per token.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Encoding(format!("duplicate vocabulary entry `{t}`")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn specials_only() -> Self {
        Self::from_tokens([PAD, UNK, CLS, SEP].map(String::from).to_vec()).expect("distinct specials")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line, in id order.
    pub fn write(&self, mut out: impl Write) -> Result<()> {
        for t in &self.tokens {
            writeln!(out, "{t}").map_err(|e| Error::io("<vocab>", e))?;
        }
        Ok(())
    }

    pub fn read(reader: impl BufRead) -> Result<Self> {
        let tokens = reader
            .lines()
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(|e| Error::io("<vocab>", e))?;
        let specials = [PAD, UNK, CLS, SEP];
        if tokens.len() < NUM_SPECIAL || tokens[..NUM_SPECIAL] != specials {
            return Err(Error::Encoding("vocabulary must start with the special tokens".into()));
        }
        Self::from_tokens(tokens)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write(&mut f)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(std::io::BufReader::new(f))
    }
}

/// Keep tokens seen at least `min_freq` times, ranked by frequency (desc) then
/// token (asc), truncated so the whole vocabulary has at most `max_size` entries.
pub fn build_vocab<I, S>(corpus: I, min_freq: usize, max_size: usize) -> Vocabulary
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut freq: HashMap<String, usize> = HashMap::new();
    for text in corpus {
        for tok in tokenize(text.as_ref()) {
            *freq.entry(tok).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = freq.into_iter().filter(|(_, n)| *n >= min_freq.max(1)).collect();
    ranked.sort_by(|(ta, na), (tb, nb)| nb.cmp(na).then_with(|| ta.cmp(tb)));
    let mut vocab = Vocabulary::specials_only();
    let room = max_size.saturating_sub(NUM_SPECIAL);
    for (tok, _) in ranked.into_iter().take(room) {
        if vocab.index.contains_key(&tok) {
            continue;
        }
        vocab.index.insert(tok.clone(), vocab.tokens.len() as u32);
        vocab.tokens.push(tok);
    }
    vocab
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedSequence {
    pub token_ids: Vec<u32>,
    pub segment_ids: Vec<u8>,
    pub attention_mask: Vec<u8>,
}

impl EncodedSequence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Positions that are not padding.
    pub fn active_positions(&self) -> Vec<usize> {
        self.attention_mask
            .iter()
            .enumerate()
            .filter(|(_, m)| **m == 1)
            .map(|(i, _)| i)
            .collect()
    }
}

pub fn encode_pair(question: &str, answer: &str, vocab: &Vocabulary, max_len: usize) -> Result<EncodedSequence> {
    if max_len < MIN_MAX_LEN {
        return Err(Error::Encoding(format!("max_len {max_len} is below {MIN_MAX_LEN}")));
    }
    let q = tokenize(question);
    let a = tokenize(answer);
    if a.len() > max_len - 3 {
        return Err(Error::Encoding(format!(
            "answer has {} tokens; at most {} fit",
            a.len(),
            max_len - 3
        )));
    }
    let q_keep = q.len().min(max_len - 3 - a.len());
    let mut token_ids = Vec::with_capacity(max_len);
    let mut segment_ids = Vec::with_capacity(max_len);
    token_ids.push(CLS_ID);
    token_ids.extend(q[..q_keep].iter().map(|t| vocab.id(t)));
    token_ids.push(SEP_ID);
    segment_ids.resize(token_ids.len(), 0);
    token_ids.extend(a.iter().map(|t| vocab.id(t)));
    token_ids.push(SEP_ID);
    segment_ids.resize(token_ids.len(), 1);
    let used = token_ids.len();
    let mut attention_mask = vec![1u8; used];
    token_ids.resize(max_len, PAD_ID);
    segment_ids.resize(max_len, 0);
    attention_mask.resize(max_len, 0);
    Ok(EncodedSequence {
        token_ids,
        segment_ids,
        attention_mask,
    })
}

/// Recover the question and answer tokens of an encoded pair.
pub fn decode_pair(seq: &EncodedSequence, vocab: &Vocabulary) -> Result<(Vec<String>, Vec<String>)> {
    let ids: Vec<u32> = seq
        .token_ids
        .iter()
        .zip(&seq.attention_mask)
        .filter(|(_, m)| **m == 1)
        .map(|(id, _)| *id)
        .collect();
    if ids.first() != Some(&CLS_ID) || ids.last() != Some(&SEP_ID) {
        return Err(Error::Encoding("sequence is not [CLS] … [SEP]".into()));
    }
    let body = &ids[1..ids.len() - 1];
    let sep = body
        .iter()
        .position(|&i| i == SEP_ID)
        .ok_or_else(|| Error::Encoding("missing middle [SEP]".into()))?;
    let lookup =
        |xs: &[u32]| -> Vec<String> { xs.iter().map(|&i| vocab.token(i).unwrap_or(UNK).to_string()).collect() };
    Ok((lookup(&body[..sep]), lookup(&body[sep + 1..])))
}
