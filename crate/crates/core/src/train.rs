//! Mini-batch training shared by all three stages.
//!
//! The stage a run produces follows from the origin of its examples and the
//! stage of the starting parameters: KB completion from a fresh init gives
//! `ThetaK`; cloze QA gives `ThetaKQ` from `ThetaK` (or `ThetaQ` from a fresh
//! init); target-dataset pairs give `ThetaF`.

use std::fmt::Write as _;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoding::{encode_pair, EncodedSequence, Vocabulary};
use crate::error::{Error, Result};
use crate::eval;
use crate::exec::Execution;
use crate::model::{loss_and_gradients, CheckpointStage, DropoutMode, ModelParams, StageRecord};
use crate::qa::MultipleChoiceQuestion;
use crate::taskgen::{Origin, PairExample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub shuffle_seed: u64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            batch_size: 32,
            learning_rate: 5e-5,
            epochs: 5,
            adam: AdamConfig::default(),
            shuffle_seed: 0,
            clip_norm: Some(1.0),
        }
    }
}

impl Hyperparams {
    /// Defaults for the fine-tuning stages (40 epochs).
    pub fn fine_tuning() -> Self {
        Hyperparams {
            epochs: 40,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be ≥ 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be ≥ 1".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config("clip_norm must be > 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64, cfg: &AdamConfig) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

/// Rescale `grads` to norm `max_norm` if larger. Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub dev_accuracy: Option<f64>,
    pub clipped_batches: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub records: Vec<EpochRecord>,
}

impl TrainingCurve {
    /// `epoch,loss,dev_accuracy` with an empty accuracy cell when no dev set was given.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,dev_accuracy\n");
        for r in &self.records {
            let acc = r.dev_accuracy.map(|a| format!("{a:.6}")).unwrap_or_default();
            let _ = writeln!(s, "{},{:.8},{acc}", r.epoch, r.mean_loss);
        }
        s
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let bad = || Error::DatasetParse {
                path: "<curve>".into(),
                line: i + 1,
                message: format!("malformed row `{line}`"),
            };
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 3 {
                return Err(bad());
            }
            records.push(EpochRecord {
                epoch: cols[0].parse().map_err(|_| bad())?,
                mean_loss: cols[1].parse().map_err(|_| bad())?,
                dev_accuracy: if cols[2].is_empty() {
                    None
                } else {
                    Some(cols[2].parse().map_err(|_| bad())?)
                },
                clipped_batches: 0,
            });
        }
        Ok(TrainingCurve { records })
    }
}

/// Everything a training run needs besides parameters, examples, and hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct TrainContext<'a> {
    pub vocab: &'a Vocabulary,
    pub max_len: usize,
    pub exec: Execution,
    pub dev: Option<&'a [MultipleChoiceQuestion]>,
}

fn target_stage(origin: Origin, from: CheckpointStage) -> Result<CheckpointStage> {
    use CheckpointStage::*;
    match (origin, from) {
        (Origin::KbCompletion, Init) => Ok(ThetaK),
        (Origin::ClozeQa, Init) => Ok(ThetaQ),
        (Origin::ClozeQa, ThetaK) => Ok(ThetaKQ),
        (Origin::TargetFineTune, Init | ThetaK | ThetaQ | ThetaKQ) => Ok(ThetaF),
        (o, s) => Err(Error::Training(format!(
            "{o:?} examples cannot continue a {s} checkpoint"
        ))),
    }
}

/// SHA-256 over the hyperparameters and the example stream.
pub fn config_hash(hyper: &Hyperparams, examples: &[PairExample]) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(hyper).expect("serializable"));
    for e in examples {
        h.update(serde_json::to_vec(e).expect("serializable"));
    }
    hex::encode(h.finalize())
}

fn mix(seed: u64, epoch: usize, batch: usize) -> u64 {
    // splitmix64 finalizer over the combined key
    let mut z = seed
        .wrapping_add((epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((batch as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn encode_examples(
    examples: &[PairExample],
    vocab: &Vocabulary,
    max_len: usize,
    exec: Execution,
) -> Result<(Vec<EncodedSequence>, Vec<u8>)> {
    let encoded = exec.map(examples, |e| {
        encode_pair(&e.question_text, &e.answer_text, vocab, max_len)
    });
    let mut seqs = Vec::with_capacity(examples.len());
    let mut labels = Vec::with_capacity(examples.len());
    for (e, s) in examples.iter().zip(encoded) {
        seqs.push(s?);
        labels.push(e.label);
    }
    Ok((seqs, labels))
}

/// Train from `start` for `hyper.epochs` epochs of seeded-shuffled mini-batches.
pub fn train_stage(
    start: ModelParams,
    examples: &[PairExample],
    hyper: &Hyperparams,
    ctx: TrainContext<'_>,
) -> Result<(ModelParams, TrainingCurve)> {
    hyper.validate()?;
    let origin = examples
        .first()
        .ok_or_else(|| Error::Training("no training examples".into()))?
        .origin;
    if examples.iter().any(|e| e.origin != origin) {
        return Err(Error::Training("examples mix several origins".into()));
    }
    let stage = target_stage(origin, start.stage())?;
    let (seqs, labels) = encode_examples(examples, ctx.vocab, ctx.max_len, ctx.exec)?;

    let mut params = start;
    let mut adam = AdamState::new(params.values.len());
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.shuffle_seed);
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    let mut curve = TrainingCurve::default();
    let mut batch_seqs = Vec::with_capacity(hyper.batch_size);
    let mut batch_labels = Vec::with_capacity(hyper.batch_size);

    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut clipped = 0;
        for (b, idx) in order.chunks(hyper.batch_size).enumerate() {
            batch_seqs.clear();
            batch_labels.clear();
            batch_seqs.extend(idx.iter().map(|&i| seqs[i].clone()));
            batch_labels.extend(idx.iter().map(|&i| labels[i]));
            let mode = DropoutMode::Sampled {
                seed: mix(hyper.shuffle_seed, epoch, b),
            };
            let mut lg =
                loss_and_gradients(&params, &batch_seqs, &batch_labels, mode, ctx.exec).map_err(|e| match e {
                    Error::Numeric { .. } => Error::Divergence { epoch, batch: b },
                    other => other,
                })?;
            if !lg.loss.is_finite() || lg.gradients.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch, batch: b });
            }
            if let Some(max) = hyper.clip_norm {
                let norm = clip_global_norm(&mut lg.gradients, max);
                if norm > max {
                    clipped += 1;
                    log::debug!("epoch {epoch} batch {b}: clipped gradient norm {norm:.4}");
                }
            }
            adam_step(
                &mut params.values,
                &lg.gradients,
                &mut adam,
                hyper.learning_rate,
                &hyper.adam,
            );
            loss_sum += lg.loss * idx.len() as f64;
        }
        let mean_loss = loss_sum / seqs.len() as f64;
        let dev_accuracy = match ctx.dev {
            Some(dev) => Some(eval::evaluate(&params, dev, ctx.vocab, ctx.max_len, "", ctx.exec)?.accuracy),
            None => None,
        };
        if clipped > 0 {
            log::info!("epoch {epoch}: gradient clipping triggered on {clipped} batch(es)");
        }
        log::info!(
            "{stage} epoch {epoch}/{}: loss {mean_loss:.5}{}",
            hyper.epochs,
            dev_accuracy
                .map(|a| format!(", dev accuracy {a:.4}"))
                .unwrap_or_default()
        );
        curve.records.push(EpochRecord {
            epoch,
            mean_loss,
            dev_accuracy,
            clipped_batches: clipped,
        });
    }

    params.push_stage(StageRecord {
        stage,
        config_hash: config_hash(hyper, examples),
        seed: hyper.shuffle_seed,
    })?;
    Ok((params, curve))
}
