//! Compact transformer pair classifier.
//!
//! Parameters live in one flat `f64` buffer described by a [`Layout`]; the
//! optimizer and the gradient checks treat the model as a single vector,
//! while the network code takes shaped views into it.

mod checkpoint;
mod network;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use network::{
    forward, loss_and_gradients, score_from_logits, score_pair, score_pairs, softmax2, DropoutMode, ForwardOutput,
    LossAndGradients,
};

/// Standard deviation of the initial weights (after truncation).
pub const INIT_STD: f64 = 0.02;

/// Standard deviation of N(0, 1) restricted to [-2, 2]:
/// sqrt(1 - 4·φ(2) / (2Φ(2) - 1)).
const TRUNCATED_UNIT_STD: f64 = 0.879_625_661_034_24;

/// Scale of the normal that, truncated at two of its own standard
/// deviations, has standard deviation [`INIT_STD`].
pub fn init_sigma() -> f64 {
    INIT_STD / TRUNCATED_UNIT_STD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub hidden_size: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub feed_forward_size: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub dropout_rate: f64,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("hidden_size", self.hidden_size),
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("feed_forward_size", self.feed_forward_size),
            ("max_len", self.max_len),
            ("vocab_size", self.vocab_size),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Error::Config(format!("encoder {name} must be ≥ 1")));
            }
        }
        if !self.hidden_size.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "hidden_size {} is not divisible by num_heads {}",
                self.hidden_size, self.num_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.num_heads
    }
}

/// Named encoder sizes. `Small` stands in for a base-size model and `Medium`
/// for a large one; `Tiny` is the gradient-check configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Tiny,
    Small,
    Medium,
}

impl Preset {
    pub fn config(self, vocab_size: usize, max_len: usize) -> EncoderConfig {
        let (hidden_size, num_layers, num_heads, feed_forward_size) = match self {
            Preset::Tiny => (16, 1, 2, 32),
            Preset::Small => (64, 2, 4, 256),
            Preset::Medium => (128, 4, 8, 512),
        };
        EncoderConfig {
            hidden_size,
            num_layers,
            num_heads,
            feed_forward_size,
            max_len,
            vocab_size,
            dropout_rate: 0.1,
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tiny" => Ok(Preset::Tiny),
            "small" | "base" => Ok(Preset::Small),
            "medium" | "large" => Ok(Preset::Medium),
            other => Err(Error::Config(format!("unknown encoder preset `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct LayerOffsets {
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Normal,
    Zero,
    One,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    init: Init,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Declared tensor order and offsets inside the flat parameter buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub tensors: Vec<TensorSpec>,
    pub total: usize,
    pub(crate) token: usize,
    pub(crate) position: usize,
    pub(crate) segment: usize,
    pub(crate) layers: Vec<LayerOffsets>,
    pub(crate) cls_w: usize,
    pub(crate) cls_b: usize,
}

impl Layout {
    pub fn new(cfg: &EncoderConfig) -> Self {
        let h = cfg.hidden_size;
        let f = cfg.feed_forward_size;
        let mut tensors = Vec::new();
        let mut total = 0;
        let mut push = |name: String, shape: Vec<usize>, init: Init| -> usize {
            let offset = total;
            total += shape.iter().product::<usize>();
            tensors.push(TensorSpec {
                name,
                shape,
                offset,
                init,
            });
            offset
        };
        let token = push("embeddings.token".into(), vec![cfg.vocab_size, h], Init::Normal);
        let position = push("embeddings.position".into(), vec![cfg.max_len, h], Init::Normal);
        let segment = push("embeddings.segment".into(), vec![2, h], Init::Normal);
        let mut layers = Vec::with_capacity(cfg.num_layers);
        for l in 0..cfg.num_layers {
            let p = |s: &str| format!("layer{l}.{s}");
            layers.push(LayerOffsets {
                wq: push(p("attention.query.weight"), vec![h, h], Init::Normal),
                bq: push(p("attention.query.bias"), vec![h], Init::Zero),
                wk: push(p("attention.key.weight"), vec![h, h], Init::Normal),
                bk: push(p("attention.key.bias"), vec![h], Init::Zero),
                wv: push(p("attention.value.weight"), vec![h, h], Init::Normal),
                bv: push(p("attention.value.bias"), vec![h], Init::Zero),
                wo: push(p("attention.output.weight"), vec![h, h], Init::Normal),
                bo: push(p("attention.output.bias"), vec![h], Init::Zero),
                ln1_g: push(p("attention_norm.gain"), vec![h], Init::One),
                ln1_b: push(p("attention_norm.bias"), vec![h], Init::Zero),
                w1: push(p("ffn.in.weight"), vec![h, f], Init::Normal),
                b1: push(p("ffn.in.bias"), vec![f], Init::Zero),
                w2: push(p("ffn.out.weight"), vec![f, h], Init::Normal),
                b2: push(p("ffn.out.bias"), vec![h], Init::Zero),
                ln2_g: push(p("ffn_norm.gain"), vec![h], Init::One),
                ln2_b: push(p("ffn_norm.bias"), vec![h], Init::Zero),
            });
        }
        let cls_w = push("classifier.weight".into(), vec![h, 2], Init::Normal);
        let cls_b = push("classifier.bias".into(), vec![2], Init::Zero);
        Layout {
            tensors,
            total,
            token,
            position,
            segment,
            layers,
            cls_w,
            cls_b,
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

/// Training stage a parameter set came out of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CheckpointStage {
    /// Random initialization.
    Init,
    /// After knowledge-base completion.
    ThetaK,
    /// After cloze QA training from a random start (the Q-only configuration).
    ThetaQ,
    /// After cloze QA training starting from `ThetaK`.
    ThetaKQ,
    /// After fine-tuning on a target dataset.
    ThetaF,
}

impl fmt::Display for CheckpointStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CheckpointStage::Init => "init",
            CheckpointStage::ThetaK => "theta_k",
            CheckpointStage::ThetaQ => "theta_q",
            CheckpointStage::ThetaKQ => "theta_kq",
            CheckpointStage::ThetaF => "theta_f",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: CheckpointStage,
    /// Hash of the training configuration that produced this stage.
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: EncoderConfig,
    pub layout: Layout,
    pub values: Vec<f64>,
    /// Stage history, oldest first; always starts with an `Init` record.
    pub lineage: Vec<StageRecord>,
}

impl ModelParams {
    pub fn stage(&self) -> CheckpointStage {
        self.lineage.last().map(|r| r.stage).unwrap_or(CheckpointStage::Init)
    }

    pub fn parent_stage(&self) -> Option<CheckpointStage> {
        let n = self.lineage.len();
        (n >= 2).then(|| self.lineage[n - 2].stage)
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .tensor(name)
            .map(|t| &self.values[t.offset..t.offset + t.len()])
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Append a stage record, enforcing the lineage rules.
    pub fn push_stage(&mut self, record: StageRecord) -> Result<()> {
        let from = self.stage();
        let ok = matches!(
            (from, record.stage),
            (CheckpointStage::Init, CheckpointStage::ThetaK)
                | (CheckpointStage::Init, CheckpointStage::ThetaQ)
                | (CheckpointStage::ThetaK, CheckpointStage::ThetaKQ)
                | (
                    CheckpointStage::Init
                        | CheckpointStage::ThetaK
                        | CheckpointStage::ThetaQ
                        | CheckpointStage::ThetaKQ,
                    CheckpointStage::ThetaF
                )
        );
        if !ok {
            return Err(Error::Training(format!(
                "a {} checkpoint cannot follow {from}",
                record.stage
            )));
        }
        self.lineage.push(record);
        Ok(())
    }
}

/// Weights from a zero-mean normal truncated at ±2σ with σ chosen so the
/// weights have standard deviation 0.02; biases 0, layer-norm gains 1.
pub fn init_params(config: &EncoderConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let layout = Layout::new(config);
    let mut values = vec![0.0; layout.total];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = init_sigma();
    let normal = Normal::new(0.0, sigma).expect("valid std");
    for t in &layout.tensors {
        let slot = &mut values[t.offset..t.offset + t.len()];
        match t.init {
            Init::Zero => {}
            Init::One => slot.fill(1.0),
            Init::Normal => {
                for v in slot.iter_mut() {
                    *v = loop {
                        let x: f64 = normal.sample(&mut rng);
                        if x.abs() <= 2.0 * sigma {
                            break x;
                        }
                    };
                }
            }
        }
    }
    Ok(ModelParams {
        config: config.clone(),
        layout,
        values,
        lineage: vec![StageRecord {
            stage: CheckpointStage::Init,
            config_hash: String::new(),
            seed,
        }],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(h: usize) -> EncoderConfig {
        EncoderConfig {
            hidden_size: h,
            num_layers: 1,
            num_heads: 2,
            feed_forward_size: 2 * h,
            max_len: 8,
            vocab_size: 50,
            dropout_rate: 0.0,
        }
    }

    #[test]
    fn config_validation() {
        assert!(cfg(16).validate().is_ok());
        assert!(EncoderConfig {
            num_heads: 3,
            ..cfg(16)
        }
        .validate()
        .is_err());
        assert!(EncoderConfig {
            dropout_rate: 1.0,
            ..cfg(16)
        }
        .validate()
        .is_err());
        assert!(EncoderConfig {
            num_layers: 0,
            ..cfg(16)
        }
        .validate()
        .is_err());
    }

    #[test]
    fn layout_is_contiguous() {
        let l = Layout::new(&cfg(16));
        let mut next = 0;
        for t in &l.tensors {
            assert_eq!(t.offset, next);
            next += t.len();
        }
        assert_eq!(next, l.total);
    }

    #[test]
    fn init_determinism() {
        let a = init_params(&cfg(16), 7).unwrap();
        let b = init_params(&cfg(16), 7).unwrap();
        let c = init_params(&cfg(16), 8).unwrap();
        assert_eq!(a.values, b.values);
        assert_ne!(a.values, c.values);
        assert!(a
            .tensor("layer0.attention.query.bias")
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
        assert!(a.tensor("layer0.ffn_norm.gain").unwrap().iter().all(|&v| v == 1.0));
        assert!(a
            .tensor("embeddings.token")
            .unwrap()
            .iter()
            .all(|v| v.abs() <= 2.0 * init_sigma()));
    }

    /// Statistical oracle: the truncated-normal standard deviation factor,
    /// computed independently by midpoint quadrature of the N(0,1) density
    /// over [-2, 2], and the empirical spread of the token embeddings.
    #[test]
    fn init_scale() {
        let steps = 200_000;
        let dx = 4.0 / steps as f64;
        let (mut mass, mut second) = (0.0, 0.0);
        for i in 0..steps {
            let x = -2.0 + (i as f64 + 0.5) * dx;
            let d = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
            mass += d * dx;
            second += x * x * d * dx;
        }
        let factor = (second / mass).sqrt();
        assert!((factor - TRUNCATED_UNIT_STD).abs() < 1e-6, "{factor}");

        let c = EncoderConfig {
            vocab_size: 500,
            ..cfg(32)
        };
        let p = init_params(&c, 3).unwrap();
        let tok = p.tensor("embeddings.token").unwrap();
        let n = tok.len() as f64;
        let mean = tok.iter().sum::<f64>() / n;
        let sd = (tok.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((sd - INIT_STD).abs() / INIT_STD < 0.10, "sd {sd}");
        assert!(mean.abs() < 1e-3);
    }

    #[test]
    fn lineage_rules() {
        let mut p = init_params(&cfg(16), 1).unwrap();
        let rec = |stage| StageRecord {
            stage,
            config_hash: "h".into(),
            seed: 1,
        };
        assert!(p.clone().push_stage(rec(CheckpointStage::ThetaKQ)).is_err());
        p.push_stage(rec(CheckpointStage::ThetaK)).unwrap();
        p.push_stage(rec(CheckpointStage::ThetaKQ)).unwrap();
        assert_eq!(p.parent_stage(), Some(CheckpointStage::ThetaK));
        p.push_stage(rec(CheckpointStage::ThetaF)).unwrap();
        assert!(p.clone().push_stage(rec(CheckpointStage::ThetaF)).is_err());
        assert_eq!(p.lineage[0].stage, CheckpointStage::Init);
    }
}
