//! Forward and reverse-mode passes of the encoder.
//!
//! Layer stack (post-norm, as in BERT):
//!
//! ```text
//! h0 = dropout(tok + pos + seg)
//! for each layer:
//!     a  = MultiHeadAttention(h)          // padding positions never attended
//!     h' = LayerNorm(h + dropout(a))
//!     f  = W2 · gelu(W1 · h' + b1) + b2
//!     h  = LayerNorm(h' + dropout(f))
//! logits = Wc · h[CLS] + bc
//! ```
//!
//! Padding positions are excluded from attention keys, so they cannot
//! influence any real position; the passes therefore run on the non-padding
//! positions only.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LayerOffsets, ModelParams};
use crate::encoding::EncodedSequence;
use crate::error::{Error, Result};
use crate::exec::Execution;

const LN_EPS: f64 = 1e-12;
/// Examples per gradient accumulation chunk. Fixed so that the reduction
/// order does not depend on the number of worker threads.
const GRAD_CHUNK: usize = 8;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutMode {
    /// No dropout (evaluation).
    Off,
    /// Dropout masks drawn from `seed`, one independent stream per batch position.
    Sampled { seed: u64 },
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// batch × 2
    pub logits: Array2<f64>,
    /// batch × hidden
    pub cls: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct LossAndGradients {
    pub loss: f64,
    /// Same layout as `ModelParams::values`.
    pub gradients: Vec<f64>,
}

fn view1(v: &[f64], off: usize, n: usize) -> ArrayView1<'_, f64> {
    ArrayView1::from(&v[off..off + n])
}

fn view2(v: &[f64], off: usize, r: usize, c: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((r, c), &v[off..off + r * c]).expect("layout shape")
}

fn view1_mut(v: &mut [f64], off: usize, n: usize) -> ArrayViewMut1<'_, f64> {
    ArrayViewMut1::from(&mut v[off..off + n])
}

fn view2_mut(v: &mut [f64], off: usize, r: usize, c: usize) -> ArrayViewMut2<'_, f64> {
    ArrayViewMut2::from_shape((r, c), &mut v[off..off + r * c]).expect("layout shape")
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// x · W + b
fn affine(x: &Array2<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let mut y = x.dot(&w);
    y += &b;
    y
}

/// g[w] += aᵀ · d and g[b] += Σ_rows d for an affine map with input `a`.
fn accumulate_affine(grads: &mut [f64], w_off: usize, b_off: usize, a: &Array2<f64>, d: &Array2<f64>) {
    let (rows, cols) = (a.ncols(), d.ncols());
    {
        let mut gw = view2_mut(grads, w_off, rows, cols);
        general_mat_mul(1.0, &a.t(), d, 1.0, &mut gw);
    }
    let mut gb = view1_mut(grads, b_off, cols);
    gb += &d.sum_axis(Axis(0));
}

fn dropout_mask(rng: &mut ChaCha8Rng, rate: f64, rows: usize, cols: usize) -> Array2<f64> {
    let keep = 1.0 / (1.0 - rate);
    Array2::from_shape_fn((rows, cols), |_| if rng.random::<f64>() < rate { 0.0 } else { keep })
}

#[derive(Debug, Clone)]
struct NormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

fn layer_norm(x: &Array2<f64>, gain: ArrayView1<f64>, bias: ArrayView1<f64>) -> (Array2<f64>, NormCache) {
    let h = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, inv) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / h;
        row -= mean;
        let var = row.iter().map(|v| v * v).sum::<f64>() / h;
        *inv = 1.0 / (var + LN_EPS).sqrt();
        row *= *inv;
    }
    let mut y = &xhat * &gain;
    y += &bias;
    (y, NormCache { xhat, inv_std })
}

fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &NormCache,
    gain: ArrayView1<f64>,
    grads: &mut [f64],
    g_off: usize,
    b_off: usize,
) -> Array2<f64> {
    let h = dy.ncols();
    {
        let mut gg = view1_mut(grads, g_off, h);
        gg += &(dy * &cache.xhat).sum_axis(Axis(0));
    }
    {
        let mut gb = view1_mut(grads, b_off, h);
        gb += &dy.sum_axis(Axis(0));
    }
    let dxhat = dy * &gain;
    let mut dx = Array2::zeros(dy.raw_dim());
    let hf = h as f64;
    for (i, mut row) in dx.rows_mut().into_iter().enumerate() {
        let dxh = dxhat.row(i);
        let xh = cache.xhat.row(i);
        let mean_d = dxh.sum() / hf;
        let mean_dx = dxh.dot(&xh) / hf;
        let inv = cache.inv_std[i];
        for j in 0..h {
            row[j] = inv * (dxh[j] - mean_d - xh[j] * mean_dx);
        }
    }
    dx
}

#[derive(Debug, Clone)]
struct LayerCache {
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    ctx: Array2<f64>,
    attn_mask: Option<Array2<f64>>,
    norm1: NormCache,
    y1: Array2<f64>,
    pre: Array2<f64>,
    act: Array2<f64>,
    ffn_mask: Option<Array2<f64>>,
    norm2: NormCache,
}

#[derive(Debug, Clone)]
struct Trace {
    positions: Vec<usize>,
    tokens: Vec<usize>,
    segments: Vec<usize>,
    embed_mask: Option<Array2<f64>>,
    layers: Vec<LayerCache>,
    cls: Array1<f64>,
}

fn check_finite(a: &Array2<f64>, location: impl FnOnce() -> String) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric { location: location() })
    }
}

fn forward_one(params: &ModelParams, seq: &EncodedSequence, mut rng: Option<ChaCha8Rng>) -> Result<([f64; 2], Trace)> {
    let cfg = &params.config;
    let lay = &params.layout;
    let p = &params.values;
    let h = cfg.hidden_size;
    let rate = cfg.dropout_rate;
    if rate == 0.0 {
        rng = None;
    }

    let positions = seq.active_positions();
    if positions.is_empty() {
        return Err(Error::Encoding("sequence has no active positions".into()));
    }
    if seq.token_ids.len() > cfg.max_len {
        return Err(Error::Encoding(format!(
            "sequence length {} exceeds max_len {}",
            seq.token_ids.len(),
            cfg.max_len
        )));
    }
    let n = positions.len();
    let mut tokens = Vec::with_capacity(n);
    let mut segments = Vec::with_capacity(n);
    let mut x = Array2::zeros((n, h));
    for (r, &pos) in positions.iter().enumerate() {
        let tok = seq.token_ids[pos] as usize;
        if tok >= cfg.vocab_size {
            return Err(Error::Encoding(format!(
                "token id {tok} outside vocabulary of {}",
                cfg.vocab_size
            )));
        }
        let seg = usize::from(seq.segment_ids[pos].min(1));
        let mut row = x.row_mut(r);
        row += &view1(p, lay.token + tok * h, h);
        row += &view1(p, lay.position + pos * h, h);
        row += &view1(p, lay.segment + seg * h, h);
        tokens.push(tok);
        segments.push(seg);
    }
    let embed_mask = rng.as_mut().map(|r| dropout_mask(r, rate, n, h));
    if let Some(m) = &embed_mask {
        x *= m;
    }
    check_finite(&x, || "embeddings".into())?;

    let heads = cfg.num_heads;
    let d = cfg.head_dim();
    let scale = 1.0 / (d as f64).sqrt();
    let ff = cfg.feed_forward_size;
    let mut layers = Vec::with_capacity(cfg.num_layers);
    for (l, o) in lay.layers.iter().enumerate() {
        let q = affine(&x, view2(p, o.wq, h, h), view1(p, o.bq, h));
        let k = affine(&x, view2(p, o.wk, h, h), view1(p, o.bk, h));
        let v = affine(&x, view2(p, o.wv, h, h), view1(p, o.bv, h));
        let mut ctx = Array2::zeros((n, h));
        let mut probs = Vec::with_capacity(heads);
        for hd in 0..heads {
            let cols = s![.., hd * d..(hd + 1) * d];
            let mut sc = q.slice(cols).dot(&k.slice(cols).t());
            sc *= scale;
            for mut row in sc.rows_mut() {
                let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                row.mapv_inplace(|v| (v - m).exp());
                let z = row.sum();
                row /= z;
            }
            ctx.slice_mut(cols).assign(&sc.dot(&v.slice(cols)));
            probs.push(sc);
        }
        let mut attn = affine(&ctx, view2(p, o.wo, h, h), view1(p, o.bo, h));
        let attn_mask = rng.as_mut().map(|r| dropout_mask(r, rate, n, h));
        if let Some(m) = &attn_mask {
            attn *= m;
        }
        attn += &x;
        let (y1, norm1) = layer_norm(&attn, view1(p, o.ln1_g, h), view1(p, o.ln1_b, h));

        let pre = affine(&y1, view2(p, o.w1, h, ff), view1(p, o.b1, ff));
        let act = pre.mapv(gelu);
        let mut f = affine(&act, view2(p, o.w2, ff, h), view1(p, o.b2, h));
        let ffn_mask = rng.as_mut().map(|r| dropout_mask(r, rate, n, h));
        if let Some(m) = &ffn_mask {
            f *= m;
        }
        f += &y1;
        let (y2, norm2) = layer_norm(&f, view1(p, o.ln2_g, h), view1(p, o.ln2_b, h));
        check_finite(&y2, || format!("layer {l}"))?;

        layers.push(LayerCache {
            x: std::mem::replace(&mut x, y2),
            q,
            k,
            v,
            probs,
            ctx,
            attn_mask,
            norm1,
            y1,
            pre,
            act,
            ffn_mask,
            norm2,
        });
    }

    let cls = x.row(0).to_owned();
    let wc = view2(p, lay.cls_w, h, 2);
    let bc = view1(p, lay.cls_b, 2);
    let out = cls.dot(&wc) + bc;
    let logits = [out[0], out[1]];
    if !logits.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric {
            location: "classifier".into(),
        });
    }
    Ok((
        logits,
        Trace {
            positions,
            tokens,
            segments,
            embed_mask,
            layers,
            cls,
        },
    ))
}

fn backward_one(params: &ModelParams, trace: &Trace, dlogits: [f64; 2], grads: &mut [f64]) {
    let cfg = &params.config;
    let lay = &params.layout;
    let p = &params.values;
    let h = cfg.hidden_size;
    let ff = cfg.feed_forward_size;
    let n = trace.positions.len();
    let d = cfg.head_dim();
    let scale = 1.0 / (d as f64).sqrt();

    let dl = Array1::from(dlogits.to_vec());
    {
        let mut gw = view2_mut(grads, lay.cls_w, h, 2);
        for i in 0..h {
            for j in 0..2 {
                gw[[i, j]] += trace.cls[i] * dl[j];
            }
        }
        let mut gb = view1_mut(grads, lay.cls_b, 2);
        gb += &dl;
    }
    let mut dy = Array2::zeros((n, h));
    dy.row_mut(0).assign(&view2(p, lay.cls_w, h, 2).dot(&dl));

    for (c, o) in trace.layers.iter().zip(&lay.layers).rev() {
        let o: &LayerOffsets = o;
        // second sublayer
        let dz2 = layer_norm_backward(&dy, &c.norm2, view1(p, o.ln2_g, h), grads, o.ln2_g, o.ln2_b);
        let mut dy1 = dz2.clone();
        let mut df = dz2;
        if let Some(m) = &c.ffn_mask {
            df *= m;
        }
        accumulate_affine(grads, o.w2, o.b2, &c.act, &df);
        let dact = df.dot(&view2(p, o.w2, ff, h).t());
        let dpre = &dact * &c.pre.mapv(gelu_grad);
        accumulate_affine(grads, o.w1, o.b1, &c.y1, &dpre);
        dy1 += &dpre.dot(&view2(p, o.w1, h, ff).t());

        // first sublayer
        let dz1 = layer_norm_backward(&dy1, &c.norm1, view1(p, o.ln1_g, h), grads, o.ln1_g, o.ln1_b);
        let mut dx = dz1.clone();
        let mut da = dz1;
        if let Some(m) = &c.attn_mask {
            da *= m;
        }
        accumulate_affine(grads, o.wo, o.bo, &c.ctx, &da);
        let dctx = da.dot(&view2(p, o.wo, h, h).t());
        let mut dq = Array2::zeros((n, h));
        let mut dk = Array2::zeros((n, h));
        let mut dv = Array2::zeros((n, h));
        for (hd, probs) in c.probs.iter().enumerate() {
            let cols = s![.., hd * d..(hd + 1) * d];
            let dctx_h = dctx.slice(cols);
            let dp = dctx_h.dot(&c.v.slice(cols).t());
            dv.slice_mut(cols).assign(&probs.t().dot(&dctx_h));
            let mut ds = dp;
            for (mut row, prow) in ds.rows_mut().into_iter().zip(probs.rows()) {
                let dot = row.dot(&prow);
                row -= dot;
                row *= &prow;
            }
            ds *= scale;
            dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&c.q.slice(cols)));
        }
        accumulate_affine(grads, o.wq, o.bq, &c.x, &dq);
        accumulate_affine(grads, o.wk, o.bk, &c.x, &dk);
        accumulate_affine(grads, o.wv, o.bv, &c.x, &dv);
        dx += &dq.dot(&view2(p, o.wq, h, h).t());
        dx += &dk.dot(&view2(p, o.wk, h, h).t());
        dx += &dv.dot(&view2(p, o.wv, h, h).t());
        dy = dx;
    }

    if let Some(m) = &trace.embed_mask {
        dy *= m;
    }
    for (r, &pos) in trace.positions.iter().enumerate() {
        let row = dy.row(r);
        let mut g = view1_mut(grads, lay.token + trace.tokens[r] * h, h);
        g += &row;
        let mut g = view1_mut(grads, lay.position + pos * h, h);
        g += &row;
        let mut g = view1_mut(grads, lay.segment + trace.segments[r] * h, h);
        g += &row;
    }
}

fn example_rng(mode: DropoutMode, index: usize) -> Option<ChaCha8Rng> {
    match mode {
        DropoutMode::Off => None,
        DropoutMode::Sampled { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(index as u64);
            Some(rng)
        }
    }
}

/// Logits and CLS embeddings for a batch.
pub fn forward(
    params: &ModelParams,
    batch: &[EncodedSequence],
    mode: DropoutMode,
    exec: Execution,
) -> Result<ForwardOutput> {
    let rows = exec.map_indexed(batch, |i, seq| {
        forward_one(params, seq, example_rng(mode, i)).map(|(l, t)| (l, t.cls))
    });
    let h = params.config.hidden_size;
    let mut logits = Array2::zeros((batch.len(), 2));
    let mut cls = Array2::zeros((batch.len(), h));
    for (i, r) in rows.into_iter().enumerate() {
        let (l, c) = r?;
        logits[[i, 0]] = l[0];
        logits[[i, 1]] = l[1];
        cls.row_mut(i).assign(&c);
    }
    Ok(ForwardOutput { logits, cls })
}

/// Two-way softmax.
pub fn softmax2(logits: [f64; 2]) -> [f64; 2] {
    let p1 = score_from_logits(logits);
    [1.0 - p1, p1]
}

/// Class-1 probability `exp(l1) / (exp(l0) + exp(l1))`.
pub fn score_from_logits(logits: [f64; 2]) -> f64 {
    let z = logits[0] - logits[1];
    if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

/// Probability that `encoded` pairs a question with its correct answer.
pub fn score_pair(params: &ModelParams, encoded: &EncodedSequence) -> Result<f64> {
    forward_one(params, encoded, None).map(|(l, _)| score_from_logits(l))
}

pub fn score_pairs(params: &ModelParams, batch: &[EncodedSequence], exec: Execution) -> Result<Vec<f64>> {
    exec.map(batch, |seq| score_pair(params, seq)).into_iter().collect()
}

/// −log softmax(logits)[label] and its gradient w.r.t. the logits.
fn cross_entropy(logits: [f64; 2], label: u8) -> (f64, [f64; 2]) {
    let m = logits[0].max(logits[1]);
    let lse = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
    let y = usize::from(label == 1);
    let probs = softmax2(logits);
    let mut d = probs;
    d[y] -= 1.0;
    (lse - logits[y], d)
}

/// Mean cross-entropy over the batch and its exact gradient.
pub fn loss_and_gradients(
    params: &ModelParams,
    batch: &[EncodedSequence],
    labels: &[u8],
    mode: DropoutMode,
    exec: Execution,
) -> Result<LossAndGradients> {
    if batch.is_empty() || batch.len() != labels.len() {
        return Err(Error::Training(format!(
            "batch of {} sequences with {} labels",
            batch.len(),
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Training(format!("label {bad} is not 0 or 1")));
    }
    let inv_b = 1.0 / batch.len() as f64;
    let total = params.layout.total;
    let indices: Vec<usize> = (0..batch.len()).collect();
    let partials = exec.map_chunks(&indices, GRAD_CHUNK, |_, chunk| -> Result<(f64, Vec<f64>)> {
        let mut grads = vec![0.0; total];
        let mut loss = 0.0;
        for &i in chunk {
            let (logits, trace) = forward_one(params, &batch[i], example_rng(mode, i))?;
            let (l, d) = cross_entropy(logits, labels[i]);
            loss += l;
            backward_one(params, &trace, [d[0] * inv_b, d[1] * inv_b], &mut grads);
        }
        Ok((loss, grads))
    });
    let mut loss = 0.0;
    let mut gradients = vec![0.0; total];
    for part in partials {
        let (l, g) = part?;
        loss += l;
        for (a, b) in gradients.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok(LossAndGradients {
        loss: loss * inv_b,
        gradients,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::{build_vocab, encode_pair};
    use crate::model::{init_params, EncoderConfig};

    fn tiny(vocab: usize, dropout: f64) -> EncoderConfig {
        EncoderConfig {
            hidden_size: 16,
            num_layers: 2,
            num_heads: 2,
            feed_forward_size: 24,
            max_len: 12,
            vocab_size: vocab,
            dropout_rate: dropout,
        }
    }

    #[test]
    fn score_closed_forms() {
        assert_eq!(score_from_logits([0.0, 0.0]), 0.5);
        assert!((score_from_logits([0.0, 3f64.ln()]) - 0.75).abs() < 1e-15);
        let mut prev = 0.0;
        for i in -20..20 {
            let s = score_from_logits([0.3, i as f64 * 0.5]);
            assert!(s > prev);
            prev = s;
        }
        let p = softmax2([1.7, -40.0]);
        assert!((p[0] + p[1] - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn cross_entropy_closed_forms() {
        let (l, _) = cross_entropy([0.0, 0.0], 1);
        assert!((l - 2f64.ln()).abs() < 1e-15);
        assert!(cross_entropy([-20.0, 20.0], 1).0 < 1e-8);
        assert!(cross_entropy([20.0, -20.0], 0).0 < 1e-8);
        assert!(cross_entropy([1000.0, -1000.0], 1).0.is_finite());
    }

    #[test]
    fn shapes_and_purity() {
        let vocab = build_vocab(["ice is a kind of solid steam gas"], 1, 100);
        let params = init_params(&tiny(vocab.len(), 0.1), 3).unwrap();
        let seq = encode_pair("ice is a kind of", "solid", &vocab, 12).unwrap();
        let out = forward(
            &params,
            std::slice::from_ref(&seq),
            DropoutMode::Off,
            Execution::Sequential,
        )
        .unwrap();
        assert_eq!(out.logits.dim(), (1, 2));
        assert_eq!(out.cls.dim(), (1, 16));
        let two = forward(
            &params,
            &[seq.clone(), seq.clone()],
            DropoutMode::Off,
            Execution::Parallel,
        )
        .unwrap();
        assert_eq!(two.logits.row(0), two.logits.row(1));
        assert_eq!(two.cls.row(0), two.cls.row(1));
        assert_eq!(two.logits.row(0), out.logits.row(0));
        // dropout changes the result, but deterministically per seed
        let a = forward(
            &params,
            std::slice::from_ref(&seq),
            DropoutMode::Sampled { seed: 1 },
            Execution::Sequential,
        )
        .unwrap();
        let b = forward(
            &params,
            std::slice::from_ref(&seq),
            DropoutMode::Sampled { seed: 1 },
            Execution::Sequential,
        )
        .unwrap();
        assert_eq!(a.logits, b.logits);
        assert_ne!(a.logits, out.logits);
    }

    #[test]
    fn padding_is_inert() {
        let vocab = build_vocab(["a b c d e f"], 1, 100);
        let params = init_params(&tiny(vocab.len(), 0.0), 9).unwrap();
        let seq = encode_pair("a b", "c", &vocab, 12).unwrap();
        let mut other = seq.clone();
        for i in 0..other.len() {
            if other.attention_mask[i] == 0 {
                other.token_ids[i] = vocab.id("f");
                other.segment_ids[i] = 1;
            }
        }
        let x = forward(&params, &[seq], DropoutMode::Off, Execution::Sequential).unwrap();
        let y = forward(&params, &[other], DropoutMode::Off, Execution::Sequential).unwrap();
        assert_eq!(x.logits, y.logits);
    }

    #[test]
    fn out_of_range_token_rejected() {
        let params = init_params(&tiny(6, 0.0), 1).unwrap();
        let mut seq = encode_pair("", "", &crate::encoding::Vocabulary::specials_only(), 12).unwrap();
        seq.token_ids[1] = 99;
        assert!(score_pair(&params, &seq).is_err());
    }

    #[test]
    fn non_finite_weights_name_the_layer() {
        let mut params = init_params(&tiny(6, 0.0), 1).unwrap();
        let off = params.layout.layers[1].w1;
        params.values[off] = f64::NAN;
        let seq = encode_pair("", "", &crate::encoding::Vocabulary::specials_only(), 12).unwrap();
        match score_pair(&params, &seq) {
            Err(Error::Numeric { location }) => assert_eq!(location, "layer 1"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sequential_and_parallel_gradients_are_bit_identical() {
        let vocab = build_vocab(["a b c d e f g h"], 1, 100);
        let params = init_params(&tiny(vocab.len(), 0.1), 4).unwrap();
        let words = ["a", "b", "c", "d", "e", "f", "g", "h"];
        let batch: Vec<_> = (0..21)
            .map(|i| {
                encode_pair(
                    &format!("{} {}", words[i % 8], words[(i + 3) % 8]),
                    words[(i * 5) % 8],
                    &vocab,
                    12,
                )
                .unwrap()
            })
            .collect();
        let labels: Vec<u8> = (0..21).map(|i| (i % 2) as u8).collect();
        let mode = DropoutMode::Sampled { seed: 11 };
        let a = loss_and_gradients(&params, &batch, &labels, mode, Execution::Sequential).unwrap();
        let b = loss_and_gradients(&params, &batch, &labels, mode, Execution::Parallel).unwrap();
        assert_eq!(a.loss.to_bits(), b.loss.to_bits());
        assert_eq!(a.gradients, b.gradients);
    }
}
