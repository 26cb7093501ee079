//! Forward pass with a recorded trace, and the matching hand-derived backward
//! pass.

use ndarray::{s, Array1, Array2, ArrayView1, Axis, Zip};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::attention::{attention, attention_backward};
use super::params::{Layer, TaggerModel};
use super::{ModelError, Real, Result};
use crate::tokenizer_align::{SubwordEncoding, IGNORE_LABEL};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Dropout on, masks drawn from a generator seeded with this value.
    Train(u64),
}

#[derive(Debug, Clone)]
struct NormCache<T> {
    normalized: Array2<T>,
    inv_std: Array1<T>,
}

#[derive(Debug, Clone)]
pub struct LayerTrace<T> {
    x_in: Array2<T>,
    q: Array2<T>,
    k: Array2<T>,
    v: Array2<T>,
    /// One `n x n` probability matrix per head.
    pub probs: Vec<Array2<T>>,
    ctx: Array2<T>,
    attn_drop: Option<Array2<T>>,
    norm1: NormCache<T>,
    x1: Array2<T>,
    h_pre: Array2<T>,
    h_act: Array2<T>,
    ffn_drop: Option<Array2<T>>,
    norm2: NormCache<T>,
}

#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    input_ids: Vec<u32>,
    emb_norm: NormCache<T>,
    emb_drop: Option<Array2<T>>,
    emb_out: Array2<T>,
    pub layers: Vec<LayerTrace<T>>,
    pub hidden: Array2<T>,
    /// `sequence length x num_labels`.
    pub logits: Array2<T>,
}

fn layer_norm<T: Real>(x: &Array2<T>, g: &Array1<T>, b: &Array1<T>, eps: f64) -> (Array2<T>, NormCache<T>) {
    let d = T::of(x.ncols() as f64);
    let mut normalized = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, is) in normalized.axis_iter_mut(Axis(0)).zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|&v| v * v).sum::<T>() / d;
        *is = T::one() / (var + T::of(eps)).sqrt();
        let s = *is;
        row.mapv_inplace(|v| v * s);
    }
    let y = &normalized * g + b;
    (y, NormCache { normalized, inv_std })
}

/// Returns `(dx, dγ, dβ)`.
fn layer_norm_backward<T: Real>(dy: &Array2<T>, cache: &NormCache<T>, g: &Array1<T>) -> (Array2<T>, Array1<T>, Array1<T>) {
    let d_gamma = (dy * &cache.normalized).sum_axis(Axis(0));
    let d_beta = dy.sum_axis(Axis(0));
    let dn = dy * g;
    let d = T::of(dy.ncols() as f64);
    let mut dx = Array2::zeros(dy.raw_dim());
    for ((mut out, dnr), (xr, &is)) in dx
        .axis_iter_mut(Axis(0))
        .zip(dn.axis_iter(Axis(0)))
        .zip(cache.normalized.axis_iter(Axis(0)).zip(cache.inv_std.iter()))
    {
        let mean_dn = dnr.sum() / d;
        let mean_dn_x = dnr.iter().zip(xr.iter()).map(|(&a, &b)| a * b).sum::<T>() / d;
        Zip::from(&mut out)
            .and(&dnr)
            .and(&xr)
            .for_each(|o, &a, &xh| *o = is * (a - mean_dn - xh * mean_dn_x));
    }
    (dx, d_gamma, d_beta)
}

fn linear<T: Real>(x: &Array2<T>, w: &Array2<T>, b: &Array1<T>) -> Array2<T> {
    x.dot(w) + b
}

fn gelu<T: Real>(x: T) -> T {
    let half = T::of(0.5);
    x * half * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let cdf = T::of(0.5) * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * T::of(0.5)).exp() * T::of(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    cdf + x * pdf
}

fn dropout_mask<T: Real>(shape: (usize, usize), p: f64, rng: &mut ChaCha8Rng) -> Array2<T> {
    let keep = T::of(1.0 / (1.0 - p));
    Array2::from_shape_simple_fn(shape, || if rng.gen::<f64>() < p { T::zero() } else { keep })
}

struct Dropout {
    p: f64,
    rng: Option<ChaCha8Rng>,
}

impl Dropout {
    fn apply<T: Real>(&mut self, x: Array2<T>) -> (Array2<T>, Option<Array2<T>>) {
        match &mut self.rng {
            Some(rng) if self.p > 0.0 => {
                let mask = dropout_mask(x.dim(), self.p, rng);
                (x * &mask, Some(mask))
            }
            _ => (x, None),
        }
    }
}

fn heads(dim: usize, num_heads: usize) -> impl Iterator<Item = std::ops::Range<usize>> {
    let dk = dim / num_heads;
    (0..num_heads).map(move |h| h * dk..(h + 1) * dk)
}

/// Runs the encoder and classifier over one window.
pub fn forward<T: Real>(model: &TaggerModel<T>, enc: &SubwordEncoding, mode: Mode) -> Result<ForwardTrace<T>> {
    let cfg = &model.config;
    let n = enc.input_ids.len();
    if n == 0 {
        return Err(ModelError::Input("empty window".into()));
    }
    if n > cfg.max_positions {
        return Err(ModelError::Input(format!("window length {n} exceeds max_positions {}", cfg.max_positions)));
    }
    if let Some(&bad) = enc.input_ids.iter().find(|&&id| id as usize >= cfg.vocab_size) {
        return Err(ModelError::Input(format!("input id {bad} out of range for vocabulary of {}", cfg.vocab_size)));
    }
    let key_mask: Vec<bool> = if enc.attention_mask.len() == n {
        enc.attention_mask.iter().map(|&m| m != 0).collect()
    } else {
        vec![true; n]
    };
    let mut dropout = Dropout {
        p: cfg.dropout,
        rng: match mode {
            Mode::Eval => None,
            Mode::Train(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        },
    };

    let mut x0 = Array2::zeros((n, cfg.embedding_dim));
    for (i, mut row) in x0.axis_iter_mut(Axis(0)).enumerate() {
        let id = enc.input_ids[i] as usize;
        Zip::from(&mut row)
            .and(model.word_emb.row(id))
            .and(model.pos_emb.row(i))
            .and(model.type_emb.row(0))
            .for_each(|o, &w, &p, &t| *o = w + p + t);
    }
    let (emb, emb_norm) = layer_norm(&x0, &model.emb_norm_g, &model.emb_norm_b, cfg.layer_norm_eps);
    let (emb_out, emb_drop) = dropout.apply(emb);
    let mut x = match &model.mapping {
        Some((w, b)) => linear(&emb_out, w, b),
        None => emb_out.clone(),
    };

    let mut layers = Vec::with_capacity(cfg.num_layers);
    for depth in 0..cfg.num_layers {
        let p = model.layer(depth);
        let q = linear(&x, &p.query_w, &p.query_b);
        let k = linear(&x, &p.key_w, &p.key_b);
        let v = linear(&x, &p.value_w, &p.value_b);
        let mut ctx = Array2::zeros((n, cfg.hidden_dim));
        let mut probs = Vec::with_capacity(cfg.num_heads);
        for cols in heads(cfg.hidden_dim, cfg.num_heads) {
            let (out, pr) = attention(
                q.slice(s![.., cols.clone()]),
                k.slice(s![.., cols.clone()]),
                v.slice(s![.., cols.clone()]),
                Some(&key_mask),
            )?;
            ctx.slice_mut(s![.., cols]).assign(&out);
            probs.push(pr);
        }
        let a = linear(&ctx, &p.dense_w, &p.dense_b);
        let (a, attn_drop) = dropout.apply(a);
        let (x1, norm1) = layer_norm(&(&x + &a), &p.attn_norm_g, &p.attn_norm_b, cfg.layer_norm_eps);
        let h_pre = linear(&x1, &p.ffn_w, &p.ffn_b);
        let h_act = h_pre.mapv(gelu);
        let f = linear(&h_act, &p.ffn_out_w, &p.ffn_out_b);
        let (f, ffn_drop) = dropout.apply(f);
        let (x2, norm2) = layer_norm(&(&x1 + &f), &p.out_norm_g, &p.out_norm_b, cfg.layer_norm_eps);
        layers.push(LayerTrace {
            x_in: x,
            q,
            k,
            v,
            probs,
            ctx,
            attn_drop,
            norm1,
            x1,
            h_pre,
            h_act,
            ffn_drop,
            norm2,
        });
        x = x2;
    }
    let logits = linear(&x, &model.cls_w, &model.cls_b);
    Ok(ForwardTrace {
        input_ids: enc.input_ids.clone(),
        emb_norm,
        emb_drop,
        emb_out,
        layers,
        hidden: x,
        logits,
    })
}

fn add_outer<T: Real>(dw: &mut Array2<T>, x: &Array2<T>, dy: &Array2<T>) {
    ndarray::linalg::general_mat_mul(T::one(), &x.t(), dy, T::one(), dw);
}

fn add_bias<T: Real>(db: &mut Array1<T>, dy: &Array2<T>) {
    *db += &dy.sum_axis(Axis(0));
}

fn backward_layer<T: Real>(p: &Layer<T>, g: &mut Layer<T>, t: &LayerTrace<T>, dx2: Array2<T>, num_heads: usize) -> Array2<T> {
    // x2 = LN2(x1 + drop(f))
    let (dz2, dg2, db2) = layer_norm_backward(&dx2, &t.norm2, &p.out_norm_g);
    g.out_norm_g += &dg2;
    g.out_norm_b += &db2;
    let mut dx1 = dz2.clone();
    let df = match &t.ffn_drop {
        Some(mask) => dz2 * mask,
        None => dz2,
    };
    add_outer(&mut g.ffn_out_w, &t.h_act, &df);
    add_bias(&mut g.ffn_out_b, &df);
    let mut dh = df.dot(&p.ffn_out_w.t());
    Zip::from(&mut dh).and(&t.h_pre).for_each(|d, &h| *d = *d * gelu_grad(h));
    add_outer(&mut g.ffn_w, &t.x1, &dh);
    add_bias(&mut g.ffn_b, &dh);
    dx1 += &dh.dot(&p.ffn_w.t());

    // x1 = LN1(x_in + drop(ctx Wo + bo))
    let (dz1, dg1, db1) = layer_norm_backward(&dx1, &t.norm1, &p.attn_norm_g);
    g.attn_norm_g += &dg1;
    g.attn_norm_b += &db1;
    let mut dx_in = dz1.clone();
    let da = match &t.attn_drop {
        Some(mask) => dz1 * mask,
        None => dz1,
    };
    add_outer(&mut g.dense_w, &t.ctx, &da);
    add_bias(&mut g.dense_b, &da);
    let dctx = da.dot(&p.dense_w.t());

    let mut dq = Array2::zeros(t.q.raw_dim());
    let mut dk = Array2::zeros(t.k.raw_dim());
    let mut dv = Array2::zeros(t.v.raw_dim());
    for (h, cols) in heads(t.q.ncols(), num_heads).enumerate() {
        let (gq, gk, gv) = attention_backward(
            t.q.slice(s![.., cols.clone()]),
            t.k.slice(s![.., cols.clone()]),
            t.v.slice(s![.., cols.clone()]),
            t.probs[h].view(),
            dctx.slice(s![.., cols.clone()]),
        );
        dq.slice_mut(s![.., cols.clone()]).assign(&gq);
        dk.slice_mut(s![.., cols.clone()]).assign(&gk);
        dv.slice_mut(s![.., cols]).assign(&gv);
    }
    add_outer(&mut g.query_w, &t.x_in, &dq);
    add_bias(&mut g.query_b, &dq);
    add_outer(&mut g.key_w, &t.x_in, &dk);
    add_bias(&mut g.key_b, &dk);
    add_outer(&mut g.value_w, &t.x_in, &dv);
    add_bias(&mut g.value_b, &dv);
    dx_in += &dq.dot(&p.query_w.t());
    dx_in += &dk.dot(&p.key_w.t());
    dx_in += &dv.dot(&p.value_w.t());
    dx_in
}

/// Gradients of every parameter given `d loss / d logits`. Shared-layer
/// models accumulate all depths into the single shared set.
pub fn backward<T: Real>(model: &TaggerModel<T>, trace: &ForwardTrace<T>, d_logits: &Array2<T>) -> TaggerModel<T> {
    let cfg = &model.config;
    let mut grads = TaggerModel::zeros(cfg);
    add_outer(&mut grads.cls_w, &trace.hidden, d_logits);
    add_bias(&mut grads.cls_b, d_logits);
    let mut dx = d_logits.dot(&model.cls_w.t());

    for depth in (0..cfg.num_layers).rev() {
        let p = model.layer(depth);
        let g = grads.layer_mut(depth);
        dx = backward_layer(p, g, &trace.layers[depth], dx, cfg.num_heads);
    }

    let d_emb_out = match (&model.mapping, &mut grads.mapping) {
        (Some((w, _)), Some((gw, gb))) => {
            add_outer(gw, &trace.emb_out, &dx);
            add_bias(gb, &dx);
            dx.dot(&w.t())
        }
        _ => dx,
    };
    let d_emb = match &trace.emb_drop {
        Some(mask) => d_emb_out * mask,
        None => d_emb_out,
    };
    let (dx0, dg, db) = layer_norm_backward(&d_emb, &trace.emb_norm, &model.emb_norm_g);
    grads.emb_norm_g += &dg;
    grads.emb_norm_b += &db;
    for (i, row) in dx0.axis_iter(Axis(0)).enumerate() {
        let id = trace.input_ids[i] as usize;
        add_row(&mut grads.word_emb, id, row);
        add_row(&mut grads.pos_emb, i, row);
        add_row(&mut grads.type_emb, 0, row);
    }
    grads
}

fn add_row<T: Real>(m: &mut Array2<T>, r: usize, v: ArrayView1<T>) {
    let mut row = m.row_mut(r);
    row += &v;
}

/// Sum of token cross-entropies over labeled positions, and the gradient of
/// that sum times `scale` with respect to the logits.
fn cross_entropy<T: Real>(logits: &Array2<T>, labels: &[i32], scale: T) -> Result<(T, Array2<T>)> {
    let c = logits.ncols();
    let mut d = Array2::zeros(logits.raw_dim());
    let mut loss = T::zero();
    for (i, &label) in labels.iter().enumerate() {
        if label == IGNORE_LABEL {
            continue;
        }
        if label < 0 || label as usize >= c {
            return Err(ModelError::Input(format!("label id {label} out of range for {c} labels")));
        }
        let row = logits.row(i);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = row.iter().map(|&z| (z - max).exp()).sum();
        let log_z = max + sum.ln();
        loss = loss + log_z - row[label as usize];
        let mut drow = d.row_mut(i);
        for (j, dv) in drow.iter_mut().enumerate() {
            *dv = (row[j] - log_z).exp() * scale;
        }
        drow[label as usize] = drow[label as usize] - scale;
    }
    Ok((loss, d))
}

/// Mean token cross-entropy over every non-ignored position of the batch, and
/// its gradient. Windows run in parallel; gradients are summed in batch order
/// so the result does not depend on scheduling.
///
/// In `Mode::Train(seed)` window `i` draws its dropout masks from `seed + i`.
pub fn loss_and_grad<T: Real>(model: &TaggerModel<T>, batch: &[SubwordEncoding], mode: Mode) -> Result<(T, TaggerModel<T>)> {
    let total: usize = batch.iter().map(SubwordEncoding::labeled_positions).sum();
    if total == 0 {
        return Err(ModelError::EmptyBatch);
    }
    let scale = T::one() / T::of(total as f64);
    let parts: Vec<(T, TaggerModel<T>)> = batch
        .par_iter()
        .enumerate()
        .map(|(i, enc)| {
            let window_mode = match mode {
                Mode::Eval => Mode::Eval,
                Mode::Train(seed) => Mode::Train(seed.wrapping_add(i as u64)),
            };
            let trace = forward(model, enc, window_mode)?;
            if enc.label_ids.len() != enc.input_ids.len() {
                return Err(ModelError::Shape("label_ids and input_ids differ in length".into()));
            }
            let (loss, d_logits) = cross_entropy(&trace.logits, &enc.label_ids, scale)?;
            Ok((loss, backward(model, &trace, &d_logits)))
        })
        .collect::<Result<_>>()?;
    let mut iter = parts.into_iter();
    let (mut loss, mut grads) = iter.next().expect("batch is non-empty");
    for (l, g) in iter {
        loss = loss + l;
        grads.add_assign(&g);
    }
    Ok((loss * scale, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, ModelConfig};
    use crate::tokenizer_align::NO_WORD;

    fn window(ids: &[u32], labels: &[i32]) -> SubwordEncoding {
        SubwordEncoding {
            doc_id: "d".into(),
            window_index: 0,
            input_ids: ids.to_vec(),
            word_index: vec![NO_WORD; ids.len()],
            label_ids: labels.to_vec(),
            attention_mask: vec![1; ids.len()],
        }
    }

    #[test]
    fn uniform_logits_give_log_c() {
        let logits = Array2::<f64>::zeros((3, 41));
        let (loss, _) = cross_entropy(&logits, &[0, IGNORE_LABEL, 40], 1.0).unwrap();
        assert!((loss / 2.0 - 41f64.ln()).abs() < 1e-12);
        assert!((41f64.ln() - 3.7136).abs() < 1e-4);
    }

    #[test]
    fn classifier_bias_gradient_is_softmax_minus_onehot() {
        let cfg = ModelConfig::tiny(30, 8);
        let model: TaggerModel<f64> = init_model(&cfg, 4).unwrap();
        let enc = window(&[7], &[5]);
        let trace = forward(&model, &enc, Mode::Eval).unwrap();
        let (_, grads) = loss_and_grad(&model, &[enc], Mode::Eval).unwrap();
        let row = trace.logits.row(0);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
        for j in 0..41 {
            let p = (row[j] - max).exp() / z;
            let expected = p - if j == 5 { 1.0 } else { 0.0 };
            assert!((grads.cls_b[j] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn all_ignored_is_an_error() {
        let cfg = ModelConfig::tiny(30, 8);
        let model: TaggerModel<f64> = init_model(&cfg, 4).unwrap();
        let enc = window(&[1, 2], &[IGNORE_LABEL, IGNORE_LABEL]);
        assert!(matches!(loss_and_grad(&model, &[enc], Mode::Eval), Err(ModelError::EmptyBatch)));
    }

    #[test]
    fn rejects_out_of_range_ids() {
        let cfg = ModelConfig::tiny(30, 8);
        let model: TaggerModel<f64> = init_model(&cfg, 4).unwrap();
        assert!(matches!(forward(&model, &window(&[30], &[0]), Mode::Eval), Err(ModelError::Input(_))));
        let long: Vec<u32> = vec![1; 9];
        assert!(forward(&model, &window(&long, &[0; 9]), Mode::Eval).is_err());
    }

    #[test]
    fn gelu_matches_tanh_approximation_loosely() {
        for i in -40..=40 {
            let x = i as f64 / 10.0;
            let tanh = 0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh());
            assert!((gelu(x) - tanh).abs() < 1e-3);
        }
        // derivative by central difference
        for i in -30..=30 {
            let x = i as f64 / 10.0;
            let fd = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6;
            assert!((gelu_grad(x) - fd).abs() < 1e-8);
        }
    }
}
