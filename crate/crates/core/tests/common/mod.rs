//! Shared fixtures and independent reference implementations for the
//! integration and acceptance suites.
#![allow(dead_code)]

use deid::model::{forward, loss_and_grad, Mode, ModelConfig, ParamKind, TaggerModel};
use deid::tags::{BioLabel, ClassLabel};
use deid::tokenizer_align::{SubwordEncoding, IGNORE_LABEL, NO_WORD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The small gradient-check configuration: V=50, H=8, A=2, L=2, F=16, C=41.
pub fn gradcheck_config(shared: bool) -> ModelConfig {
    let mut cfg = ModelConfig::tiny(50, 16);
    cfg.embedding_dim = if shared { 4 } else { 8 };
    cfg.hidden_dim = 8;
    cfg.num_heads = 2;
    cfg.num_layers = 2;
    cfg.ffn_dim = 16;
    cfg.share_layers = shared;
    cfg.factorized_embedding = shared;
    cfg.num_labels = BioLabel::COUNT;
    cfg.dropout = 0.0;
    cfg
}

/// Every parameter drawn uniformly from `center ± spread`, with LayerNorm
/// scales centered on 1, so that no gradient is degenerate.
pub fn scrambled_model(cfg: &ModelConfig, seed: u64) -> TaggerModel<f64> {
    let mut model = TaggerModel::<f64>::zeros(cfg);
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    for spec in model.specs() {
        let center = if spec.kind == ParamKind::NormScale { 1.0 } else { 0.0 };
        for v in model.get_mut(spec.slot) {
            *v = center + r.gen_range(-0.5..0.5);
        }
    }
    model
}

pub fn random_window(rng: &mut ChaCha8Rng, vocab: usize, len: usize) -> SubwordEncoding {
    let mut label_ids = Vec::with_capacity(len);
    for i in 0..len {
        let edge = i == 0 || i + 1 == len;
        label_ids.push(if edge || rng.gen_bool(0.2) {
            IGNORE_LABEL
        } else {
            rng.gen_range(0..BioLabel::COUNT as i32)
        });
    }
    if label_ids.iter().all(|&l| l == IGNORE_LABEL) {
        label_ids[len / 2] = 7;
    }
    SubwordEncoding {
        doc_id: "g".into(),
        window_index: 0,
        input_ids: (0..len).map(|_| rng.gen_range(0..vocab as u32)).collect(),
        word_index: vec![NO_WORD; len],
        label_ids,
        attention_mask: vec![1; len],
    }
}

/// Mean cross-entropy of `batch` in evaluation mode, computed through the
/// forward pass alone.
pub fn loss_only(model: &TaggerModel<f64>, batch: &[SubwordEncoding]) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for enc in batch {
        let logits = forward(model, enc, Mode::Eval).unwrap().logits;
        for (i, &label) in enc.label_ids.iter().enumerate() {
            if label == IGNORE_LABEL {
                continue;
            }
            let row = logits.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[label as usize];
            n += 1;
        }
    }
    total / n as f64
}

pub struct TensorCheck {
    pub name: String,
    pub max_abs_err: f64,
    /// `max |analytic - numeric| / max(|analytic| + |numeric|, floor)`.
    pub max_rel_err: f64,
}

/// Central differences with step `h` on every parameter, against the
/// analytic gradient.
pub fn gradient_check(model: &TaggerModel<f64>, batch: &[SubwordEncoding], h: f64, floor: f64) -> Vec<TensorCheck> {
    let (_, grads) = loss_and_grad(model, batch, Mode::Eval).unwrap();
    let mut probe = model.clone();
    let mut out = Vec::new();
    for spec in model.specs() {
        let analytic = grads.get(spec.slot).to_vec();
        let mut max_abs: f64 = 0.0;
        let mut max_rel: f64 = 0.0;
        for k in 0..analytic.len() {
            let orig = probe.get(spec.slot)[k];
            probe.get_mut(spec.slot)[k] = orig + h;
            let up = loss_only(&probe, batch);
            probe.get_mut(spec.slot)[k] = orig - h;
            let down = loss_only(&probe, batch);
            probe.get_mut(spec.slot)[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let diff = (analytic[k] - numeric).abs();
            max_abs = max_abs.max(diff);
            max_rel = max_rel.max(diff / (analytic[k].abs() + numeric.abs()).max(floor));
        }
        out.push(TensorCheck {
            name: spec.name,
            max_abs_err: max_abs,
            max_rel_err: max_rel,
        });
    }
    out
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Naive triple-loop scaled dot-product attention.
pub fn naive_attention(q: &[Vec<f64>], k: &[Vec<f64>], v: &[Vec<f64>], mask: &[bool]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let d = q[0].len() as f64;
    let mut out = Vec::new();
    let mut probs = Vec::new();
    for qi in q {
        let mut scores = Vec::new();
        for (j, kj) in k.iter().enumerate() {
            let mut s = 0.0;
            for t in 0..qi.len() {
                s += qi[t] * kj[t];
            }
            scores.push(if mask[j] { s / d.sqrt() } else { f64::NEG_INFINITY });
        }
        let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
        let z: f64 = e.iter().sum();
        let p: Vec<f64> = e.iter().map(|x| x / z).collect();
        let mut row = vec![0.0; v[0].len()];
        for (j, vj) in v.iter().enumerate() {
            for c in 0..row.len() {
                row[c] += p[j] * vj[c];
            }
        }
        out.push(row);
        probs.push(p);
    }
    (out, probs)
}

/// Brute-force confusion recount: `(tp, fp, fn)` per class id plus
/// `(correct, total)`.
pub fn brute_counts(gold: &[ClassLabel], pred: &[ClassLabel]) -> (Vec<[u64; 3]>, u64, u64) {
    let mut per = vec![[0u64; 3]; ClassLabel::COUNT];
    let mut correct = 0;
    for class in ClassLabel::all() {
        let c = &mut per[class.id()];
        for i in 0..gold.len() {
            let g = gold[i] == class;
            let p = pred[i] == class;
            if g && p {
                c[0] += 1;
            }
            if !g && p {
                c[1] += 1;
            }
            if g && !p {
                c[2] += 1;
            }
        }
    }
    for i in 0..gold.len() {
        if gold[i] == pred[i] {
            correct += 1;
        }
    }
    (per, correct, gold.len() as u64)
}
