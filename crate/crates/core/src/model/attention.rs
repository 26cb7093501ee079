use ndarray::{Array2, ArrayView2, Axis};

use super::{ModelError, Real, Result};

/// Scaled dot-product attention, `softmax(Q Kᵀ / √d_k) V`, with `d_k` the
/// column count of `q`.
///
/// `key_mask[j] == false` excludes key `j`: its score is −∞ before the
/// softmax, so it gets probability exactly 0. Returns the output and the
/// probability matrix.
pub fn attention<T: Real>(
    q: ArrayView2<T>,
    k: ArrayView2<T>,
    v: ArrayView2<T>,
    key_mask: Option<&[bool]>,
) -> Result<(Array2<T>, Array2<T>)> {
    let (n, d) = q.dim();
    let m = k.nrows();
    if k.ncols() != d {
        return Err(ModelError::Shape(format!("Q is {n}x{d} but K is {m}x{}", k.ncols())));
    }
    if v.nrows() != m {
        return Err(ModelError::Shape(format!("K has {m} rows but V has {}", v.nrows())));
    }
    if let Some(mask) = key_mask {
        if mask.len() != m {
            return Err(ModelError::Shape(format!("mask has {} entries for {m} keys", mask.len())));
        }
        if !mask.iter().any(|&b| b) {
            return Err(ModelError::Shape("every key position is masked".into()));
        }
    }
    if d == 0 || m == 0 {
        return Err(ModelError::Shape("empty attention operands".into()));
    }
    let scale = T::one() / T::of(d as f64).sqrt();
    let mut probs = q.dot(&k.t()) * scale;
    for mut row in probs.axis_iter_mut(Axis(0)) {
        if let Some(mask) = key_mask {
            for (s, &keep) in row.iter_mut().zip(mask) {
                if !keep {
                    *s = T::neg_infinity();
                }
            }
        }
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for s in row.iter_mut() {
            *s = (*s - max).exp();
            sum = sum + *s;
        }
        row.mapv_inplace(|s| s / sum);
    }
    let out = probs.dot(&v);
    Ok((out, probs))
}

/// Gradients of [`attention`] with respect to `(q, k, v)` given the upstream
/// gradient of its output and the saved probabilities.
pub fn attention_backward<T: Real>(
    q: ArrayView2<T>,
    k: ArrayView2<T>,
    v: ArrayView2<T>,
    probs: ArrayView2<T>,
    d_out: ArrayView2<T>,
) -> (Array2<T>, Array2<T>, Array2<T>) {
    let scale = T::one() / T::of(q.ncols() as f64).sqrt();
    let d_v = probs.t().dot(&d_out);
    let d_probs = d_out.dot(&v.t());
    let mut d_scores = d_probs;
    for (mut ds, p) in d_scores.axis_iter_mut(Axis(0)).zip(probs.axis_iter(Axis(0))) {
        let dot: T = ds.iter().zip(p.iter()).map(|(&a, &b)| a * b).sum();
        for (x, &pi) in ds.iter_mut().zip(p.iter()) {
            *x = pi * (*x - dot) * scale;
        }
    }
    let d_q = d_scores.dot(&k);
    let d_k = d_scores.t().dot(&q);
    (d_q, d_k, d_v)
}
