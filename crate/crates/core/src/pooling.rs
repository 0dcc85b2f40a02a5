//! Token-to-sentence pooling for causal language models.
//!
//! Both methods take the `T x d` token embeddings of one sentence at one
//! layer. Accumulation is in `f64`; outputs are `f32`.

use ndarray::{Array1, ArrayView2};

use crate::dumpio::Pooling;
use crate::error::{Error, Result};

/// Final token vector, unchanged.
pub fn pool_last_token(tokens: ArrayView2<'_, f32>) -> Result<Array1<f32>> {
    let t = tokens.nrows();
    if t == 0 {
        return Err(Error::EmptySentence);
    }
    Ok(tokens.row(t - 1).to_owned())
}

/// Position weights `w_t = t / (T(T+1)/2)` for `t = 1..=T`.
pub fn position_weights(t: usize) -> Vec<f64> {
    let total = (t as f64) * (t as f64 + 1.0) / 2.0;
    (1..=t).map(|i| i as f64 / total).collect()
}

/// `sum_t w_t h_t` with [`position_weights`], so later tokens count more.
pub fn pool_weighted_average(tokens: ArrayView2<'_, f32>) -> Result<Array1<f32>> {
    let t = tokens.nrows();
    if t == 0 {
        return Err(Error::EmptySentence);
    }
    let weights = position_weights(t);
    let mut acc = vec![0.0f64; tokens.ncols()];
    for (w, row) in weights.iter().zip(tokens.rows()) {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += w * f64::from(v);
        }
    }
    Ok(acc.into_iter().map(|v| v as f32).collect())
}

pub fn pool(tokens: ArrayView2<'_, f32>, method: Pooling) -> Result<Array1<f32>> {
    match method {
        Pooling::LastToken => pool_last_token(tokens),
        Pooling::WeightedAverage => pool_weighted_average(tokens),
    }
}
