//! Additive (Bahdanau) attention and its multi-head variant.
//!
//! The key projection `W_k k_i` does not depend on the query, so callers that
//! attend repeatedly over the same keys project them once with
//! [`AdditiveAttention::project_keys`] and reuse the result. Gradients for the
//! projection are likewise accumulated per key row and folded back in one pass
//! by [`AdditiveAttention::backward_projection`].

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{axpy, dot, Tensor2};
use crate::error::{Error, Result};

const INIT_SCALE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditiveAttention {
    /// `A x Q`
    pub w_query: Tensor2,
    /// `A x K`
    pub w_key: Tensor2,
    /// `A`
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionContext {
    pub weights: Vec<f64>,
    pub context: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct AttentionCache {
    window: Range<usize>,
    /// `tanh(W_q q + W_k k_t)` for each attended row, flattened.
    hidden: Vec<f64>,
    weights: Vec<f64>,
}

impl AdditiveAttention {
    pub fn zeros(query: usize, key: usize, hidden: usize) -> Self {
        Self {
            w_query: Tensor2::zeros(hidden, query),
            w_key: Tensor2::zeros(hidden, key),
            v: vec![0.0; hidden],
        }
    }

    pub fn init<R: Rng + ?Sized>(query: usize, key: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            w_query: Tensor2::uniform(hidden, query, INIT_SCALE, rng),
            w_key: Tensor2::uniform(hidden, key, INIT_SCALE, rng),
            v: (0..hidden).map(|_| rng.gen_range(-INIT_SCALE..=INIT_SCALE)).collect(),
        }
    }

    #[inline]
    pub fn hidden(&self) -> usize {
        self.v.len()
    }

    #[inline]
    pub fn query_width(&self) -> usize {
        self.w_query.cols()
    }

    #[inline]
    pub fn key_width(&self) -> usize {
        self.w_key.cols()
    }

    /// Projects `keys[:, cols]` through `W_k`, one output row per key row.
    pub fn project_keys(&self, keys: &Tensor2, cols: Range<usize>) -> Tensor2 {
        let mut out = Tensor2::zeros(keys.rows(), self.hidden());
        for t in 0..keys.rows() {
            self.w_key
                .matvec_acc(&keys.row(t)[cols.clone()], out.row_mut(t));
        }
        out
    }

    pub(crate) fn project_key_row(&self, key: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.hidden()];
        self.w_key.matvec_acc(key, &mut out);
        out
    }

    /// Attends over rows `window` of the projected keys; the context is the
    /// weighted sum of `values[t][value_cols]`.
    pub(crate) fn attend(
        &self,
        query: &[f64],
        projected: &Tensor2,
        values: &Tensor2,
        value_cols: Range<usize>,
        window: Range<usize>,
    ) -> (AttentionContext, AttentionCache) {
        let a = self.hidden();
        let mut q = vec![0.0; a];
        self.w_query.matvec_acc(query, &mut q);

        let n = window.len();
        let mut hidden = vec![0.0; n * a];
        let mut scores = vec![0.0; n];
        for (i, t) in window.clone().enumerate() {
            let u = &mut hidden[i * a..(i + 1) * a];
            for ((u, qv), kv) in u.iter_mut().zip(&q).zip(projected.row(t)) {
                *u = (qv + kv).tanh();
            }
            scores[i] = dot(&self.v, u);
        }
        let weights = softmax(&scores);

        let mut context = vec![0.0; value_cols.len()];
        for (i, t) in window.clone().enumerate() {
            axpy(weights[i], &values.row(t)[value_cols.clone()], &mut context);
        }
        let ctx = AttentionContext {
            weights: weights.clone(),
            context,
        };
        let cache = AttentionCache {
            window,
            hidden,
            weights,
        };
        (ctx, cache)
    }

    /// Backward through one [`attend`](Self::attend) call.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn backward(
        &self,
        cache: &AttentionCache,
        query: &[f64],
        values: &Tensor2,
        value_cols: Range<usize>,
        d_context: &[f64],
        grads: &mut AdditiveAttention,
        d_query: &mut [f64],
        d_values: &mut Tensor2,
        d_projected: &mut Tensor2,
    ) {
        let a = self.hidden();
        let w = &cache.weights;
        let mut d_w = vec![0.0; w.len()];
        for (i, t) in cache.window.clone().enumerate() {
            let vrow = &values.row(t)[value_cols.clone()];
            d_w[i] = dot(d_context, vrow);
            axpy(w[i], d_context, &mut d_values.row_mut(t)[value_cols.clone()]);
        }
        let mean: f64 = w.iter().zip(&d_w).map(|(a, b)| a * b).sum();

        let mut d_q = vec![0.0; a];
        let mut d_pre = vec![0.0; a];
        for (i, t) in cache.window.clone().enumerate() {
            let d_score = w[i] * (d_w[i] - mean);
            if d_score == 0.0 {
                continue;
            }
            let u = &cache.hidden[i * a..(i + 1) * a];
            axpy(d_score, u, &mut grads.v);
            for j in 0..a {
                d_pre[j] = d_score * self.v[j] * (1.0 - u[j] * u[j]);
            }
            axpy(1.0, &d_pre, d_projected.row_mut(t));
            axpy(1.0, &d_pre, &mut d_q);
        }
        grads.w_query.outer_acc(&d_q, query);
        self.w_query.matvec_t_acc(&d_q, d_query);
    }

    /// Folds accumulated projected-key gradients back into `W_k` and the keys.
    pub(crate) fn backward_projection(
        &self,
        keys: &Tensor2,
        key_cols: Range<usize>,
        d_projected: &Tensor2,
        grads: &mut AdditiveAttention,
        d_keys: &mut Tensor2,
    ) {
        for t in 0..keys.rows() {
            let dp = d_projected.row(t);
            if dp.iter().all(|&v| v == 0.0) {
                continue;
            }
            grads.w_key.outer_acc(dp, &keys.row(t)[key_cols.clone()]);
            self.w_key
                .matvec_t_acc(dp, &mut d_keys.row_mut(t)[key_cols.clone()]);
        }
    }
}

/// Max-subtracted softmax.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

fn check_keys(att: &AdditiveAttention, query: &[f64], keys: &Tensor2, values: &Tensor2) -> Result<()> {
    if keys.rows() == 0 {
        return Err(Error::EmptyWindow);
    }
    if keys.rows() != values.rows() {
        return Err(Error::shape("attention values rows", keys.rows(), values.rows()));
    }
    if query.len() != att.query_width() {
        return Err(Error::shape("attention query", att.query_width(), query.len()));
    }
    Ok(())
}

/// `e_i = v·tanh(W_q q + W_k k_i)`, weights `softmax(e)`, context `Σ w_i value_i`.
pub fn additive_attention(
    att: &AdditiveAttention,
    query: &[f64],
    keys: &Tensor2,
    values: &Tensor2,
) -> Result<AttentionContext> {
    check_keys(att, query, keys, values)?;
    if keys.cols() != att.key_width() {
        return Err(Error::shape("attention keys", att.key_width(), keys.cols()));
    }
    let projected = att.project_keys(keys, 0..keys.cols());
    let (ctx, _) = att.attend(query, &projected, values, 0..values.cols(), 0..keys.rows());
    Ok(ctx)
}

/// Several additive heads, head `j` attending over the `j`-th equal column
/// slice of the keys and values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiHeadAttention {
    pub heads: Vec<AdditiveAttention>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadContext {
    pub heads: Vec<AttentionContext>,
    pub context: Vec<f64>,
}

impl MultiHeadContext {
    /// Per-position weights averaged over heads.
    pub fn mean_weights(&self) -> Vec<f64> {
        let n = self.heads[0].weights.len();
        let mut out = vec![0.0; n];
        for h in &self.heads {
            axpy(1.0, &h.weights, &mut out);
        }
        let k = self.heads.len() as f64;
        out.iter_mut().for_each(|v| *v /= k);
        out
    }
}

impl MultiHeadAttention {
    pub fn init<R: Rng + ?Sized>(
        query: usize,
        key: usize,
        hidden: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || key % heads != 0 {
            return Err(Error::Config(format!(
                "encoder width {key} is not divisible by {heads} attention heads"
            )));
        }
        let heads = (0..heads)
            .map(|_| AdditiveAttention::init(query, key / heads, hidden, rng))
            .collect();
        Ok(Self { heads })
    }

    pub fn single(head: AdditiveAttention) -> Self {
        Self { heads: vec![head] }
    }

    #[inline]
    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    /// Column range of the keys/values seen by `head` given total width.
    #[inline]
    pub fn head_cols(&self, head: usize, width: usize) -> Range<usize> {
        let w = width / self.heads.len();
        head * w..(head + 1) * w
    }
}

pub fn multihead_attention(
    mha: &MultiHeadAttention,
    query: &[f64],
    keys: &Tensor2,
    values: &Tensor2,
) -> Result<MultiHeadContext> {
    let heads = mha.num_heads();
    if heads == 0 || keys.cols() % heads != 0 || values.cols() % heads != 0 {
        return Err(Error::Config(format!(
            "width {} is not divisible by {heads} attention heads",
            keys.cols()
        )));
    }
    let mut out = MultiHeadContext {
        heads: Vec::with_capacity(heads),
        context: Vec::with_capacity(values.cols()),
    };
    for (j, head) in mha.heads.iter().enumerate() {
        check_keys(head, query, keys, values)?;
        let kc = mha.head_cols(j, keys.cols());
        if kc.len() != head.key_width() {
            return Err(Error::shape(format!("head {j} key slice"), head.key_width(), kc.len()));
        }
        let projected = head.project_keys(keys, kc);
        let vc = mha.head_cols(j, values.cols());
        let (ctx, _) = head.attend(query, &projected, values, vc, 0..keys.rows());
        out.context.extend_from_slice(&ctx.context);
        out.heads.push(ctx);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor2 {
        Tensor2::uniform(rows, cols, 1.0, rng)
    }

    fn random_head(q: usize, k: usize, a: usize, rng: &mut ChaCha8Rng) -> AdditiveAttention {
        AdditiveAttention {
            w_query: random_tensor(a, q, rng),
            w_key: random_tensor(a, k, rng),
            v: (0..a).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        }
    }

    /// Direct scalar evaluation of the scoring formula.
    fn scalar_attention(
        att: &AdditiveAttention,
        q: &[f64],
        keys: &[Vec<f64>],
        values: &[Vec<f64>],
    ) -> (Vec<f64>, Vec<f64>) {
        let a = att.v.len();
        let mut e = Vec::new();
        for k in keys {
            let mut s = 0.0;
            for j in 0..a {
                let mut pre = 0.0;
                for (c, qv) in q.iter().enumerate() {
                    pre += att.w_query.get(j, c) * qv;
                }
                for (c, kv) in k.iter().enumerate() {
                    pre += att.w_key.get(j, c) * kv;
                }
                s += att.v[j] * pre.tanh();
            }
            e.push(s);
        }
        let m = e.iter().cloned().fold(f64::MIN, f64::max);
        let z: f64 = e.iter().map(|x| (x - m).exp()).sum();
        let w: Vec<f64> = e.iter().map(|x| (x - m).exp() / z).collect();
        let mut ctx = vec![0.0; values[0].len()];
        for (wi, v) in w.iter().zip(values) {
            for (c, x) in ctx.iter_mut().zip(v) {
                *c += wi * x;
            }
        }
        (w, ctx)
    }

    fn rows_of(t: &Tensor2) -> Vec<Vec<f64>> {
        (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
    }

    #[test]
    fn singleton_window_has_unit_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let att = random_head(3, 4, 5, &mut rng);
        let keys = random_tensor(1, 4, &mut rng);
        let ctx = additive_attention(&att, &[0.1, 0.2, 0.3], &keys, &keys).unwrap();
        assert_eq!(ctx.weights, vec![1.0]);
        assert_eq!(ctx.context, keys.row(0));
    }

    #[test]
    fn identical_keys_split_evenly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let att = random_head(2, 3, 4, &mut rng);
        let keys = Tensor2::from_rows(&[vec![0.5, -0.1, 0.2], vec![0.5, -0.1, 0.2]]).unwrap();
        let ctx = additive_attention(&att, &[1.0, -1.0], &keys, &keys).unwrap();
        assert_eq!(ctx.weights, vec![0.5, 0.5]);
    }

    #[test]
    fn matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let att = random_head(4, 5, 6, &mut rng);
        let keys = random_tensor(3, 5, &mut rng);
        let values = random_tensor(3, 7, &mut rng);
        let q: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ctx = additive_attention(&att, &q, &keys, &values).unwrap();
        let (w, c) = scalar_attention(&att, &q, &rows_of(&keys), &rows_of(&values));
        for (a, b) in ctx.weights.iter().zip(&w) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in ctx.context.iter().zip(&c) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((ctx.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_window_is_an_error() {
        let att = AdditiveAttention::zeros(2, 2, 2);
        let keys = Tensor2::zeros(0, 2);
        assert!(matches!(
            additive_attention(&att, &[0.0, 0.0], &keys, &keys),
            Err(Error::EmptyWindow)
        ));
    }

    #[test]
    fn one_head_equals_additive() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let att = random_head(3, 4, 5, &mut rng);
        let keys = random_tensor(6, 4, &mut rng);
        let q = [0.3, -0.4, 0.9];
        let single = additive_attention(&att, &q, &keys, &keys).unwrap();
        let multi = multihead_attention(&MultiHeadAttention::single(att), &q, &keys, &keys).unwrap();
        assert_eq!(multi.context, single.context);
        assert_eq!(multi.heads[0].weights, single.weights);
    }

    #[test]
    fn four_heads_single_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mha = MultiHeadAttention::init(3, 8, 4, 4, &mut rng).unwrap();
        let keys = random_tensor(1, 8, &mut rng);
        let out = multihead_attention(&mha, &[0.1, 0.2, 0.3], &keys, &keys).unwrap();
        assert_eq!(out.heads.len(), 4);
        assert!(out.heads.iter().all(|h| h.weights == vec![1.0]));
        assert_eq!(out.context, keys.row(0));
    }

    #[test]
    fn two_heads_match_per_head_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mha = MultiHeadAttention {
            heads: vec![random_head(3, 2, 5, &mut rng), random_head(3, 2, 5, &mut rng)],
        };
        let keys = random_tensor(4, 4, &mut rng);
        let q = [0.2, 0.7, -0.5];
        let out = multihead_attention(&mha, &q, &keys, &keys).unwrap();
        for j in 0..2 {
            let slice = keys.column_slice(2 * j, 2 * j + 2);
            let rows = rows_of(&slice);
            let (w, c) = scalar_attention(&mha.heads[j], &q, &rows, &rows);
            for (a, b) in out.heads[j].weights.iter().zip(&w) {
                assert!((a - b).abs() < 1e-12);
            }
            for (a, b) in out.context[2 * j..2 * j + 2].iter().zip(&c) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn indivisible_width_is_config_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            MultiHeadAttention::init(2, 6, 3, 4, &mut rng),
            Err(Error::Config(_))
        ));
        let mha = MultiHeadAttention::init(2, 6, 3, 3, &mut rng).unwrap();
        let keys = Tensor2::zeros(2, 5);
        assert!(matches!(
            multihead_attention(&mha, &[0.0, 0.0], &keys, &keys),
            Err(Error::Config(_))
        ));
    }
}
