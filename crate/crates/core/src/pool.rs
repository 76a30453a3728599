//! Learned aggregation: class-token attention pooling over token embeddings.
//!
//! A learnable class token queries projected keys and values of the token
//! matrix; the attended value vector plus the class token goes through a
//! small feed-forward block. The attention weights are exposed so they can
//! be exported for interpretability.
//!
//! Pooling is single-head. The pooled vector is bit-identical under any
//! permutation of the input token rows and the weights permute with the
//! rows, exactly (see `canonical_sum`).

use thiserror::Error;

use crate::mat::{Dropout, Ffn, FfnCache, Mat, ParamTensor};
use crate::rng::SplitMix64;

#[derive(Debug, Error)]
pub enum PoolError {
    #[error("attention export: {labels} labels for {weights} weights")]
    LengthMismatch { labels: usize, weights: usize },
}

/// Parameters of one pooling head: class token, key/value projections, and
/// the output feed-forward block.
#[derive(Debug, Clone)]
pub struct PoolParams {
    pub query: ParamTensor,
    pub key_proj: ParamTensor,
    pub value_proj: ParamTensor,
    pub ffn: Ffn,
}

impl PoolParams {
    /// Class token from a zero-mean Gaussian (std 0.02), projections
    /// Xavier-uniform, feed-forward hidden width `dim * ffn_mult`.
    pub fn init(name: &str, dim: usize, ffn_mult: usize, rng: &mut SplitMix64) -> Self {
        Self {
            query: ParamTensor::new(format!("{name}.query"), crate::mat::gaussian_init(1, dim, 0.02, rng)),
            key_proj: ParamTensor::new(format!("{name}.key_proj"), crate::mat::xavier_uniform(dim, dim, rng)),
            value_proj: ParamTensor::new(format!("{name}.value_proj"), crate::mat::xavier_uniform(dim, dim, rng)),
            ffn: Ffn::init(&format!("{name}.ffn"), dim, dim * ffn_mult, dim, rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.query.value.cols()
    }
}

/// Pooled embedding plus the attention weights that produced it.
#[derive(Debug, Clone)]
pub struct PoolOutput {
    /// 1 x d pooled embedding.
    pub pooled: Mat,
    /// 1 x n attention weights; entries in (0, 1), summing to 1.
    pub alpha: Mat,
}

/// Forward intermediates required by [`pool_backward`].
pub struct PoolCache {
    tokens: Mat,
    keys: Mat,
    values: Mat,
    alpha: Mat,
    ffn: FfnCache,
}

/// Attention pooling: keys/values are projections of the token rows, the
/// class token is the query, and the attended vector plus the class token
/// feeds the feed-forward block.
pub fn pool_forward(
    tokens: &Mat,
    params: &PoolParams,
    dropout: &Dropout,
    site: u64,
) -> (PoolOutput, PoolCache) {
    let d = params.dim();
    assert_eq!(tokens.cols(), d, "pooling expects {d}-dim tokens, got {}", tokens.cols());
    let keys = tokens.matmul(&params.key_proj.value);
    let values = tokens.matmul(&params.value_proj.value);
    let scores = params.query.value.matmul(&keys.transpose()); // 1 x n
    let alpha = scores.softmax_rows(1.0 / (d as f64).sqrt());
    let attended = values.weighted_row_sum(alpha.row(0)); // 1 x d
    let residual = attended.add(&params.query.value);
    let (pooled, ffn_cache) = params.ffn.forward(&residual, dropout, site);
    (
        PoolOutput { pooled, alpha: alpha.clone() },
        PoolCache { tokens: tokens.clone(), keys, values, alpha, ffn: ffn_cache },
    )
}

/// Backward pass for [`pool_forward`]; accumulates parameter gradients.
/// Token embeddings are frozen inputs, so no input gradient is returned.
pub fn pool_backward(
    d_pooled: &Mat,
    cache: &PoolCache,
    params: &mut PoolParams,
    dropout: &Dropout,
    site: u64,
) {
    let d = params.dim();
    let scale = 1.0 / (d as f64).sqrt();
    let d_residual = params.ffn.backward(&cache.ffn, d_pooled, dropout, site);
    // residual = attended + query
    params.query.grad.add_scaled_assign(&d_residual, 1.0);
    // attended = alpha * values
    let d_alpha = d_residual.matmul(&cache.values.transpose()); // 1 x n
    let d_values = cache.alpha.transpose().matmul(&d_residual); // n x d
    let d_scores = Mat::softmax_rows_backward(&cache.alpha, &d_alpha, scale);
    // scores = query * keys^T
    let d_query = d_scores.matmul(&cache.keys); // 1 x d
    params.query.grad.add_scaled_assign(&d_query, 1.0);
    let d_keys = d_scores.transpose().matmul(&params.query.value); // n x d
    // keys = tokens * key_proj, values = tokens * value_proj
    let tokens_t = cache.tokens.transpose();
    params.key_proj.grad.add_scaled_assign(&tokens_t.matmul(&d_keys), 1.0);
    params.value_proj.grad.add_scaled_assign(&tokens_t.matmul(&d_values), 1.0);
}

/// Ablation path: unweighted row mean of the tokens through the same
/// feed-forward block. The exported weights are uniform.
pub fn mean_pool_forward(
    tokens: &Mat,
    params: &PoolParams,
    dropout: &Dropout,
    site: u64,
) -> (PoolOutput, MeanPoolCache) {
    assert_eq!(tokens.cols(), params.dim(), "pooling dimension mismatch");
    let n = tokens.rows();
    let mean = tokens.mean_rows();
    let (pooled, ffn_cache) = params.ffn.forward(&mean, dropout, site);
    let alpha = Mat::from_fn(1, n, |_, _| 1.0 / n as f64);
    (PoolOutput { pooled, alpha }, MeanPoolCache { ffn: ffn_cache })
}

/// Forward intermediates for the mean-pool ablation path.
pub struct MeanPoolCache {
    ffn: FfnCache,
}

/// Backward pass for [`mean_pool_forward`]: only the feed-forward block
/// receives gradients.
pub fn mean_pool_backward(
    d_pooled: &Mat,
    cache: &MeanPoolCache,
    params: &mut PoolParams,
    dropout: &Dropout,
    site: u64,
) {
    let _ = params.ffn.backward(&cache.ffn, d_pooled, dropout, site);
}

/// Pair attention weights with token labels as `(position, label, weight)`
/// rows, sorted by position.
pub fn export_attention(
    alpha: &Mat,
    token_labels: &[String],
) -> Result<Vec<(usize, String, f64)>, PoolError> {
    if token_labels.len() != alpha.cols() {
        return Err(PoolError::LengthMismatch {
            labels: token_labels.len(),
            weights: alpha.cols(),
        });
    }
    Ok(token_labels
        .iter()
        .enumerate()
        .map(|(i, label)| (i, label.clone(), alpha.at(0, i)))
        .collect())
}
