//! Symmetric contrastive alignment of drug and protein embeddings.
//!
//! Pooled embeddings are linearly projected into a shared latent space and
//! L2-normalized, so cosine similarity is a plain inner product. The batch
//! objective is symmetric InfoNCE: each matched pair is scored against all
//! other pairings of the batch in both directions. A learnable temperature
//! parameterized as `exp(t)` (clamped to `[1, 100]`, initialized at 14.3)
//! scales the similarities.

use thiserror::Error;

use crate::mat::{Linear, Mat, ParamTensor};

#[derive(Debug, Error)]
pub enum ContrastiveError {
    #[error("projection of '{entity}' is exactly zero and cannot be normalized")]
    ZeroVector { entity: String },
}

/// Lower clamp for the similarity scale.
pub const TEMPERATURE_MIN: f64 = 1.0;
/// Upper clamp for the similarity scale.
pub const TEMPERATURE_MAX: f64 = 100.0;
/// Initial similarity scale (1/0.07).
pub const TEMPERATURE_INIT: f64 = 14.3;

/// Learnable temperature; stored as the log of the scale.
#[derive(Debug, Clone)]
pub struct Temperature {
    pub log_scale: ParamTensor,
}

impl Temperature {
    pub fn init(name: &str, scale: f64) -> Self {
        assert!(scale > 0.0, "temperature must be positive");
        Self { log_scale: ParamTensor::new(name, Mat::from_vec(1, 1, vec![scale.ln()])) }
    }

    /// Current clamped scale.
    pub fn scale(&self) -> f64 {
        self.log_scale.value.at(0, 0).exp().clamp(TEMPERATURE_MIN, TEMPERATURE_MAX)
    }

    /// Accumulate the gradient of the loss with respect to the raw log
    /// parameter given `d_scale`; zero when the clamp is active.
    pub fn accumulate_grad(&mut self, d_scale: f64) {
        let raw = self.log_scale.value.at(0, 0).exp();
        if (TEMPERATURE_MIN..=TEMPERATURE_MAX).contains(&raw) {
            let g = self.log_scale.grad.at(0, 0) + d_scale * raw;
            self.log_scale.grad.set(0, 0, g);
        }
    }
}

/// Cache for [`project_normalize`] backward.
pub struct ProjCache {
    input: Mat,
    normalized: Mat,
    norm: f64,
}

/// Project a pooled embedding into the shared space and normalize it to
/// unit length.
pub fn project_normalize(
    pooled: &Mat,
    projection: &Linear,
    entity: &str,
) -> Result<(Mat, ProjCache), ContrastiveError> {
    assert_eq!(pooled.rows(), 1, "project_normalize expects a 1-row embedding");
    let projected = projection.forward(pooled);
    let norm = projected.data().iter().map(|&v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(ContrastiveError::ZeroVector { entity: entity.to_string() });
    }
    let normalized = projected.scale(1.0 / norm);
    Ok((normalized.clone(), ProjCache { input: pooled.clone(), normalized, norm }))
}

/// Backward through normalization and projection; accumulates projection
/// gradients and returns the gradient with respect to the pooled input.
pub fn project_normalize_backward(
    d_normalized: &Mat,
    cache: &ProjCache,
    projection: &mut Linear,
) -> Mat {
    // z_hat = z / |z|  =>  dz = (d - z_hat * (d . z_hat)) / |z|
    let dot: f64 = d_normalized
        .data()
        .iter()
        .zip(cache.normalized.data())
        .map(|(&a, &b)| a * b)
        .sum();
    let mut d_projected = d_normalized.clone();
    d_projected.add_scaled_assign(&cache.normalized, -dot);
    let d_projected = d_projected.scale(1.0 / cache.norm);
    projection.backward(&cache.input, &d_projected)
}

/// Pairwise cosine similarities between row-normalized co-embeddings:
/// `S[i][j]` is the inner product of drug row `i` and protein row `j`.
pub fn similarity_matrix(drug_rows: &Mat, protein_rows: &Mat) -> Mat {
    assert_eq!(
        drug_rows.rows(),
        protein_rows.rows(),
        "similarity matrix needs equal batch sizes, got {} and {}",
        drug_rows.rows(),
        protein_rows.rows()
    );
    assert_eq!(drug_rows.cols(), protein_rows.cols(), "co-embedding widths differ");
    drug_rows.matmul(&protein_rows.transpose())
}

/// Symmetric InfoNCE over a similarity matrix.
///
/// Returns the loss, its gradient with respect to the similarities, and its
/// derivative with respect to the scale. The loss is
/// `-(1/2N) * sum_i [log softmax_row_i(scale*S)_ii + log softmax_col_i(scale*S)_ii]`,
/// computed with log-sum-exp stabilization.
pub fn info_nce_loss(similarities: &Mat, scale: f64) -> (f64, Mat, f64) {
    let n = similarities.rows();
    assert_eq!(n, similarities.cols(), "InfoNCE expects a square matrix");
    assert!(n >= 2, "InfoNCE needs at least two pairs, got {n}");
    assert!(scale > 0.0, "similarity scale must be positive");

    let scaled = similarities.scale(scale);
    let scaled_t = scaled.transpose();
    let row_probs = scaled.softmax_rows(1.0);
    let col_probs = scaled_t.softmax_rows(1.0); // row i = column i of scaled

    let mut loss = 0.0;
    for i in 0..n {
        loss += log_softmax_at(&scaled, i, i) + log_softmax_at(&scaled_t, i, i);
    }
    let loss = -loss / (2.0 * n as f64);

    // dL/dS = scale/(2N) * (P + Q^T - 2I), where P is the row-softmax and Q
    // the column-softmax (as rows of the transpose).
    let coeff = scale / (2.0 * n as f64);
    let mut grad = Mat::zeros(n, n);
    let mut d_scale = 0.0;
    for i in 0..n {
        for j in 0..n {
            let diag = if i == j { 2.0 } else { 0.0 };
            let g = coeff * (row_probs.at(i, j) + col_probs.at(j, i) - diag);
            grad.set(i, j, g);
            d_scale += g / scale * similarities.at(i, j);
        }
    }
    (loss, grad, d_scale)
}

/// Numerically stable `log softmax(row i)[j]`.
fn log_softmax_at(scores: &Mat, i: usize, j: usize) -> f64 {
    let row = scores.row(i);
    let m = row.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
    let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
    scores.at(i, j) - lse
}

/// Cosine similarity between a drug and a protein pooled embedding after
/// projection and normalization; the virtual-screening ranking score.
pub fn score_pair(
    drug_pooled: &Mat,
    protein_pooled: &Mat,
    drug_projection: &Linear,
    protein_projection: &Linear,
) -> Result<f64, ContrastiveError> {
    let (zd, _) = project_normalize(drug_pooled, drug_projection, "drug")?;
    let (zt, _) = project_normalize(protein_pooled, protein_projection, "protein")?;
    Ok(zd.data().iter().zip(zt.data()).map(|(&a, &b)| a * b).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mat::{grad_check, Differentiable};
    use crate::rng::SplitMix64;

    #[test]
    fn normalization_of_three_four_vector() {
        let mut lin = Linear::init("p", 2, 4, &mut SplitMix64::new(1));
        // Force projection output [3, 4, 0, 0].
        lin.weight.value = Mat::zeros(2, 4);
        lin.bias.value = Mat::from_vec(1, 4, vec![3.0, 4.0, 0.0, 0.0]);
        let pooled = Mat::from_vec(1, 2, vec![0.0, 0.0]);
        let (z, _) = project_normalize(&pooled, &lin, "x").unwrap();
        for (got, want) in z.data().iter().zip([0.6, 0.8, 0.0, 0.0]) {
            assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        }
    }

    #[test]
    fn unit_vector_is_unchanged() {
        let mut lin = Linear::init("p", 1, 3, &mut SplitMix64::new(1));
        lin.weight.value = Mat::zeros(1, 3);
        lin.bias.value = Mat::from_vec(1, 3, vec![1.0, 0.0, 0.0]);
        let (z, _) = project_normalize(&Mat::zeros(1, 1), &lin, "x").unwrap();
        assert_eq!(z.data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_projection_is_an_error() {
        let mut lin = Linear::init("p", 2, 3, &mut SplitMix64::new(1));
        lin.weight.value = Mat::zeros(2, 3);
        lin.bias.value = Mat::zeros(1, 3);
        assert!(matches!(
            project_normalize(&Mat::from_vec(1, 2, vec![1.0, 2.0]), &lin, "m"),
            Err(ContrastiveError::ZeroVector { .. })
        ));
    }

    #[test]
    fn identical_unit_rows_give_unit_diagonal() {
        let z = Mat::from_fn(3, 4, |_, j| if j == 0 { 1.0 } else { 0.0 });
        let s = similarity_matrix(&z, &z);
        for i in 0..3 {
            assert_eq!(s.at(i, i), 1.0);
        }
    }

    #[test]
    fn orthogonal_rows_give_zero_similarity() {
        let zd = Mat::from_fn(2, 4, |i, j| if j == i { 1.0 } else { 0.0 });
        let zt = Mat::from_fn(2, 4, |i, j| if j == i + 2 { 1.0 } else { 0.0 });
        let s = similarity_matrix(&zd, &zt);
        assert!(s.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn info_nce_uniform_similarities_equal_ln_n() {
        for n in [2usize, 4, 64] {
            let s = Mat::from_fn(n, n, |_, _| 0.3);
            let (loss, _, _) = info_nce_loss(&s, 14.3);
            assert!(
                (loss - (n as f64).ln()).abs() < 1e-12,
                "n={n}: loss {loss} vs ln n {}",
                (n as f64).ln()
            );
        }
    }

    #[test]
    fn info_nce_two_pair_anchor() {
        let s = Mat::from_vec(2, 2, vec![1.0, -1.0, -1.0, 1.0]);
        let (loss, _, _) = info_nce_loss(&s, 1.0);
        let expected = -(1.0f64.exp() / (1.0f64.exp() + (-1.0f64).exp())).ln();
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - 0.126928).abs() < 1e-6, "loss {loss}");
    }

    #[test]
    fn info_nce_is_transpose_invariant() {
        let mut rng = SplitMix64::new(5);
        let s = Mat::from_fn(6, 6, |_, _| rng.next_range(-1.0, 1.0));
        let (a, _, _) = info_nce_loss(&s, 7.0);
        let (b, _, _) = info_nce_loss(&s.transpose(), 7.0);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn info_nce_is_shift_invariant() {
        let mut rng = SplitMix64::new(6);
        let s = Mat::from_fn(5, 5, |_, _| rng.next_range(-1.0, 1.0));
        let shifted = s.map(|v| v + 0.37);
        let (a, _, _) = info_nce_loss(&s, 3.0);
        let (b, _, _) = info_nce_loss(&shifted, 3.0);
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn info_nce_gradient_conservation() {
        let mut rng = SplitMix64::new(7);
        let n = 5;
        let s = Mat::from_fn(n, n, |_, _| rng.next_range(-1.0, 1.0));
        let scale = 4.0;
        let (_, grad, _) = info_nce_loss(&s, scale);
        // The combined gradient sums to zero overall; the row-direction term
        // has zero row sums and the column-direction term zero column sums.
        let total: f64 = grad.data().iter().sum();
        assert!(total.abs() < 1e-12, "total {total}");
        let scaled = s.scale(scale);
        let p = scaled.softmax_rows(1.0);
        let q = scaled.transpose().softmax_rows(1.0);
        for i in 0..n {
            let row_term: f64 = (0..n).map(|j| p.at(i, j) - f64::from(u8::from(i == j))).sum();
            assert!(row_term.abs() < 1e-12);
            let col_term: f64 = (0..n).map(|j| q.at(i, j) - f64::from(u8::from(i == j))).sum();
            assert!(col_term.abs() < 1e-12);
        }
    }

    #[test]
    fn info_nce_gradient_matches_finite_differences() {
        #[derive(Clone)]
        struct NceProblem {
            s: ParamTensor,
            scale: f64,
        }
        impl Differentiable for NceProblem {
            fn loss(&self) -> f64 {
                info_nce_loss(&self.s.value, self.scale).0
            }
            fn loss_and_grad(&mut self) -> f64 {
                let (loss, grad, _) = info_nce_loss(&self.s.value, self.scale);
                self.s.grad = grad;
                loss
            }
            fn params(&self) -> Vec<&ParamTensor> {
                vec![&self.s]
            }
            fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
                vec![&mut self.s]
            }
        }
        let mut rng = SplitMix64::new(8);
        let p = NceProblem {
            s: ParamTensor::new("s", Mat::from_fn(5, 5, |_, _| rng.next_range(-1.0, 1.0))),
            scale: 9.0,
        };
        let report = grad_check(&p, 25, 1e-5, 2).unwrap();
        assert!(report.max_rel_err < 1e-6, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn info_nce_is_non_negative_and_vanishes_under_diagonal_dominance() {
        let n = 6;
        let s = Mat::from_fn(n, n, |i, j| if i == j { 1.0 } else { -1.0 });
        let (loss, _, _) = info_nce_loss(&s, 100.0);
        assert!(loss >= 0.0);
        assert!(loss < 1e-6, "loss {loss} should approach zero");
        let mut rng = SplitMix64::new(9);
        let random = Mat::from_fn(n, n, |_, _| rng.next_range(-1.0, 1.0));
        let (loss, _, _) = info_nce_loss(&random, 5.0);
        assert!(loss >= 0.0);
    }

    #[test]
    fn temperature_scale_and_clamp() {
        let t = Temperature::init("t", TEMPERATURE_INIT);
        assert!((t.scale() - 14.3).abs() < 1e-12);
        let hot = Temperature::init("t", 1000.0);
        assert_eq!(hot.scale(), TEMPERATURE_MAX);
        let cold = Temperature::init("t", 0.5);
        assert_eq!(cold.scale(), TEMPERATURE_MIN);
    }

    #[test]
    fn clamped_temperature_gets_zero_gradient() {
        let mut hot = Temperature::init("t", 1000.0);
        hot.accumulate_grad(3.0);
        assert_eq!(hot.log_scale.grad.at(0, 0), 0.0);
        let mut live = Temperature::init("t", 14.3);
        live.accumulate_grad(3.0);
        assert!((live.log_scale.grad.at(0, 0) - 3.0 * 14.3).abs() < 1e-9);
    }

    #[test]
    fn score_pair_self_similarity() {
        // Identical stand-in projections and identical inputs: score 1.
        let lin = Linear::init("p", 3, 4, &mut SplitMix64::new(4));
        let pooled = Mat::from_vec(1, 3, vec![0.5, -0.25, 1.0]);
        let s = score_pair(&pooled, &pooled, &lin, &lin).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn score_pair_antipodal() {
        let mut lin_d = Linear::init("p", 1, 3, &mut SplitMix64::new(4));
        lin_d.weight.value = Mat::zeros(1, 3);
        lin_d.bias.value = Mat::from_vec(1, 3, vec![2.0, 0.0, 0.0]);
        let mut lin_t = lin_d.clone();
        lin_t.bias.value = Mat::from_vec(1, 3, vec![-5.0, 0.0, 0.0]);
        let s = score_pair(&Mat::zeros(1, 1), &Mat::zeros(1, 1), &lin_d, &lin_t).unwrap();
        assert!((s + 1.0).abs() < 1e-12);
    }

    #[test]
    fn score_pair_matches_similarity_matrix_entry() {
        let mut rng = SplitMix64::new(12);
        let lin_d = Linear::init("pd", 3, 4, &mut rng);
        let lin_t = Linear::init("pt", 5, 4, &mut rng);
        let hd = Mat::from_fn(1, 3, |_, _| rng.next_range(-1.0, 1.0));
        let ht = Mat::from_fn(1, 5, |_, _| rng.next_range(-1.0, 1.0));
        let score = score_pair(&hd, &ht, &lin_d, &lin_t).unwrap();
        let (zd, _) = project_normalize(&hd, &lin_d, "d").unwrap();
        let (zt, _) = project_normalize(&ht, &lin_t, "t").unwrap();
        let s = similarity_matrix(&zd, &zt);
        assert_eq!(score.to_bits(), s.at(0, 0).to_bits());
    }
}
