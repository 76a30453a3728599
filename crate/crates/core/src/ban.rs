//! Multi-glimpse bilinear attention over drug and protein token embeddings.
//!
//! Each glimpse projects both token matrices into a shared rank-r space
//! through a pointwise ReLU, forms an attention map over all token pairs,
//! and fuses the attended protein features with the drug features into a
//! fixed-size vector. Glimpse outputs are concatenated and an MLP maps the
//! fused vector to an interaction probability.
//!
//! The softmax in the attention map is row-wise by default (each drug token
//! distributes attention over protein tokens), with a `flat` alternative
//! that normalizes over the whole map for auditing.

use crate::mat::{Dropout, Ffn, FfnCache, Mat, ParamTensor};
use crate::rng::SplitMix64;

/// Normalization axis of the attention map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SoftmaxAxis {
    /// Each drug-token row is a distribution over protein tokens.
    Rows,
    /// One distribution over the whole map.
    Flat,
}

impl SoftmaxAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SoftmaxAxis::Rows => "rows",
            SoftmaxAxis::Flat => "flat",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rows" => Some(SoftmaxAxis::Rows),
            "flat" => Some(SoftmaxAxis::Flat),
            _ => None,
        }
    }
}

/// Projections of one glimpse.
#[derive(Debug, Clone)]
pub struct Glimpse {
    pub drug_proj: ParamTensor,
    pub prot_proj: ParamTensor,
}

/// All bilinear attention parameters: per-glimpse projections plus the MLP
/// head (`Linear -> ReLU -> Linear` onto a single logit).
#[derive(Debug, Clone)]
pub struct BanParams {
    pub glimpses: Vec<Glimpse>,
    pub head: Ffn,
}

impl BanParams {
    pub fn init(
        name: &str,
        d_drug: usize,
        d_protein: usize,
        glimpses: usize,
        rank: usize,
        mlp_hidden: usize,
        rng: &mut SplitMix64,
    ) -> Self {
        assert!(glimpses >= 1 && rank >= 1);
        let glimpses = (0..glimpses)
            .map(|g| Glimpse {
                drug_proj: ParamTensor::new(
                    format!("{name}.g{g}.drug_proj"),
                    crate::mat::xavier_uniform(d_drug, rank, rng),
                ),
                prot_proj: ParamTensor::new(
                    format!("{name}.g{g}.prot_proj"),
                    crate::mat::xavier_uniform(d_protein, rank, rng),
                ),
            })
            .collect::<Vec<_>>();
        let fused_dim = glimpses.len() * rank;
        Self { glimpses, head: Ffn::init(&format!("{name}.head"), fused_dim, mlp_hidden, 1, rng) }
    }

    pub fn rank(&self) -> usize {
        self.glimpses[0].drug_proj.value.cols()
    }

    pub fn fused_dim(&self) -> usize {
        self.glimpses.len() * self.rank()
    }
}

/// Fused vector, per-glimpse attention maps, and interaction probability.
#[derive(Debug, Clone)]
pub struct BanOutput {
    pub fused: Mat,
    pub attention: Vec<Mat>,
    pub prob: f64,
}

struct GlimpseCache {
    drug_pre: Mat,
    drug_feat: Mat,
    prot_pre: Mat,
    prot_feat: Mat,
    attn: Mat,
    attended: Mat,
}

/// Forward intermediates for [`ban_backward`].
pub struct BanCache {
    drug_tokens: Mat,
    prot_tokens: Mat,
    glimpses: Vec<GlimpseCache>,
    head: FfnCache,
    logit: f64,
}

impl BanCache {
    pub fn logit(&self) -> f64 {
        self.logit
    }
}

/// Dropout sites used inside the bilinear block, offset from a caller base.
fn drug_site(base: u64, g: usize) -> u64 {
    base + 2 * g as u64
}
fn prot_site(base: u64, g: usize) -> u64 {
    base + 2 * g as u64 + 1
}
fn head_site(base: u64, n_glimpses: usize) -> u64 {
    base + 2 * n_glimpses as u64
}

/// Bilinear attention forward pass over raw token embeddings.
pub fn ban_forward(
    drug_tokens: &Mat,
    prot_tokens: &Mat,
    params: &BanParams,
    axis: SoftmaxAxis,
    dropout: &Dropout,
    site_base: u64,
) -> (BanOutput, BanCache) {
    let mut fused_parts = Vec::with_capacity(params.fused_dim());
    let mut attention = Vec::with_capacity(params.glimpses.len());
    let mut caches = Vec::with_capacity(params.glimpses.len());

    for (g, glimpse) in params.glimpses.iter().enumerate() {
        let drug_pre = drug_tokens.matmul(&glimpse.drug_proj.value);
        let drug_feat = dropout.apply(&drug_pre.relu(), drug_site(site_base, g));
        let prot_pre = prot_tokens.matmul(&glimpse.prot_proj.value);
        let prot_feat = dropout.apply(&prot_pre.relu(), prot_site(site_base, g));

        let scores = drug_feat.matmul(&prot_feat.transpose()); // n_d x n_t
        let attn = match axis {
            SoftmaxAxis::Rows => scores.softmax_rows(1.0),
            SoftmaxAxis::Flat => scores.softmax_flat(1.0),
        };
        // Attended protein summary per drug token; the protein-token
        // contraction is canonical for exact permutation invariance.
        let attended = matmul_canonical(&attn, &prot_feat); // n_d x r
        let fused_rows = drug_feat.hadamard(&attended);
        let glimpse_fused = fused_rows.weighted_row_sum(&vec![1.0; fused_rows.rows()]); // 1 x r
        fused_parts.extend_from_slice(glimpse_fused.data());
        attention.push(attn.clone());
        caches.push(GlimpseCache { drug_pre, drug_feat, prot_pre, prot_feat, attn, attended });
    }

    debug_assert_eq!(fused_parts.len(), params.fused_dim());
    let fused = Mat::from_vec(1, fused_parts.len(), fused_parts);
    let (logit_mat, head_cache) =
        params.head.forward(&fused, dropout, head_site(site_base, params.glimpses.len()));
    let logit = logit_mat.at(0, 0);
    let prob = sigmoid(logit);
    (
        BanOutput { fused: fused.clone(), attention, prob },
        BanCache {
            drug_tokens: drug_tokens.clone(),
            prot_tokens: prot_tokens.clone(),
            glimpses: caches,
            head: head_cache,
            logit,
        },
    )
}

/// Matmul with a canonical (permutation-order-independent) contraction;
/// used where the contraction runs over a token axis.
fn matmul_canonical(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.cols(), b.rows(), "matmul shape mismatch");
    let mut addends = vec![0.0; a.cols()];
    Mat::from_fn(a.rows(), b.cols(), |i, c| {
        for (j, slot) in addends.iter_mut().enumerate() {
            *slot = a.at(i, j) * b.at(j, c);
        }
        crate::mat::canonical_sum(&mut addends)
    })
}

/// Backward pass through the bilinear block and its head. `d_logit` is the
/// upstream derivative at the pre-sigmoid output. Token embeddings are
/// frozen inputs, so no input gradients are produced.
pub fn ban_backward(
    d_logit: f64,
    cache: &BanCache,
    params: &mut BanParams,
    axis: SoftmaxAxis,
    dropout: &Dropout,
    site_base: u64,
) {
    let rank = params.rank();
    let n_glimpses = params.glimpses.len();
    let d_logit_mat = Mat::from_vec(1, 1, vec![d_logit]);
    let d_fused = params.head.backward(&cache.head, &d_logit_mat, dropout, head_site(site_base, n_glimpses));

    for (g, (glimpse, gc)) in params.glimpses.iter_mut().zip(&cache.glimpses).enumerate() {
        let d_slice = Mat::from_vec(1, rank, d_fused.row(0)[g * rank..(g + 1) * rank].to_vec());
        let n_d = gc.drug_feat.rows();
        // fused_g = sum_i drug_feat_i (.) attended_i
        let d_rows = Mat::from_fn(n_d, rank, |_, c| d_slice.at(0, c));
        let mut d_drug_feat = d_rows.hadamard(&gc.attended);
        let d_attended = d_rows.hadamard(&gc.drug_feat);
        // attended = attn * prot_feat
        let d_attn = d_attended.matmul(&gc.prot_feat.transpose());
        let mut d_prot_feat = gc.attn.transpose().matmul(&d_attended);
        let d_scores = match axis {
            SoftmaxAxis::Rows => Mat::softmax_rows_backward(&gc.attn, &d_attn, 1.0),
            SoftmaxAxis::Flat => Mat::softmax_flat_backward(&gc.attn, &d_attn, 1.0),
        };
        // scores = drug_feat * prot_feat^T
        d_drug_feat.add_scaled_assign(&d_scores.matmul(&gc.prot_feat), 1.0);
        d_prot_feat.add_scaled_assign(&d_scores.transpose().matmul(&gc.drug_feat), 1.0);
        // Through dropout and ReLU back to the projections.
        let d_drug_pre =
            Mat::relu_backward(&gc.drug_pre, &dropout.apply(&d_drug_feat, drug_site(site_base, g)));
        let d_prot_pre =
            Mat::relu_backward(&gc.prot_pre, &dropout.apply(&d_prot_feat, prot_site(site_base, g)));
        glimpse
            .drug_proj
            .grad
            .add_scaled_assign(&cache.drug_tokens.transpose().matmul(&d_drug_pre), 1.0);
        glimpse
            .prot_proj
            .grad
            .add_scaled_assign(&cache.prot_tokens.transpose().matmul(&d_prot_pre), 1.0);
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Map a fused vector to an interaction probability through the MLP head
/// (evaluation mode).
pub fn predict_probability(fused: &Mat, head: &Ffn) -> f64 {
    let (logit, _) = head.forward(fused, &Dropout::Off, 0);
    sigmoid(logit.at(0, 0))
}

/// Numerically stable binary cross-entropy on a logit. Returns the loss and
/// its derivative with respect to the logit, `sigmoid(logit) - label`.
pub fn bce_with_logit(logit: f64, label: f64) -> (f64, f64) {
    debug_assert!(label == 0.0 || label == 1.0);
    let loss = logit.max(0.0) - logit * label + (-logit.abs()).exp().ln_1p();
    (loss, sigmoid(logit) - label)
}
