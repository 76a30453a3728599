//! Full model composition: pooling, co-embedding projections, contrastive
//! loss, and the interaction head, with a joint backward pass over a batch.
//!
//! The training loss is `L_bce + lambda * L_con`. The BCE term comes from
//! the interaction head (bilinear attention by default; with the bilinear
//! block ablated, an MLP of the same hidden width over the concatenated
//! co-embeddings). The contrastive term treats each batch pair's partners
//! as in-batch negatives and is dropped when the contrastive component is
//! ablated.
//!
//! Checkpoints are directories: `config.txt` (key=value model config),
//! `manifest.tsv` (tensor shapes plus a config hash), and one SBEM file per
//! parameter tensor.

use std::path::Path;

use thiserror::Error;

use crate::ban::{ban_forward, BanOutput, BanParams, SoftmaxAxis};
use crate::ban::{ban_backward, bce_with_logit, predict_probability};
use crate::contrastive::{
    info_nce_loss, project_normalize, project_normalize_backward, similarity_matrix,
    ContrastiveError, Temperature, TEMPERATURE_INIT,
};
use crate::embed::{read_embeddings, write_embeddings, EmbedError, TokenEmbeddings};
use crate::mat::{Differentiable, Dropout, Ffn, Linear, Mat, ParamTensor};
use crate::pool::{
    mean_pool_backward, mean_pool_forward, pool_backward, pool_forward, PoolOutput, PoolParams,
};
use crate::rng::{hash_str, SplitMix64};

/// Dropout site ids; the bilinear block derives its own sites from the base.
const SITE_DRUG_POOL: u64 = 0;
const SITE_PROT_POOL: u64 = 1;
const SITE_CONCAT_HEAD: u64 = 4;
const SITE_BAN_BASE: u64 = 8;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("bad checkpoint config: {0}")]
    BadConfig(String),
    #[error("checkpoint manifest mismatch: {0}")]
    BadManifest(String),
    #[error("checkpoint tensor {name}: expected {expected_rows}x{expected_cols}, found {found_rows}x{found_cols}")]
    ShapeMismatch {
        name: String,
        expected_rows: usize,
        expected_cols: usize,
        found_rows: usize,
        found_cols: usize,
    },
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// Which score ranks pairs during evaluation and screening.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreMode {
    /// Cosine similarity of the projected co-embeddings.
    Cosine,
    /// Interaction-head probability.
    Ban,
}

impl ScoreMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreMode::Cosine => "cosine",
            ScoreMode::Ban => "ban",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "cosine" => Some(ScoreMode::Cosine),
            "ban" => Some(ScoreMode::Ban),
            _ => None,
        }
    }
}

/// Model architecture and ablation switches.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub d_drug: usize,
    pub d_protein: usize,
    pub proj_dim: usize,
    /// Feed-forward hidden width multiplier in the pooling blocks.
    pub ffn_mult: usize,
    pub glimpses: usize,
    pub ban_rank: usize,
    pub mlp_hidden: usize,
    pub softmax_axis: SoftmaxAxis,
    /// Learned aggregation; when off, pooling is an unweighted token mean
    /// through the same feed-forward block.
    pub use_la: bool,
    /// Bilinear attention head; when off, the BCE head consumes the
    /// concatenated co-embeddings.
    pub use_ban: bool,
    /// Contrastive alignment; when off, the contrastive term is dropped.
    pub use_cl: bool,
    pub temperature_init: f64,
    pub lambda_con: f64,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_drug: crate::embed::DEFAULT_DRUG_DIM,
            d_protein: crate::embed::DEFAULT_PROTEIN_DIM,
            proj_dim: 1024,
            ffn_mult: 4,
            glimpses: 8,
            ban_rank: 256,
            mlp_hidden: 512,
            softmax_axis: SoftmaxAxis::Rows,
            use_la: true,
            use_ban: true,
            use_cl: true,
            temperature_init: TEMPERATURE_INIT,
            lambda_con: 1.0,
            dropout: 0.05,
        }
    }
}

impl ModelConfig {
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("d_drug".into(), self.d_drug.to_string()),
            ("d_protein".into(), self.d_protein.to_string()),
            ("proj_dim".into(), self.proj_dim.to_string()),
            ("ffn_mult".into(), self.ffn_mult.to_string()),
            ("glimpses".into(), self.glimpses.to_string()),
            ("ban_rank".into(), self.ban_rank.to_string()),
            ("mlp_hidden".into(), self.mlp_hidden.to_string()),
            ("softmax_axis".into(), self.softmax_axis.as_str().into()),
            ("use_la".into(), self.use_la.to_string()),
            ("use_ban".into(), self.use_ban.to_string()),
            ("use_cl".into(), self.use_cl.to_string()),
            ("temperature_init".into(), format!("{}", self.temperature_init)),
            ("lambda_con".into(), format!("{}", self.lambda_con)),
            ("dropout".into(), format!("{}", self.dropout)),
        ]
    }

    pub fn apply_pair(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
            value.parse().map_err(|_| format!("bad value {value:?} for {key}"))
        }
        match key {
            "d_drug" => self.d_drug = parse(key, value)?,
            "d_protein" => self.d_protein = parse(key, value)?,
            "proj_dim" => self.proj_dim = parse(key, value)?,
            "ffn_mult" => self.ffn_mult = parse(key, value)?,
            "glimpses" => self.glimpses = parse(key, value)?,
            "ban_rank" => self.ban_rank = parse(key, value)?,
            "mlp_hidden" => self.mlp_hidden = parse(key, value)?,
            "softmax_axis" => {
                self.softmax_axis = SoftmaxAxis::parse(value)
                    .ok_or_else(|| format!("bad value {value:?} for softmax_axis"))?
            }
            "use_la" => self.use_la = parse(key, value)?,
            "use_ban" => self.use_ban = parse(key, value)?,
            "use_cl" => self.use_cl = parse(key, value)?,
            "temperature_init" => self.temperature_init = parse(key, value)?,
            "lambda_con" => self.lambda_con = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            other => return Err(format!("unknown model config key {other:?}")),
        }
        Ok(())
    }
}

/// The BCE head: bilinear attention over token embeddings, or an MLP over
/// concatenated co-embeddings when the bilinear block is ablated.
#[derive(Debug, Clone)]
pub enum InteractionHead {
    Ban(BanParams),
    Concat(Ffn),
}

/// Every learnable tensor of the model.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub drug_pool: PoolParams,
    pub prot_pool: PoolParams,
    pub proj_drug: Linear,
    pub proj_prot: Linear,
    pub temperature: Temperature,
    pub head: InteractionHead,
}

impl ModelParams {
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let drug_pool = PoolParams::init("drug_pool", config.d_drug, config.ffn_mult, &mut rng);
        let prot_pool = PoolParams::init("prot_pool", config.d_protein, config.ffn_mult, &mut rng);
        let proj_drug = Linear::init("proj_drug", config.d_drug, config.proj_dim, &mut rng);
        let proj_prot = Linear::init("proj_prot", config.d_protein, config.proj_dim, &mut rng);
        let temperature = Temperature::init("temperature", config.temperature_init);
        let head = if config.use_ban {
            InteractionHead::Ban(BanParams::init(
                "ban",
                config.d_drug,
                config.d_protein,
                config.glimpses,
                config.ban_rank,
                config.mlp_hidden,
                &mut rng,
            ))
        } else {
            InteractionHead::Concat(Ffn::init(
                "concat_head",
                2 * config.proj_dim,
                config.mlp_hidden,
                1,
                &mut rng,
            ))
        };
        Self { config: config.clone(), drug_pool, prot_pool, proj_drug, proj_prot, temperature, head }
    }

    /// All parameter tensors in a fixed, documented order.
    pub fn tensors(&self) -> Vec<&ParamTensor> {
        let mut v = vec![
            &self.drug_pool.query,
            &self.drug_pool.key_proj,
            &self.drug_pool.value_proj,
            &self.drug_pool.ffn.lin1.weight,
            &self.drug_pool.ffn.lin1.bias,
            &self.drug_pool.ffn.lin2.weight,
            &self.drug_pool.ffn.lin2.bias,
            &self.prot_pool.query,
            &self.prot_pool.key_proj,
            &self.prot_pool.value_proj,
            &self.prot_pool.ffn.lin1.weight,
            &self.prot_pool.ffn.lin1.bias,
            &self.prot_pool.ffn.lin2.weight,
            &self.prot_pool.ffn.lin2.bias,
            &self.proj_drug.weight,
            &self.proj_drug.bias,
            &self.proj_prot.weight,
            &self.proj_prot.bias,
            &self.temperature.log_scale,
        ];
        match &self.head {
            InteractionHead::Ban(ban) => {
                for g in &ban.glimpses {
                    v.push(&g.drug_proj);
                    v.push(&g.prot_proj);
                }
                v.push(&ban.head.lin1.weight);
                v.push(&ban.head.lin1.bias);
                v.push(&ban.head.lin2.weight);
                v.push(&ban.head.lin2.bias);
            }
            InteractionHead::Concat(ffn) => {
                v.push(&ffn.lin1.weight);
                v.push(&ffn.lin1.bias);
                v.push(&ffn.lin2.weight);
                v.push(&ffn.lin2.bias);
            }
        }
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut v = vec![
            &mut self.drug_pool.query,
            &mut self.drug_pool.key_proj,
            &mut self.drug_pool.value_proj,
            &mut self.drug_pool.ffn.lin1.weight,
            &mut self.drug_pool.ffn.lin1.bias,
            &mut self.drug_pool.ffn.lin2.weight,
            &mut self.drug_pool.ffn.lin2.bias,
            &mut self.prot_pool.query,
            &mut self.prot_pool.key_proj,
            &mut self.prot_pool.value_proj,
            &mut self.prot_pool.ffn.lin1.weight,
            &mut self.prot_pool.ffn.lin1.bias,
            &mut self.prot_pool.ffn.lin2.weight,
            &mut self.prot_pool.ffn.lin2.bias,
            &mut self.proj_drug.weight,
            &mut self.proj_drug.bias,
            &mut self.proj_prot.weight,
            &mut self.proj_prot.bias,
            &mut self.temperature.log_scale,
        ];
        match &mut self.head {
            InteractionHead::Ban(ban) => {
                for g in &mut ban.glimpses {
                    v.push(&mut g.drug_proj);
                    v.push(&mut g.prot_proj);
                }
                v.push(&mut ban.head.lin1.weight);
                v.push(&mut ban.head.lin1.bias);
                v.push(&mut ban.head.lin2.weight);
                v.push(&mut ban.head.lin2.bias);
            }
            InteractionHead::Concat(ffn) => {
                v.push(&mut ffn.lin1.weight);
                v.push(&mut ffn.lin1.bias);
                v.push(&mut ffn.lin2.weight);
                v.push(&mut ffn.lin2.bias);
            }
        }
        v
    }

    pub fn zero_grads(&mut self) {
        for t in self.tensors_mut() {
            t.zero_grad();
        }
    }

    fn pool_drug(&self, tokens: &Mat, dropout: &Dropout) -> (PoolOutput, PoolPathCache) {
        if self.config.use_la {
            let (out, cache) = pool_forward(tokens, &self.drug_pool, dropout, SITE_DRUG_POOL);
            (out, PoolPathCache::Attention(cache))
        } else {
            let (out, cache) = mean_pool_forward(tokens, &self.drug_pool, dropout, SITE_DRUG_POOL);
            (out, PoolPathCache::Mean(cache))
        }
    }

    fn pool_prot(&self, tokens: &Mat, dropout: &Dropout) -> (PoolOutput, PoolPathCache) {
        if self.config.use_la {
            let (out, cache) = pool_forward(tokens, &self.prot_pool, dropout, SITE_PROT_POOL);
            (out, PoolPathCache::Attention(cache))
        } else {
            let (out, cache) = mean_pool_forward(tokens, &self.prot_pool, dropout, SITE_PROT_POOL);
            (out, PoolPathCache::Mean(cache))
        }
    }

    /// Pooled embeddings for one pair in evaluation mode.
    pub fn pooled_pair(&self, drug_tokens: &Mat, prot_tokens: &Mat) -> (PoolOutput, PoolOutput) {
        let (d, _) = self.pool_drug(drug_tokens, &Dropout::Off);
        let (t, _) = self.pool_prot(prot_tokens, &Dropout::Off);
        (d, t)
    }

    /// Interaction probability for one pair in evaluation mode.
    pub fn interaction_probability(
        &self,
        drug_tokens: &Mat,
        prot_tokens: &Mat,
    ) -> Result<f64, ContrastiveError> {
        match &self.head {
            InteractionHead::Ban(ban) => {
                let (out, _) = ban_forward(
                    drug_tokens,
                    prot_tokens,
                    ban,
                    self.config.softmax_axis,
                    &Dropout::Off,
                    SITE_BAN_BASE,
                );
                Ok(out.prob)
            }
            InteractionHead::Concat(ffn) => {
                let (hd, ht) = self.pooled_pair(drug_tokens, prot_tokens);
                let (zd, _) = project_normalize(&hd.pooled, &self.proj_drug, "drug")?;
                let (zt, _) = project_normalize(&ht.pooled, &self.proj_prot, "protein")?;
                let x = concat_rows(&zd, &zt);
                Ok(predict_probability(&x, ffn))
            }
        }
    }

    /// Cosine score for one pair in evaluation mode.
    pub fn cosine_score(
        &self,
        drug_tokens: &Mat,
        prot_tokens: &Mat,
    ) -> Result<f64, ContrastiveError> {
        let (hd, ht) = self.pooled_pair(drug_tokens, prot_tokens);
        crate::contrastive::score_pair(&hd.pooled, &ht.pooled, &self.proj_drug, &self.proj_prot)
    }

    /// Score a pair with the chosen mode, in evaluation mode.
    pub fn score(
        &self,
        drug_tokens: &Mat,
        prot_tokens: &Mat,
        mode: ScoreMode,
    ) -> Result<f64, ContrastiveError> {
        match mode {
            ScoreMode::Cosine => self.cosine_score(drug_tokens, prot_tokens),
            ScoreMode::Ban => self.interaction_probability(drug_tokens, prot_tokens),
        }
    }

    /// Pooling outputs and, when the bilinear head is active, its attention
    /// maps; used by the attention export.
    pub fn pair_attention(
        &self,
        drug_tokens: &Mat,
        prot_tokens: &Mat,
    ) -> (PoolOutput, PoolOutput, Option<BanOutput>) {
        let (d, t) = self.pooled_pair(drug_tokens, prot_tokens);
        let ban = match &self.head {
            InteractionHead::Ban(ban) => {
                let (out, _) = ban_forward(
                    drug_tokens,
                    prot_tokens,
                    ban,
                    self.config.softmax_axis,
                    &Dropout::Off,
                    SITE_BAN_BASE,
                );
                Some(out)
            }
            InteractionHead::Concat(_) => None,
        };
        (d, t, ban)
    }
}

enum PoolPathCache {
    Attention(crate::pool::PoolCache),
    Mean(crate::pool::MeanPoolCache),
}

fn concat_rows(a: &Mat, b: &Mat) -> Mat {
    let mut data = Vec::with_capacity(a.cols() + b.cols());
    data.extend_from_slice(a.row(0));
    data.extend_from_slice(b.row(0));
    Mat::from_vec(1, a.cols() + b.cols(), data)
}

/// One labeled training example; token matrices are borrowed from the
/// embedding store.
#[derive(Clone, Copy)]
pub struct PairExample<'a> {
    pub drug: &'a Mat,
    pub protein: &'a Mat,
    pub label: u8,
}

/// Loss components of one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLosses {
    pub total: f64,
    pub bce: f64,
    pub contrastive: f64,
}

/// Forward-only batch loss (used by gradient checks and reporting).
pub fn batch_loss(
    params: &ModelParams,
    batch: &[PairExample],
    dropout: &Dropout,
) -> Result<BatchLosses, ContrastiveError> {
    run_batch(&mut params.clone(), batch, dropout, false)
}

/// Forward and backward over a batch; accumulates gradients into `params`.
/// Gradients are not zeroed first, so the caller controls accumulation.
pub fn batch_forward_backward(
    params: &mut ModelParams,
    batch: &[PairExample],
    dropout: &Dropout,
) -> Result<BatchLosses, ContrastiveError> {
    run_batch(params, batch, dropout, true)
}

fn run_batch(
    params: &mut ModelParams,
    batch: &[PairExample],
    dropout: &Dropout,
    backward: bool,
) -> Result<BatchLosses, ContrastiveError> {
    assert!(!batch.is_empty(), "empty batch");
    let n = batch.len();
    let lambda = params.config.lambda_con;

    // Pool and project every pair.
    let mut pool_outs = Vec::with_capacity(n);
    let mut z_drugs = Vec::with_capacity(n);
    let mut z_prots = Vec::with_capacity(n);
    for pair in batch {
        let (hd, d_cache) = params.pool_drug(pair.drug, dropout);
        let (ht, t_cache) = params.pool_prot(pair.protein, dropout);
        let (zd, zd_cache) = project_normalize(&hd.pooled, &params.proj_drug, "drug")?;
        let (zt, zt_cache) = project_normalize(&ht.pooled, &params.proj_prot, "protein")?;
        z_drugs.push(zd);
        z_prots.push(zt);
        pool_outs.push((d_cache, t_cache, zd_cache, zt_cache));
    }

    // Contrastive term over the whole batch (needs at least two pairs).
    let mut d_z_drugs: Vec<Mat> = (0..n).map(|_| Mat::zeros(1, params.config.proj_dim)).collect();
    let mut d_z_prots: Vec<Mat> = (0..n).map(|_| Mat::zeros(1, params.config.proj_dim)).collect();
    let mut contrastive = 0.0;
    if params.config.use_cl && n >= 2 {
        let zd = Mat::vstack(&z_drugs);
        let zt = Mat::vstack(&z_prots);
        let sims = similarity_matrix(&zd, &zt);
        let scale = params.temperature.scale();
        let (loss, d_sims, d_scale) = info_nce_loss(&sims, scale);
        contrastive = loss;
        if backward {
            params.temperature.accumulate_grad(lambda * d_scale);
            let d_zd = d_sims.matmul(&zt).scale(lambda);
            let d_zt = d_sims.transpose().matmul(&zd).scale(lambda);
            for i in 0..n {
                d_z_drugs[i] = Mat::from_vec(1, d_zd.cols(), d_zd.row(i).to_vec());
                d_z_prots[i] = Mat::from_vec(1, d_zt.cols(), d_zt.row(i).to_vec());
            }
        }
    }

    // BCE term through the interaction head, averaged over the batch.
    let inv_n = 1.0 / n as f64;
    let mut bce = 0.0;
    match &mut params.head {
        InteractionHead::Ban(ban) => {
            for pair in batch {
                let (_, cache) = ban_forward(
                    pair.drug,
                    pair.protein,
                    ban,
                    params.config.softmax_axis,
                    dropout,
                    SITE_BAN_BASE,
                );
                let (loss, d_logit) = bce_with_logit(cache.logit(), f64::from(pair.label));
                bce += loss * inv_n;
                if backward {
                    ban_backward(
                        d_logit * inv_n,
                        &cache,
                        ban,
                        params.config.softmax_axis,
                        dropout,
                        SITE_BAN_BASE,
                    );
                }
            }
        }
        InteractionHead::Concat(ffn) => {
            for (i, pair) in batch.iter().enumerate() {
                let x = concat_rows(&z_drugs[i], &z_prots[i]);
                let (logit, cache) = ffn.forward(&x, dropout, SITE_CONCAT_HEAD);
                let (loss, d_logit) = bce_with_logit(logit.at(0, 0), f64::from(pair.label));
                bce += loss * inv_n;
                if backward {
                    let d_logit_mat = Mat::from_vec(1, 1, vec![d_logit * inv_n]);
                    let d_x = ffn.backward(&cache, &d_logit_mat, dropout, SITE_CONCAT_HEAD);
                    let p = d_x.cols() / 2;
                    let (left, right) = d_x.row(0).split_at(p);
                    d_z_drugs[i].add_scaled_assign(&Mat::from_vec(1, p, left.to_vec()), 1.0);
                    d_z_prots[i].add_scaled_assign(&Mat::from_vec(1, p, right.to_vec()), 1.0);
                }
            }
        }
    }

    // Back through projections and pooling.
    if backward {
        for (i, (d_cache, t_cache, zd_cache, zt_cache)) in pool_outs.into_iter().enumerate() {
            let d_hd = project_normalize_backward(&d_z_drugs[i], &zd_cache, &mut params.proj_drug);
            let d_ht = project_normalize_backward(&d_z_prots[i], &zt_cache, &mut params.proj_prot);
            match d_cache {
                PoolPathCache::Attention(c) => {
                    pool_backward(&d_hd, &c, &mut params.drug_pool, dropout, SITE_DRUG_POOL)
                }
                PoolPathCache::Mean(c) => {
                    mean_pool_backward(&d_hd, &c, &mut params.drug_pool, dropout, SITE_DRUG_POOL)
                }
            }
            match t_cache {
                PoolPathCache::Attention(c) => {
                    pool_backward(&d_ht, &c, &mut params.prot_pool, dropout, SITE_PROT_POOL)
                }
                PoolPathCache::Mean(c) => {
                    mean_pool_backward(&d_ht, &c, &mut params.prot_pool, dropout, SITE_PROT_POOL)
                }
            }
        }
    }

    let applied_lambda = if params.config.use_cl { lambda } else { 0.0 };
    Ok(BatchLosses { total: bce + applied_lambda * contrastive, bce, contrastive })
}

/// A fixed batch bound to model parameters, exposing the composed loss to
/// the finite-difference checker.
#[derive(Clone)]
pub struct BatchProblem {
    pub params: ModelParams,
    pub drugs: Vec<Mat>,
    pub proteins: Vec<Mat>,
    pub labels: Vec<u8>,
}

impl BatchProblem {
    fn batch(&self) -> Vec<PairExample<'_>> {
        (0..self.labels.len())
            .map(|i| PairExample {
                drug: &self.drugs[i],
                protein: &self.proteins[i],
                label: self.labels[i],
            })
            .collect()
    }
}

impl Differentiable for BatchProblem {
    fn loss(&self) -> f64 {
        batch_loss(&self.params, &self.batch(), &Dropout::Off).expect("finite batch loss").total
    }

    fn loss_and_grad(&mut self) -> f64 {
        self.params.zero_grads();
        let drugs = &self.drugs;
        let proteins = &self.proteins;
        let batch: Vec<PairExample<'_>> = self
            .labels
            .iter()
            .enumerate()
            .map(|(i, &label)| PairExample { drug: &drugs[i], protein: &proteins[i], label })
            .collect();
        batch_forward_backward(&mut self.params, &batch, &Dropout::Off)
            .expect("finite batch loss")
            .total
    }

    fn params(&self) -> Vec<&ParamTensor> {
        self.params.tensors()
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        self.params.tensors_mut()
    }
}

/// Stable hash of the checkpoint config text, recorded in the manifest.
fn config_hash(config_text: &str) -> String {
    format!("{:016x}", hash_str(config_text))
}

fn render_config(config: &ModelConfig) -> String {
    let mut out = String::new();
    for (k, v) in config.to_pairs() {
        out.push_str(&k);
        out.push('=');
        out.push_str(&v);
        out.push('\n');
    }
    out
}

fn parse_config(text: &str) -> Result<ModelConfig, CheckpointError> {
    let mut config = ModelConfig::default();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CheckpointError::BadConfig(format!("missing '=' in {line:?}")))?;
        config.apply_pair(key.trim(), value.trim()).map_err(CheckpointError::BadConfig)?;
    }
    Ok(config)
}

/// Write a checkpoint directory: config, manifest, and one SBEM file per
/// tensor. Values are narrowed to `f32` by the container format.
pub fn save_checkpoint(params: &ModelParams, dir: &Path) -> Result<(), CheckpointError> {
    let io = |e: std::io::Error| CheckpointError::Io { path: dir.display().to_string(), source: e };
    std::fs::create_dir_all(dir).map_err(io)?;
    let config_text = render_config(&params.config);
    std::fs::write(dir.join("config.txt"), &config_text).map_err(io)?;

    let mut manifest = String::new();
    manifest.push_str(&format!("# config_hash={}\n", config_hash(&config_text)));
    manifest.push_str("name\trows\tcols\tfile\n");
    for tensor in params.tensors() {
        let file = format!("{}.sbem", tensor.name);
        manifest.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            tensor.name,
            tensor.value.rows(),
            tensor.value.cols(),
            file
        ));
        let emb = TokenEmbeddings { entity_id: tensor.name.clone(), matrix: tensor.value.clone() };
        write_embeddings(&dir.join(file), &emb)?;
    }
    std::fs::write(dir.join("manifest.tsv"), manifest).map_err(io)?;
    Ok(())
}

/// Load a checkpoint directory written by [`save_checkpoint`].
pub fn load_checkpoint(dir: &Path) -> Result<ModelParams, CheckpointError> {
    let io = |e: std::io::Error| CheckpointError::Io { path: dir.display().to_string(), source: e };
    let config_text = std::fs::read_to_string(dir.join("config.txt")).map_err(io)?;
    let config = parse_config(&config_text)?;

    let manifest = std::fs::read_to_string(dir.join("manifest.tsv")).map_err(io)?;
    if let Some(line) = manifest.lines().find(|l| l.starts_with("# config_hash=")) {
        let recorded = line.trim_start_matches("# config_hash=");
        let actual = config_hash(&config_text);
        if recorded != actual {
            return Err(CheckpointError::BadManifest(format!(
                "config hash {recorded} does not match config.txt ({actual})"
            )));
        }
    }

    let mut params = ModelParams::init(&config, 0);
    for tensor in params.tensors_mut() {
        let path = dir.join(format!("{}.sbem", tensor.name));
        let emb = read_embeddings(&path)?;
        if emb.matrix.shape() != tensor.value.shape() {
            return Err(CheckpointError::ShapeMismatch {
                name: tensor.name.clone(),
                expected_rows: tensor.value.rows(),
                expected_cols: tensor.value.cols(),
                found_rows: emb.matrix.rows(),
                found_cols: emb.matrix.cols(),
            });
        }
        tensor.value = emb.matrix;
        tensor.zero_grad();
    }
    Ok(params)
}
