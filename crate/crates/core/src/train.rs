//! Training harness: AdamW with decoupled weight decay, deterministic
//! dataset splitting with k-fold coverage, an early-stopped training loop
//! that keeps the best-validation checkpoint, and the four-variant ablation
//! runner.

use rayon::prelude::*;
use thiserror::Error;

use crate::contrastive::ContrastiveError;
use crate::embed::{EmbedError, EmbeddingSource, PairRecord};
use crate::mat::{Dropout, Mat, ParamTensor};
use crate::metrics::{MetricError, MetricReport, ScoredSet};
use crate::model::{
    batch_forward_backward, ModelConfig, ModelParams, PairExample, ScoreMode,
};
use crate::rng::{mix, SplitMix64};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("too few samples: {n} pairs for k={k} (need at least {min})")]
    TooFewSamples { n: usize, k: usize, min: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}: training aborted")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("non-finite gradient in tensor '{name}'")]
    NonFiniteGradient { name: String },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Contrastive(#[from] ContrastiveError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Optimization hyperparameters plus the model configuration. The flat
/// key=value form mirrors the CLI flags and the on-disk config files.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Score used for validation model selection and evaluation reports.
    pub score_mode: ScoreMode,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            weight_decay: 1e-4,
            batch_size: 64,
            max_epochs: 200,
            patience: 20,
            seed: 0,
            score_mode: ScoreMode::Ban,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::InvalidConfig(msg));
        if self.lr <= 0.0 {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.weight_decay < 0.0 {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.patience >= self.max_epochs {
            return bad(format!(
                "patience ({}) must be below max_epochs ({})",
                self.patience, self.max_epochs
            ));
        }
        if !(0.0..1.0).contains(&self.model.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.model.dropout));
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut pairs = vec![
            ("lr".into(), format!("{}", self.lr)),
            ("weight_decay".into(), format!("{}", self.weight_decay)),
            ("batch_size".into(), self.batch_size.to_string()),
            ("max_epochs".into(), self.max_epochs.to_string()),
            ("patience".into(), self.patience.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("score_mode".into(), self.score_mode.as_str().into()),
        ];
        pairs.extend(self.model.to_pairs());
        pairs
    }

    pub fn apply_pair(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
            value.parse().map_err(|_| format!("bad value {value:?} for {key}"))
        }
        match key {
            "lr" => self.lr = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "score_mode" => {
                self.score_mode = ScoreMode::parse(value)
                    .ok_or_else(|| format!("bad value {value:?} for score_mode"))?
            }
            _ => return self.model.apply_pair(key, value),
        }
        Ok(())
    }

    /// Parse a key=value config file body; `#` starts a comment line.
    pub fn apply_text(&mut self, text: &str) -> Result<(), String> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) =
                line.split_once('=').ok_or_else(|| format!("line {}: missing '='", i + 1))?;
            self.apply_pair(key.trim(), value.trim())?;
        }
        Ok(())
    }
}

/// Train/validation/test index sets of one fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Fold assignments for k-fold cross-validation. Test sets partition the
/// dataset; within each fold the remainder is split train/validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub folds: Vec<FoldSplit>,
}

/// Deterministic k-fold split plan. The shuffled indices are cut into k
/// test chunks; within each fold the remaining samples are divided by the
/// train:validation ratio. With k=5 and ratios 7:1:2 every fold lands
/// within one sample of the exact 7:1:2 proportions.
pub fn make_splits(
    n_pairs: usize,
    k: usize,
    ratios: (usize, usize, usize),
    seed: u64,
) -> Result<SplitPlan, TrainError> {
    let (r_train, r_val, r_test) = ratios;
    if k < 2 || r_train == 0 || r_val == 0 || r_test == 0 {
        return Err(TrainError::InvalidConfig(format!(
            "need k >= 2 and positive ratios, got k={k}, ratios {ratios:?}"
        )));
    }
    let min = k * 10;
    if n_pairs < min {
        return Err(TrainError::TooFewSamples { n: n_pairs, k, min });
    }
    let mut order: Vec<usize> = (0..n_pairs).collect();
    SplitMix64::new(mix(&[seed, 0x5B11])).shuffle(&mut order);

    let sum = (r_train + r_val + r_test) as f64;
    let mut folds = Vec::with_capacity(k);
    for fold in 0..k {
        let lo = fold * n_pairs / k;
        let hi = (fold + 1) * n_pairs / k;
        let test: Vec<usize> = order[lo..hi].to_vec();
        let rest: Vec<usize> = order[..lo].iter().chain(&order[hi..]).copied().collect();
        let val_size = (n_pairs as f64 * r_val as f64 / sum).round() as usize;
        let val_size = val_size.min(rest.len().saturating_sub(1));
        let (val, train) = rest.split_at(val_size);
        folds.push(FoldSplit { train: train.to_vec(), val: val.to_vec(), test });
    }
    Ok(SplitPlan { folds })
}

/// AdamW moment state; tensor order mirrors the parameter list it was
/// created from.
#[derive(Debug, Clone)]
pub struct AdamWState {
    m: Vec<Mat>,
    v: Vec<Mat>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamWState {
    pub fn new(tensors: &[&ParamTensor]) -> Self {
        Self {
            m: tensors.iter().map(|t| Mat::zeros(t.value.rows(), t.value.cols())).collect(),
            v: tensors.iter().map(|t| Mat::zeros(t.value.rows(), t.value.cols())).collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One AdamW update with decoupled weight decay:
/// `theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * theta`,
/// with bias-corrected moments.
pub fn adamw_step(
    tensors: &mut [&mut ParamTensor],
    state: &mut AdamWState,
    lr: f64,
    weight_decay: f64,
) -> Result<(), TrainError> {
    assert_eq!(tensors.len(), state.m.len(), "optimizer state does not match parameters");
    for t in tensors.iter() {
        if t.grad.data().iter().any(|g| !g.is_finite()) {
            return Err(TrainError::NonFiniteGradient { name: t.name.clone() });
        }
    }
    state.step += 1;
    let correction1 = 1.0 - state.beta1.powi(state.step as i32);
    let correction2 = 1.0 - state.beta2.powi(state.step as i32);
    for (i, tensor) in tensors.iter_mut().enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let grads = tensor.grad.data();
        let mut updated = Vec::with_capacity(grads.len());
        for (j, &g) in grads.iter().enumerate() {
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
            let m_hat = m[j] / correction1;
            let v_hat = v[j] / correction2;
            let theta = tensor.value.data()[j];
            updated.push(theta - lr * m_hat / (v_hat.sqrt() + state.epsilon) - lr * weight_decay * theta);
        }
        tensor.value = Mat::from_vec(tensor.value.rows(), tensor.value.cols(), updated);
    }
    Ok(())
}

/// Early stopping on a maximized validation metric: a new best must be a
/// strict improvement; training stops once `patience` epochs pass without
/// one.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    best_epoch: usize,
    best_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    NewBest,
    Wait,
    Stop,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self { patience, best_epoch: 0, best_value: f64::NEG_INFINITY }
    }

    pub fn observe(&mut self, epoch: usize, value: f64) -> StopDecision {
        if value > self.best_value {
            self.best_value = value;
            self.best_epoch = epoch;
            StopDecision::NewBest
        } else if epoch - self.best_epoch >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Wait
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_value(&self) -> f64 {
        self.best_value
    }
}

/// Pairs with their token matrices resolved against the stores up front.
pub struct ResolvedDataset<'a> {
    pub drugs: Vec<&'a Mat>,
    pub proteins: Vec<&'a Mat>,
    pub labels: Vec<u8>,
}

impl<'a> ResolvedDataset<'a> {
    pub fn resolve(
        pairs: &[PairRecord],
        drug_store: &'a impl EmbeddingSource,
        protein_store: &'a impl EmbeddingSource,
    ) -> Result<Self, EmbedError> {
        let mut drugs = Vec::with_capacity(pairs.len());
        let mut proteins = Vec::with_capacity(pairs.len());
        let mut labels = Vec::with_capacity(pairs.len());
        for pair in pairs {
            drugs.push(&drug_store.embedding(&pair.drug_id)?.matrix);
            proteins.push(&protein_store.embedding(&pair.protein_id)?.matrix);
            labels.push(pair.label);
        }
        Ok(Self { drugs, proteins, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn example(&self, i: usize) -> PairExample<'a> {
        PairExample { drug: self.drugs[i], protein: self.proteins[i], label: self.labels[i] }
    }
}

/// Score the given subset of pairs in evaluation mode; pairs are scored in
/// parallel and returned in input order.
pub fn score_subset(
    params: &ModelParams,
    data: &ResolvedDataset,
    indices: &[usize],
    mode: ScoreMode,
) -> Result<Vec<(f64, u8)>, TrainError> {
    indices
        .par_iter()
        .map(|&i| {
            let score = params.score(data.drugs[i], data.proteins[i], mode)?;
            Ok((score, data.labels[i]))
        })
        .collect()
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub bce: f64,
    pub contrastive: f64,
    pub val_auroc: f64,
}

/// Result of one training run: the best-validation checkpoint and the full
/// history.
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_auroc: f64,
    pub stopped_epoch: usize,
}

/// Train on one fold. Stops early after `patience` epochs without strict
/// validation-AUROC improvement and returns the checkpoint from the best
/// epoch, never the last.
pub fn train(
    data: &ResolvedDataset,
    split: &FoldSplit,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if split.train.is_empty() || split.val.is_empty() {
        return Err(TrainError::InvalidConfig("empty train or validation split".into()));
    }
    let mut params = ModelParams::init(&cfg.model, cfg.seed);
    let mut adam = AdamWState::new(&params.tensors());
    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut history = Vec::new();
    let mut best_params = params.clone();
    let mut global_step: u64 = 0;

    for epoch in 1..=cfg.max_epochs {
        let mut order = split.train.clone();
        SplitMix64::new(mix(&[cfg.seed, 0xE60C, epoch as u64])).shuffle(&mut order);

        let mut loss_sum = 0.0;
        let mut bce_sum = 0.0;
        let mut con_sum = 0.0;
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            global_step += 1;
            let batch: Vec<PairExample> = chunk.iter().map(|&i| data.example(i)).collect();
            let dropout = if cfg.model.dropout > 0.0 {
                Dropout::On { seed: cfg.seed, step: global_step, rate: cfg.model.dropout }
            } else {
                Dropout::Off
            };
            params.zero_grads();
            let losses = batch_forward_backward(&mut params, &batch, &dropout)?;
            if !losses.total.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: batch_idx });
            }
            let mut tensors = params.tensors_mut();
            adamw_step(&mut tensors, &mut adam, cfg.lr, cfg.weight_decay)?;
            let w = chunk.len() as f64;
            loss_sum += losses.total * w;
            bce_sum += losses.bce * w;
            con_sum += losses.contrastive * w;
        }

        let n_train = split.train.len() as f64;
        let val_scores = score_subset(&params, data, &split.val, cfg.score_mode)?;
        let val_auroc = crate::metrics::auroc(&ScoredSet::new(val_scores)?)?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n_train,
            bce: bce_sum / n_train,
            contrastive: con_sum / n_train,
            val_auroc,
        });

        match stopper.observe(epoch, val_auroc) {
            StopDecision::NewBest => best_params = params.clone(),
            StopDecision::Wait => {}
            StopDecision::Stop => {
                return Ok(TrainOutcome {
                    params: best_params,
                    history,
                    best_epoch: stopper.best_epoch(),
                    best_val_auroc: stopper.best_value(),
                    stopped_epoch: epoch,
                });
            }
        }
    }
    Ok(TrainOutcome {
        params: best_params,
        history,
        best_epoch: stopper.best_epoch(),
        best_val_auroc: stopper.best_value(),
        stopped_epoch: cfg.max_epochs,
    })
}

/// Evaluate a trained model on a subset and compute the full metric report.
pub fn evaluate_subset(
    params: &ModelParams,
    data: &ResolvedDataset,
    indices: &[usize],
    mode: ScoreMode,
    bedroc_alpha: f64,
) -> Result<MetricReport, TrainError> {
    let scores = score_subset(params, data, indices, mode)?;
    Ok(MetricReport::compute(&ScoredSet::new(scores)?, bedroc_alpha)?)
}

/// The four ablation variants: the full model and the three single-removal
/// variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationVariant {
    pub name: &'static str,
    pub use_la: bool,
    pub use_ban: bool,
    pub use_cl: bool,
}

pub const ABLATION_VARIANTS: [AblationVariant; 4] = [
    AblationVariant { name: "full", use_la: true, use_ban: true, use_cl: true },
    AblationVariant { name: "wo_la", use_la: false, use_ban: true, use_cl: true },
    AblationVariant { name: "wo_ban", use_la: true, use_ban: false, use_cl: true },
    AblationVariant { name: "wo_cl", use_la: true, use_ban: true, use_cl: false },
];

/// One row of the ablation comparison.
pub struct AblationRun {
    pub variant: AblationVariant,
    pub config: TrainConfig,
    pub outcome: TrainOutcome,
    pub test_report: MetricReport,
}

/// Train the full model and the three single-removal variants on identical
/// seeds and splits, and evaluate each on the fold's test set.
pub fn run_ablation(
    data: &ResolvedDataset,
    split: &FoldSplit,
    cfg: &TrainConfig,
    bedroc_alpha: f64,
) -> Result<Vec<AblationRun>, TrainError> {
    let mut runs = Vec::with_capacity(ABLATION_VARIANTS.len());
    for variant in ABLATION_VARIANTS {
        let mut vcfg = cfg.clone();
        vcfg.model.use_la = variant.use_la;
        vcfg.model.use_ban = variant.use_ban;
        vcfg.model.use_cl = variant.use_cl;
        let outcome = train(data, split, &vcfg)?;
        let test_report =
            evaluate_subset(&outcome.params, data, &split.test, vcfg.score_mode, bedroc_alpha)?;
        runs.push(AblationRun { variant, config: vcfg, outcome, test_report });
    }
    Ok(runs)
}
