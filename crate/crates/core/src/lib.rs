//! Sequence-based drug-target interaction modeling.
//!
//! The crate covers the full pipeline on top of frozen per-token
//! embeddings:
//!
//! - [`protein`]: the 441-token structure-aware protein vocabulary.
//! - [`selfies`]: SELFIES tokenizer and total, valence-clamped decoder.
//! - [`embed`]: SBEM embedding files, a deterministic synthetic embedding
//!   generator, and pair-dataset loading.
//! - [`mat`]: the dense `f64` kernel with hand-written backward passes and
//!   a finite-difference gradient checker.
//! - [`pool`]: class-token attention pooling with exportable weights.
//! - [`contrastive`]: co-embedding projections and symmetric InfoNCE.
//! - [`ban`]: multi-glimpse bilinear attention and the MLP head.
//! - [`model`]: the composed network, batch forward/backward, checkpoints.
//! - [`train`](mod@train): AdamW, split plans, early stopping, ablation runs.
//! - [`metrics`]: AUROC, AUPRC, accuracy, BEDROC, enrichment factors.

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod ban;
pub mod contrastive;
pub mod embed;
pub mod mat;
pub mod metrics;
pub mod model;
pub mod pool;
pub mod protein;
pub mod rng;
pub mod selfies;
pub mod train;

pub use ban::{BanOutput, BanParams, SoftmaxAxis};
pub use contrastive::{info_nce_loss, similarity_matrix, Temperature};
pub use embed::{
    load_pairs, read_embeddings, synth_embedding, write_embeddings, EmbeddingSource,
    EmbeddingStore, PairRecord, TokenEmbeddings,
};
pub use mat::{grad_check, Differentiable, Dropout, Mat, ParamTensor};
pub use metrics::{MetricReport, ScoredSet};
pub use model::{
    load_checkpoint, save_checkpoint, BatchProblem, ModelConfig, ModelParams, ScoreMode,
};
pub use pool::{pool_forward, PoolOutput, PoolParams};
pub use protein::{encode_pair, encode_sequence, vocab_size, ProteinTokenSeq, StructToken};
pub use selfies::{decode, tokenize, validate, DrugTokenSeq, MolGraph, SelfiesToken};
pub use train::{
    make_splits, run_ablation, train, AdamWState, EarlyStopper, FoldSplit, SplitPlan, TrainConfig,
    TrainOutcome,
};
