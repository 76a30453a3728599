//! Subcommand definitions and implementations.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use saban_core::embed::{
    load_pairs, planted_dataset, read_embeddings, synth_embedding, write_embeddings,
    EmbeddingSource, EmbeddingStore, PairRecord, PlantedSpec, DEFAULT_DRUG_DIM,
    DEFAULT_PROTEIN_DIM,
};
use saban_core::metrics::{MetricReport, ScoredSet, DEFAULT_BEDROC_ALPHA};
use saban_core::model::{load_checkpoint, save_checkpoint, ModelParams, ScoreMode};
use saban_core::pool::export_attention;
use saban_core::protein;
use saban_core::selfies;
use saban_core::train::{
    evaluate_subset, make_splits, run_ablation, train, ResolvedDataset, TrainConfig, TrainOutcome,
};

use crate::manifest::RunManifest;

#[derive(Parser)]
#[command(name = "saban", version, about = "Sequence-based drug-target interaction pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Tokenize a SELFIES string or an annotated protein sequence
    Tokenize(TokenizeArgs),
    /// Decode a SELFIES string into an atom/bond listing
    Decode(DecodeArgs),
    /// Materialize embedding files: synthetic single entities or the
    /// planted benchmark dataset
    Embed(EmbedArgs),
    /// Train on one fold of the split plan and write a checkpoint
    Train(TrainArgs),
    /// Evaluate a checkpoint on every fold's test set
    Evaluate(EvaluateArgs),
    /// Rank a ligand library against one protein target
    Screen(ScreenArgs),
    /// Train the full model and the three ablation variants on identical
    /// splits
    Ablate(AblateArgs),
    /// Export pooling and bilinear attention weights for one pair
    ExportAttention(ExportAttentionArgs),
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Tokenize(args) => run_tokenize(args),
        Command::Decode(args) => run_decode(args),
        Command::Embed(args) => run_embed(args),
        Command::Train(args) => run_train(args),
        Command::Evaluate(args) => run_evaluate(args),
        Command::Screen(args) => run_screen(args),
        Command::Ablate(args) => run_ablate(args),
        Command::ExportAttention(args) => run_export_attention(args),
    }
}

fn emit(out: Option<&Path>, contents: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, contents)
            .with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

fn manifest_path_for(out: &Path) -> PathBuf {
    if out.is_dir() {
        out.join("manifest.txt")
    } else {
        let mut name = out.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.txt");
        out.with_file_name(name)
    }
}

// ---------------------------------------------------------------------------
// tokenize / decode
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct TokenizeArgs {
    /// SELFIES string to tokenize
    #[arg(long, conflicts_with = "protein")]
    selfies: Option<String>,
    /// Annotated protein sequence (interleaved residue/geometry characters)
    #[arg(long)]
    protein: Option<String>,
    /// Output TSV path (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run_tokenize(args: TokenizeArgs) -> Result<()> {
    let mut table = String::from("position\ttoken\tid\n");
    let source;
    match (&args.selfies, &args.protein) {
        (Some(s), None) => {
            source = format!("selfies:{s}");
            for (i, token) in selfies::tokenize(s)?.iter().enumerate() {
                table.push_str(&format!("{i}\t{}\t{}\n", token.text(), token.vocab_id()));
            }
        }
        (None, Some(p)) => {
            source = format!("protein:{p}");
            let seq = protein::encode_sequence(p)?;
            for (i, token) in seq.tokens().iter().enumerate() {
                let (r, g) = protein::decode_pair(*token);
                table.push_str(&format!("{i}\t{r}{g}\t{}\n", token.id()));
            }
        }
        _ => bail!("provide exactly one of --selfies or --protein"),
    }
    emit(args.out.as_deref(), &table)?;
    if let Some(out) = &args.out {
        let mut m = RunManifest::new("tokenize");
        m.push("arg.source", source);
        m.push("output.table", out.display().to_string());
        m.write(&manifest_path_for(out))?;
    }
    Ok(())
}

#[derive(Args)]
pub struct DecodeArgs {
    /// SELFIES string to decode
    #[arg(long)]
    selfies: String,
    /// Output TSV path (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run_decode(args: DecodeArgs) -> Result<()> {
    let tokens = selfies::tokenize(&args.selfies)?;
    let (graph, events) = selfies::decode(&tokens);
    let mut table = String::from("record\tindex\telement\tmax_valence\tfrom\tto\torder\n");
    for (i, atom) in graph.atoms.iter().enumerate() {
        table.push_str(&format!(
            "atom\t{i}\t{}\t{}\t-\t-\t-\n",
            atom.element.symbol(),
            atom.max_valence
        ));
    }
    for (i, bond) in graph.bonds.iter().enumerate() {
        table.push_str(&format!("bond\t{i}\t-\t-\t{}\t{}\t{}\n", bond.a, bond.b, bond.order));
    }
    emit(args.out.as_deref(), &table)?;
    for event in &events {
        eprintln!("note: token {}: {:?}", event.token_index, event.kind);
    }
    if let Some(out) = &args.out {
        let mut m = RunManifest::new("decode");
        m.push("arg.selfies", args.selfies.clone());
        m.push("result.atoms", graph.atoms.len().to_string());
        m.push("result.bonds", graph.bonds.len().to_string());
        m.push("result.diagnostics", events.len().to_string());
        m.push("output.table", out.display().to_string());
        m.write(&manifest_path_for(out))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// embed
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct EmbedArgs {
    /// Use the deterministic synthetic generator (the default and only
    /// embedding mode; accepted for explicitness)
    #[arg(long)]
    synthetic: bool,
    /// SELFIES string to tokenize and embed
    #[arg(long)]
    selfies: Option<String>,
    /// Annotated protein sequence to tokenize and embed
    #[arg(long)]
    protein: Option<String>,
    /// Comma-separated raw token ids
    #[arg(long)]
    tokens: Option<String>,
    /// Entity id stored with the matrix (defaults to the output file stem)
    #[arg(long)]
    id: Option<String>,
    /// Embedding width (default 768 for drugs, 1280 for proteins)
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output .sbem path for single-entity mode
    #[arg(long)]
    out: Option<PathBuf>,

    /// Write the planted rank-1 benchmark dataset instead
    #[arg(long)]
    planted: bool,
    #[arg(long, default_value_t = 2000)]
    n_pairs: usize,
    #[arg(long, default_value_t = 64)]
    d_drug: usize,
    #[arg(long, default_value_t = 64)]
    d_protein: usize,
    #[arg(long, default_value_t = 8)]
    drug_tokens: usize,
    #[arg(long, default_value_t = 12)]
    protein_tokens: usize,
    /// Planted signal magnitude relative to the unit noise
    #[arg(long, default_value_t = 2.0)]
    strength: f64,
    /// Output directory for planted mode (drugs/, proteins/, pairs.tsv)
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn run_embed(args: EmbedArgs) -> Result<()> {
    if args.planted {
        return run_embed_planted(args);
    }
    let out = args.out.clone().ok_or_else(|| anyhow!("--out is required"))?;
    let entity_id = args
        .id
        .clone()
        .or_else(|| out.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .ok_or_else(|| anyhow!("cannot derive an entity id; pass --id"))?;

    let (token_ids, dim, source) = match (&args.selfies, &args.protein, &args.tokens) {
        (Some(s), None, None) => {
            let ids: Vec<usize> =
                selfies::tokenize(s)?.iter().map(|t| t.vocab_id()).collect();
            (ids, args.dim.unwrap_or(DEFAULT_DRUG_DIM), format!("selfies:{s}"))
        }
        (None, Some(p), None) => {
            let seq = protein::encode_sequence(p)?;
            (seq.ids(), args.dim.unwrap_or(DEFAULT_PROTEIN_DIM), format!("protein:{p}"))
        }
        (None, None, Some(t)) => {
            let ids = t
                .split(',')
                .map(|x| x.trim().parse::<usize>().map_err(|_| anyhow!("bad token id {x:?}")))
                .collect::<Result<Vec<_>>>()?;
            let dim = args.dim.ok_or_else(|| anyhow!("--dim is required with --tokens"))?;
            (ids, dim, format!("tokens:{t}"))
        }
        _ => bail!("provide exactly one of --selfies, --protein, or --tokens"),
    };
    let emb = synth_embedding(&entity_id, &token_ids, dim, args.seed)?;
    write_embeddings(&out, &emb)?;

    let mut m = RunManifest::new("embed");
    m.push("arg.source", source);
    m.push("arg.id", entity_id);
    m.push("arg.dim", dim.to_string());
    m.push("arg.seed", args.seed.to_string());
    m.push("result.tokens", token_ids.len().to_string());
    m.push("output.sbem", out.display().to_string());
    m.write(&manifest_path_for(&out))?;
    Ok(())
}

fn run_embed_planted(args: EmbedArgs) -> Result<()> {
    let out_dir = args.out_dir.clone().ok_or_else(|| anyhow!("--out-dir is required with --planted"))?;
    let spec = PlantedSpec {
        n_pairs: args.n_pairs,
        d_drug: args.d_drug,
        d_protein: args.d_protein,
        drug_tokens: args.drug_tokens,
        protein_tokens: args.protein_tokens,
        strength: args.strength,
        seed: args.seed,
    };
    let (drugs, proteins, pairs) = planted_dataset(&spec);

    let drug_dir = out_dir.join("drugs");
    let protein_dir = out_dir.join("proteins");
    std::fs::create_dir_all(&drug_dir)?;
    std::fs::create_dir_all(&protein_dir)?;
    for id in drugs.ids() {
        write_embeddings(&drug_dir.join(format!("{id}.sbem")), drugs.embedding(id)?)?;
    }
    for id in proteins.ids() {
        write_embeddings(&protein_dir.join(format!("{id}.sbem")), proteins.embedding(id)?)?;
    }
    let mut table = String::from("drug_id\tprotein_id\tlabel\n");
    for p in &pairs {
        table.push_str(&format!("{}\t{}\t{}\n", p.drug_id, p.protein_id, p.label));
    }
    std::fs::write(out_dir.join("pairs.tsv"), table)?;

    let mut m = RunManifest::new("embed");
    m.push("arg.planted", "true");
    m.push("arg.n_pairs", spec.n_pairs.to_string());
    m.push("arg.d_drug", spec.d_drug.to_string());
    m.push("arg.d_protein", spec.d_protein.to_string());
    m.push("arg.drug_tokens", spec.drug_tokens.to_string());
    m.push("arg.protein_tokens", spec.protein_tokens.to_string());
    m.push("arg.strength", spec.strength.to_string());
    m.push("arg.seed", spec.seed.to_string());
    m.push("output.dir", out_dir.display().to_string());
    m.write(&out_dir.join("manifest.txt"))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// shared train/evaluate plumbing
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct DataArgs {
    /// Pairs TSV with header drug_id, protein_id, label[, ic50_nm]
    #[arg(long)]
    pairs: PathBuf,
    /// Derive labels from ic50_nm (positive < 100 nM, negative > 10000 nM,
    /// margin dropped; single-class drugs removed)
    #[arg(long)]
    low_bias_filter: bool,
    /// Directory of drug .sbem files
    #[arg(long, required_unless_present = "synthetic")]
    drug_dir: Option<PathBuf>,
    /// Directory of protein .sbem files
    #[arg(long, required_unless_present = "synthetic")]
    protein_dir: Option<PathBuf>,
    /// Fabricate deterministic synthetic embeddings from the entity ids
    #[arg(long)]
    synthetic: bool,
    /// Seed for --synthetic embeddings
    #[arg(long, default_value_t = 0)]
    embed_seed: u64,
}

impl DataArgs {
    fn load(
        &self,
        d_drug: usize,
        d_protein: usize,
    ) -> Result<(EmbeddingStore, EmbeddingStore, Vec<PairRecord>)> {
        let pairs = load_pairs(&self.pairs, self.low_bias_filter)?;
        if pairs.is_empty() {
            bail!("{}: no pairs after loading/filtering", self.pairs.display());
        }
        let (drugs, proteins) = if self.synthetic {
            let drug_ids: Vec<String> = unique(pairs.iter().map(|p| p.drug_id.clone()));
            let prot_ids: Vec<String> = unique(pairs.iter().map(|p| p.protein_id.clone()));
            (
                EmbeddingStore::synthetic(
                    drug_ids,
                    selfies::DRUG_VOCAB_SIZE,
                    d_drug,
                    self.embed_seed,
                ),
                EmbeddingStore::synthetic(
                    prot_ids,
                    protein::VOCAB_SIZE,
                    d_protein,
                    self.embed_seed,
                ),
            )
        } else {
            (
                EmbeddingStore::load_dir(self.drug_dir.as_ref().unwrap(), d_drug)?,
                EmbeddingStore::load_dir(self.protein_dir.as_ref().unwrap(), d_protein)?,
            )
        };
        Ok((drugs, proteins, pairs))
    }

    fn describe(&self, m: &mut RunManifest) -> Result<()> {
        m.push_input("pairs", &self.pairs)?;
        m.push("arg.low_bias_filter", self.low_bias_filter.to_string());
        if self.synthetic {
            m.push("arg.synthetic", "true");
            m.push("arg.embed_seed", self.embed_seed.to_string());
        } else {
            m.push_input_dir("drugs", self.drug_dir.as_ref().unwrap())?;
            m.push_input_dir("proteins", self.protein_dir.as_ref().unwrap())?;
        }
        Ok(())
    }
}

fn unique(items: impl Iterator<Item = String>) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for item in items {
        if seen.insert(item.clone()) {
            out.push(item);
        }
    }
    out
}

/// Every TrainConfig key as an optional override flag; `--config FILE` is
/// applied first, then the flags.
#[derive(Args, Default)]
pub struct ConfigArgs {
    /// Key=value config file ('#' for comments)
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Validation/evaluation score: "ban" or "cosine"
    #[arg(long)]
    score_mode: Option<String>,
    #[arg(long)]
    d_drug: Option<usize>,
    #[arg(long)]
    d_protein: Option<usize>,
    #[arg(long)]
    proj_dim: Option<usize>,
    #[arg(long)]
    ffn_mult: Option<usize>,
    #[arg(long)]
    glimpses: Option<usize>,
    #[arg(long)]
    ban_rank: Option<usize>,
    #[arg(long)]
    mlp_hidden: Option<usize>,
    /// Attention normalization: "rows" or "flat"
    #[arg(long)]
    softmax_axis: Option<String>,
    #[arg(long)]
    use_la: Option<bool>,
    #[arg(long)]
    use_ban: Option<bool>,
    #[arg(long)]
    use_cl: Option<bool>,
    #[arg(long)]
    temperature_init: Option<f64>,
    #[arg(long)]
    lambda_con: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
}

impl ConfigArgs {
    fn build(&self) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            let text = normalize_config_text(&text);
            cfg.apply_text(&text).map_err(|e| anyhow!("{}: {e}", path.display()))?;
        }
        let mut set = |key: &str, value: Option<String>| -> Result<()> {
            if let Some(v) = value {
                cfg.apply_pair(key, &v).map_err(|e| anyhow!(e))?;
            }
            Ok(())
        };
        set("lr", self.lr.map(|v| v.to_string()))?;
        set("weight_decay", self.weight_decay.map(|v| v.to_string()))?;
        set("batch_size", self.batch_size.map(|v| v.to_string()))?;
        set("max_epochs", self.max_epochs.map(|v| v.to_string()))?;
        set("patience", self.patience.map(|v| v.to_string()))?;
        set("seed", self.seed.map(|v| v.to_string()))?;
        set("score_mode", self.score_mode.clone())?;
        set("d_drug", self.d_drug.map(|v| v.to_string()))?;
        set("d_protein", self.d_protein.map(|v| v.to_string()))?;
        set("proj_dim", self.proj_dim.map(|v| v.to_string()))?;
        set("ffn_mult", self.ffn_mult.map(|v| v.to_string()))?;
        set("glimpses", self.glimpses.map(|v| v.to_string()))?;
        set("ban_rank", self.ban_rank.map(|v| v.to_string()))?;
        set("mlp_hidden", self.mlp_hidden.map(|v| v.to_string()))?;
        set("softmax_axis", self.softmax_axis.clone())?;
        set("use_la", self.use_la.map(|v| v.to_string()))?;
        set("use_ban", self.use_ban.map(|v| v.to_string()))?;
        set("use_cl", self.use_cl.map(|v| v.to_string()))?;
        set("temperature_init", self.temperature_init.map(|v| v.to_string()))?;
        set("lambda_con", self.lambda_con.map(|v| v.to_string()))?;
        set("dropout", self.dropout.map(|v| v.to_string()))?;
        Ok(cfg)
    }
}

/// Accept run manifests as config files: a file carrying a `tool=saban`
/// line is a manifest, and only its `config.<key>` entries apply (prefix
/// stripped). Plain key=value config files pass through unchanged.
fn normalize_config_text(text: &str) -> String {
    let is_manifest = text.lines().any(|l| l.trim() == "tool=saban");
    if !is_manifest {
        return text.to_string();
    }
    text.lines()
        .filter_map(|line| line.trim().strip_prefix("config."))
        .map(|entry| format!("{entry}\n"))
        .collect()
}

fn history_tsv(outcome: &TrainOutcome) -> String {
    let mut out = String::from("epoch\ttrain_loss\tbce\tcontrastive\tval_auroc\n");
    for e in &outcome.history {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            e.epoch, e.train_loss, e.bce, e.contrastive, e.val_auroc
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Fold of the split plan to train on
    #[arg(long, default_value_t = 0)]
    fold: usize,
    /// Number of cross-validation folds
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Output directory (checkpoint/, history.tsv, manifest.txt)
    #[arg(long)]
    out: PathBuf,
}

fn run_train(args: TrainArgs) -> Result<()> {
    let cfg = args.config.build()?;
    let (drugs, proteins, pairs) = args.data.load(cfg.model.d_drug, cfg.model.d_protein)?;
    let data = ResolvedDataset::resolve(&pairs, &drugs, &proteins)?;
    let plan = make_splits(pairs.len(), args.folds, (7, 1, 2), cfg.seed)?;
    let fold = plan
        .folds
        .get(args.fold)
        .ok_or_else(|| anyhow!("fold {} out of range (k={})", args.fold, args.folds))?;

    let outcome = train(&data, fold, &cfg)?;
    std::fs::create_dir_all(&args.out)?;
    save_checkpoint(&outcome.params, &args.out.join("checkpoint"))?;
    std::fs::write(args.out.join("history.tsv"), history_tsv(&outcome))?;

    let mut m = RunManifest::new("train");
    args.data.describe(&mut m)?;
    m.push_config(&cfg);
    m.push("arg.fold", args.fold.to_string());
    m.push("arg.folds", args.folds.to_string());
    m.push("result.best_epoch", outcome.best_epoch.to_string());
    m.push("result.best_val_auroc", outcome.best_val_auroc.to_string());
    m.push("result.stopped_epoch", outcome.stopped_epoch.to_string());
    m.push("output.checkpoint", args.out.join("checkpoint").display().to_string());
    m.push("output.history", args.out.join("history.tsv").display().to_string());
    m.push_defaults();
    m.write(&args.out.join("manifest.txt"))?;

    println!(
        "trained fold {}: best epoch {} (val AUROC {:.4}), stopped at epoch {}",
        args.fold, outcome.best_epoch, outcome.best_val_auroc, outcome.stopped_epoch
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct EvaluateArgs {
    /// Checkpoint directory written by `train`
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Seed of the split plan to evaluate against
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    /// "ban" or "cosine"
    #[arg(long, default_value = "ban")]
    score_mode: String,
    #[arg(long, default_value_t = DEFAULT_BEDROC_ALPHA)]
    bedroc_alpha: f64,
    /// Output report TSV
    #[arg(long)]
    out: PathBuf,
}

fn run_evaluate(args: EvaluateArgs) -> Result<()> {
    let params = load_checkpoint(&args.checkpoint)?;
    let mode = ScoreMode::parse(&args.score_mode)
        .ok_or_else(|| anyhow!("bad --score-mode {:?}", args.score_mode))?;
    let (drugs, proteins, pairs) =
        args.data.load(params.config.d_drug, params.config.d_protein)?;
    let data = ResolvedDataset::resolve(&pairs, &drugs, &proteins)?;
    let plan = make_splits(pairs.len(), args.folds, (7, 1, 2), args.split_seed)?;

    let mut rows = Vec::new();
    for (fold_idx, fold) in plan.folds.iter().enumerate() {
        let report = evaluate_subset(&params, &data, &fold.test, mode, args.bedroc_alpha)?;
        rows.push((fold_idx, report));
    }

    let mut table = format!("fold\tn\t{}\n", MetricReport::tsv_header());
    for (fold_idx, report) in &rows {
        table.push_str(&format!(
            "{fold_idx}\t{}\t{}\n",
            plan.folds[*fold_idx].test.len(),
            report.tsv_row()
        ));
    }
    // One aggregate row: each metric as mean±std (population std over folds).
    let k = rows.len() as f64;
    let columns = rows[0].1.values().len();
    let mut aggregate = Vec::with_capacity(columns);
    for c in 0..columns {
        let values: Vec<f64> = rows.iter().map(|(_, r)| r.values()[c]).collect();
        let mean = values.iter().sum::<f64>() / k;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / k;
        aggregate.push(format!("{}±{}", mean, var.sqrt()));
    }
    let total: usize = plan.folds.iter().map(|f| f.test.len()).sum();
    table.push_str(&format!("mean±std\t{total}\t{}\n", aggregate.join("\t")));
    std::fs::write(&args.out, &table)?;

    let mut m = RunManifest::new("evaluate");
    args.data.describe(&mut m)?;
    m.push("arg.checkpoint", args.checkpoint.display().to_string());
    m.push("arg.folds", args.folds.to_string());
    m.push("arg.split_seed", args.split_seed.to_string());
    m.push("arg.score_mode", mode.as_str());
    m.push("arg.bedroc_alpha", args.bedroc_alpha.to_string());
    m.push("output.report", args.out.display().to_string());
    m.push_defaults();
    m.write(&manifest_path_for(&args.out))?;

    println!("evaluated {} folds -> {}", rows.len(), args.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// screen
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct ScreenArgs {
    /// Checkpoint directory written by `train`
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory of ligand .sbem files
    #[arg(long)]
    library: PathBuf,
    /// Target protein .sbem file
    #[arg(long)]
    target: PathBuf,
    /// Ranking score: "cosine" or "ban"
    #[arg(long, default_value = "cosine")]
    score_mode: String,
    /// Optional TSV (ligand_id, label) to append labels and emit metrics
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Output ranked TSV
    #[arg(long)]
    out: PathBuf,
}

fn run_screen(args: ScreenArgs) -> Result<()> {
    let params = load_checkpoint(&args.checkpoint)?;
    let mode = ScoreMode::parse(&args.score_mode)
        .ok_or_else(|| anyhow!("bad --score-mode {:?}", args.score_mode))?;
    let library = EmbeddingStore::load_dir(&args.library, params.config.d_drug)?;
    if library.is_empty() {
        bail!("{}: no .sbem files found", args.library.display());
    }
    let target = read_embeddings(&args.target)?;
    if target.dim() != params.config.d_protein {
        bail!(
            "{}: target dimension {} does not match checkpoint d_protein {}",
            args.target.display(),
            target.dim(),
            params.config.d_protein
        );
    }

    let labels: Option<HashMap<String, u8>> = match &args.labels {
        Some(path) => Some(read_label_file(path)?),
        None => None,
    };

    let ids = library.ids();
    let scores = score_library(&params, &library, &ids, &target, mode)?;
    let mut ranked: Vec<(String, f64)> =
        ids.iter().map(|id| id.to_string()).zip(scores).collect();
    // Descending score; ties broken by ligand id.
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let mut table = String::from(if labels.is_some() {
        "ligand_id\tscore\tlabel\n"
    } else {
        "ligand_id\tscore\n"
    });
    let mut scored_items = Vec::new();
    for (id, score) in &ranked {
        match &labels {
            Some(map) => {
                let label = *map
                    .get(id)
                    .ok_or_else(|| anyhow!("labels file is missing ligand {id:?}"))?;
                table.push_str(&format!("{id}\t{score}\t{label}\n"));
                scored_items.push((*score, label));
            }
            None => table.push_str(&format!("{id}\t{score}\n")),
        }
    }
    std::fs::write(&args.out, &table)?;

    let mut metrics_path = None;
    if !scored_items.is_empty() {
        let report = MetricReport::compute(&ScoredSet::new(scored_items)?, DEFAULT_BEDROC_ALPHA)?;
        let path = args.out.with_extension("metrics.tsv");
        std::fs::write(&path, format!("{}\n{}\n", MetricReport::tsv_header(), report.tsv_row()))?;
        metrics_path = Some(path);
    }

    let mut m = RunManifest::new("screen");
    m.push("arg.checkpoint", args.checkpoint.display().to_string());
    m.push_input_dir("library", &args.library)?;
    m.push_input("target", &args.target)?;
    if let Some(path) = &args.labels {
        m.push_input("labels", path)?;
    }
    m.push("arg.score_mode", mode.as_str());
    m.push("output.ranked", args.out.display().to_string());
    if let Some(path) = &metrics_path {
        m.push("output.metrics", path.display().to_string());
    }
    m.push_defaults();
    m.write(&manifest_path_for(&args.out))?;

    println!("screened {} ligands -> {}", ranked.len(), args.out.display());
    Ok(())
}

fn score_library(
    params: &ModelParams,
    library: &EmbeddingStore,
    ids: &[&str],
    target: &saban_core::embed::TokenEmbeddings,
    mode: ScoreMode,
) -> Result<Vec<f64>> {
    use rayon::prelude::*;
    ids.par_iter()
        .map(|id| {
            let drug = library.embedding(id)?;
            Ok(params.score(&drug.matrix, &target.matrix, mode)?)
        })
        .collect()
}

fn read_label_file(path: &Path) -> Result<HashMap<String, u8>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| anyhow!("{}: empty labels file", path.display()))?;
    let cols: Vec<&str> = header.split('\t').collect();
    let id_col = cols
        .iter()
        .position(|&c| c == "ligand_id")
        .ok_or_else(|| anyhow!("{}: missing ligand_id column", path.display()))?;
    let label_col = cols
        .iter()
        .position(|&c| c == "label")
        .ok_or_else(|| anyhow!("{}: missing label column", path.display()))?;
    let mut map = HashMap::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() <= id_col.max(label_col) {
            bail!("{}:{}: expected {} fields, found {}", path.display(), i + 2, cols.len(), fields.len());
        }
        let label = match fields[label_col] {
            "0" => 0,
            "1" => 1,
            other => bail!("{}:{}: bad label {:?}", path.display(), i + 2, other),
        };
        map.insert(fields[id_col].to_string(), label);
    }
    Ok(map)
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct AblateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value_t = 0)]
    fold: usize,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = DEFAULT_BEDROC_ALPHA)]
    bedroc_alpha: f64,
    /// Also save each variant's checkpoint directory
    #[arg(long)]
    save_checkpoints: bool,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

fn run_ablate(args: AblateArgs) -> Result<()> {
    let cfg = args.config.build()?;
    let (drugs, proteins, pairs) = args.data.load(cfg.model.d_drug, cfg.model.d_protein)?;
    let data = ResolvedDataset::resolve(&pairs, &drugs, &proteins)?;
    let plan = make_splits(pairs.len(), args.folds, (7, 1, 2), cfg.seed)?;
    let fold = plan
        .folds
        .get(args.fold)
        .ok_or_else(|| anyhow!("fold {} out of range (k={})", args.fold, args.folds))?;

    let runs = run_ablation(&data, fold, &cfg, args.bedroc_alpha)?;
    std::fs::create_dir_all(&args.out)?;

    let mut table = format!(
        "variant\tuse_la\tuse_ban\tuse_cl\tbest_epoch\tstopped_epoch\tbest_val_auroc\t{}\n",
        MetricReport::tsv_header()
    );
    for run in &runs {
        table.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            run.variant.name,
            run.variant.use_la,
            run.variant.use_ban,
            run.variant.use_cl,
            run.outcome.best_epoch,
            run.outcome.stopped_epoch,
            run.outcome.best_val_auroc,
            run.test_report.tsv_row()
        ));

        let variant_dir = args.out.join(run.variant.name);
        std::fs::create_dir_all(&variant_dir)?;
        std::fs::write(variant_dir.join("history.tsv"), history_tsv(&run.outcome))?;
        if args.save_checkpoints {
            save_checkpoint(&run.outcome.params, &variant_dir.join("checkpoint"))?;
        }

        let mut vm = RunManifest::new("ablate-variant");
        vm.push("arg.variant", run.variant.name);
        args.data.describe(&mut vm)?;
        vm.push_config(&run.config);
        vm.push("arg.fold", args.fold.to_string());
        vm.push("arg.folds", args.folds.to_string());
        vm.push("result.best_epoch", run.outcome.best_epoch.to_string());
        vm.push("result.stopped_epoch", run.outcome.stopped_epoch.to_string());
        vm.push(
            "result.zero_contrastive",
            run.outcome.history.iter().all(|e| e.contrastive == 0.0).to_string(),
        );
        vm.push_defaults();
        vm.write(&variant_dir.join("manifest.txt"))?;
    }
    std::fs::write(args.out.join("comparison.tsv"), &table)?;

    let mut m = RunManifest::new("ablate");
    args.data.describe(&mut m)?;
    m.push_config(&cfg);
    m.push("arg.fold", args.fold.to_string());
    m.push("arg.folds", args.folds.to_string());
    m.push("arg.bedroc_alpha", args.bedroc_alpha.to_string());
    m.push("output.comparison", args.out.join("comparison.tsv").display().to_string());
    m.push_defaults();
    m.write(&args.out.join("manifest.txt"))?;

    println!("ablation complete -> {}", args.out.join("comparison.tsv").display());
    Ok(())
}

// ---------------------------------------------------------------------------
// export-attention
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct ExportAttentionArgs {
    /// Checkpoint directory written by `train`
    #[arg(long)]
    checkpoint: PathBuf,
    /// Drug token-embedding .sbem file
    #[arg(long)]
    drug: PathBuf,
    /// Protein token-embedding .sbem file
    #[arg(long)]
    protein: PathBuf,
    /// SELFIES string supplying drug token labels
    #[arg(long)]
    drug_selfies: Option<String>,
    /// Annotated sequence supplying protein token labels
    #[arg(long)]
    protein_seq: Option<String>,
    /// Output path prefix
    #[arg(long)]
    out_prefix: PathBuf,
}

fn run_export_attention(args: ExportAttentionArgs) -> Result<()> {
    let params = load_checkpoint(&args.checkpoint)?;
    let drug = read_embeddings(&args.drug)?;
    let protein = read_embeddings(&args.protein)?;
    if drug.dim() != params.config.d_drug {
        bail!("drug dimension {} does not match checkpoint d_drug {}", drug.dim(), params.config.d_drug);
    }
    if protein.dim() != params.config.d_protein {
        bail!(
            "protein dimension {} does not match checkpoint d_protein {}",
            protein.dim(),
            params.config.d_protein
        );
    }

    let drug_labels = match &args.drug_selfies {
        Some(s) => selfies::tokenize(s)?.iter().map(|t| t.text()).collect(),
        None => fallback_labels(drug.token_count()),
    };
    let protein_labels = match &args.protein_seq {
        Some(p) => {
            let seq = protein::encode_sequence(p)?;
            seq.tokens()
                .iter()
                .map(|t| {
                    let (r, g) = protein::decode_pair(*t);
                    format!("{r}{g}")
                })
                .collect()
        }
        None => fallback_labels(protein.token_count()),
    };

    let (drug_pool, prot_pool, ban) = params.pair_attention(&drug.matrix, &protein.matrix);
    let prefix = args.out_prefix.display();

    let mut written = vec![];
    for (side, output, labels) in [
        ("drug", &drug_pool, &drug_labels),
        ("protein", &prot_pool, &protein_labels),
    ] {
        let rows = export_attention(&output.alpha, labels)?;
        let mut table = String::from("position\ttoken_label\tweight\n");
        for (pos, label, weight) in rows {
            table.push_str(&format!("{pos}\t{label}\t{weight}\n"));
        }
        let path = PathBuf::from(format!("{prefix}.{side}_attention.tsv"));
        std::fs::write(&path, table)?;
        written.push(path);
    }

    if let Some(ban) = &ban {
        for (g, map) in ban.attention.iter().enumerate() {
            let mut table = String::from("drug_token\tprotein_token\tweight\n");
            for i in 0..map.rows() {
                for j in 0..map.cols() {
                    table.push_str(&format!("{i}\t{j}\t{}\n", map.at(i, j)));
                }
            }
            let path = PathBuf::from(format!("{prefix}.ban_glimpse{g}.tsv"));
            std::fs::write(&path, table)?;
            written.push(path);
        }
    }

    let mut m = RunManifest::new("export-attention");
    m.push("arg.checkpoint", args.checkpoint.display().to_string());
    m.push_input("drug", &args.drug)?;
    m.push_input("protein", &args.protein)?;
    for path in &written {
        m.push("output.file", path.display().to_string());
    }
    m.write(&PathBuf::from(format!("{prefix}.manifest.txt")))?;

    println!("exported {} attention tables with prefix {prefix}", written.len());
    Ok(())
}

fn fallback_labels(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("t{i}")).collect()
}
