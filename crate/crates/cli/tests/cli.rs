//! End-to-end tests of the `saban` binary: golden outputs, exit codes,
//! manifest determinism, and the evaluate/screen/export contracts.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use saban_core::model::{save_checkpoint, InteractionHead, ModelConfig, ModelParams};

fn saban() -> Command {
    Command::new(env!("CARGO_BIN_EXE_saban"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn saban");
    assert!(
        out.status.success(),
        "command failed ({:?}):\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

/// Tiny checkpoint whose interaction head always outputs probability 0.5.
fn write_constant_checkpoint(dir: &Path, d_drug: usize, d_protein: usize) {
    let config = ModelConfig {
        d_drug,
        d_protein,
        proj_dim: 8,
        ffn_mult: 2,
        glimpses: 1,
        ban_rank: 4,
        mlp_hidden: 8,
        ..Default::default()
    };
    let mut params = ModelParams::init(&config, 42);
    if let InteractionHead::Ban(ban) = &mut params.head {
        ban.head.lin2.weight.value = saban_core::mat::Mat::zeros(8, 1);
        ban.head.lin2.bias.value = saban_core::mat::Mat::zeros(1, 1);
    }
    save_checkpoint(&params, dir).unwrap();
}

fn make_planted(dir: &Path, n_pairs: usize) {
    run_ok(saban().args([
        "embed",
        "--planted",
        "--n-pairs",
        &n_pairs.to_string(),
        "--d-drug",
        "16",
        "--d-protein",
        "16",
        "--seed",
        "9",
        "--out-dir",
        dir.to_str().unwrap(),
    ]));
}

#[test]
fn tokenize_golden_output() {
    let out = run_ok(saban().args(["tokenize", "--selfies", "[C][=C][Branch1]"]));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text, "position\ttoken\tid\n0\t[C]\t0\n1\t[=C]\t1\n2\t[Branch1]\t30\n");
}

#[test]
fn tokenize_protein_sequence() {
    let out = run_ok(saban().args(["tokenize", "--protein", "AaCc"]));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("position\ttoken\tid\n0\tAa\t0\n"));
}

#[test]
fn decode_emits_atom_bond_listing() {
    let out = run_ok(saban().args(["decode", "--selfies", "[C][C]"]));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("atom\t0\tC\t4"));
    assert!(text.contains("bond\t0\t-\t-\t0\t1\t1"));
}

#[test]
fn bad_selfies_is_a_user_error() {
    let out = saban().args(["decode", "--selfies", "[C][C"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("unbalanced bracket"), "stderr: {err}");
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = saban().args(["decode", "--no-such-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_exits_zero() {
    let out = saban().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn embed_accepts_explicit_synthetic_flag() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("m.sbem");
    run_ok(saban().args([
        "embed",
        "--synthetic",
        "--seed",
        "5",
        "--selfies",
        "[C][N]",
        "--dim",
        "8",
        "--out",
        out_path.to_str().unwrap(),
    ]));
    assert!(out_path.exists());
}

#[test]
fn train_manifest_can_be_reused_as_config() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    make_planted(&data, 60);

    let common = |out: &Path, extra: &[&str]| {
        let mut args: Vec<String> = vec![
            "train".into(),
            "--pairs".into(),
            data.join("pairs.tsv").display().to_string(),
            "--drug-dir".into(),
            data.join("drugs").display().to_string(),
            "--protein-dir".into(),
            data.join("proteins").display().to_string(),
            "--out".into(),
            out.display().to_string(),
        ];
        args.extend(extra.iter().map(|s| s.to_string()));
        args
    };
    let run_a = dir.path().join("a");
    run_ok(saban().args(common(
        &run_a,
        &[
            "--d-drug", "16", "--d-protein", "16", "--proj-dim", "8", "--glimpses", "1",
            "--ban-rank", "4", "--mlp-hidden", "8", "--ffn-mult", "2", "--max-epochs", "3",
            "--patience", "2", "--batch-size", "16", "--seed", "21",
        ],
    )));
    // Re-run taking every setting from the first run's manifest.
    let run_b = dir.path().join("b");
    let manifest = run_a.join("manifest.txt");
    run_ok(saban().args(common(&run_b, &["--config", manifest.to_str().unwrap()])));
    assert_eq!(read(&run_a.join("history.tsv")), read(&run_b.join("history.tsv")));
}

#[test]
fn saban_threads_caps_parallelism_and_rejects_garbage() {
    let out = saban()
        .env("SABAN_THREADS", "1")
        .args(["tokenize", "--selfies", "[C]"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let out = saban()
        .env("SABAN_THREADS", "zero")
        .args(["tokenize", "--selfies", "[C]"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("SABAN_THREADS"));
}

#[test]
fn embed_single_entity_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("mol.sbem");
    run_ok(saban().args([
        "embed",
        "--selfies",
        "[C][O][C]",
        "--dim",
        "12",
        "--seed",
        "3",
        "--out",
        out_path.to_str().unwrap(),
    ]));
    let emb = saban_core::embed::read_embeddings(&out_path).unwrap();
    assert_eq!(emb.entity_id, "mol");
    assert_eq!(emb.matrix.rows(), 3);
    assert_eq!(emb.matrix.cols(), 12);
    // Manifest written alongside.
    assert!(dir.path().join("mol.sbem.manifest.txt").exists());
}

#[test]
fn train_is_deterministic_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    make_planted(&data, 60);

    let train_args = |out: &PathBuf| {
        vec![
            "train".to_string(),
            "--pairs".into(),
            data.join("pairs.tsv").display().to_string(),
            "--drug-dir".into(),
            data.join("drugs").display().to_string(),
            "--protein-dir".into(),
            data.join("proteins").display().to_string(),
            "--out".into(),
            out.display().to_string(),
            "--d-drug".into(),
            "16".into(),
            "--d-protein".into(),
            "16".into(),
            "--proj-dim".into(),
            "8".into(),
            "--glimpses".into(),
            "1".into(),
            "--ban-rank".into(),
            "4".into(),
            "--mlp-hidden".into(),
            "8".into(),
            "--ffn-mult".into(),
            "2".into(),
            "--max-epochs".into(),
            "4".into(),
            "--patience".into(),
            "2".into(),
            "--batch-size".into(),
            "16".into(),
            "--seed".into(),
            "11".into(),
        ]
    };
    let run_a = dir.path().join("run_a");
    let run_b = dir.path().join("run_b");
    run_ok(saban().args(train_args(&run_a)));
    run_ok(saban().args(train_args(&run_b)));

    assert_eq!(read(&run_a.join("history.tsv")), read(&run_b.join("history.tsv")));
    // Manifests differ only in output paths; configs and input hashes match.
    let strip = |text: String| -> String {
        text.lines().filter(|l| !l.starts_with("output.")).collect::<Vec<_>>().join("\n")
    };
    assert_eq!(strip(read(&run_a.join("manifest.txt"))), strip(read(&run_b.join("manifest.txt"))));
    // Checkpoint tensors are byte-identical.
    let manifest = read(&run_a.join("checkpoint/manifest.tsv"));
    for line in manifest.lines().skip(2) {
        let file = line.split('\t').nth(3).unwrap();
        assert_eq!(
            std::fs::read(run_a.join("checkpoint").join(file)).unwrap(),
            std::fs::read(run_b.join("checkpoint").join(file)).unwrap(),
            "checkpoint tensor {file} differs between identical runs"
        );
    }
}

#[test]
fn evaluate_report_shape_and_exact_mean() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    make_planted(&data, 60);
    let ckpt = dir.path().join("ckpt");
    write_constant_checkpoint(&ckpt, 16, 16);

    let report_path = dir.path().join("report.tsv");
    run_ok(saban().args([
        "evaluate",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--pairs",
        data.join("pairs.tsv").to_str().unwrap(),
        "--drug-dir",
        data.join("drugs").to_str().unwrap(),
        "--protein-dir",
        data.join("proteins").to_str().unwrap(),
        "--split-seed",
        "2",
        "--out",
        report_path.to_str().unwrap(),
    ]));
    let report = read(&report_path);
    let lines: Vec<&str> = report.lines().collect();
    // Header + one row per fold + one aggregate row.
    assert_eq!(lines.len(), 1 + 5 + 1, "report:\n{report}");
    let header: Vec<&str> = lines[0].split('\t').collect();
    let auroc_col = header.iter().position(|&c| c == "auroc").unwrap();

    let fold_aurocs: Vec<f64> = lines[1..6]
        .iter()
        .map(|l| l.split('\t').nth(auroc_col).unwrap().parse().unwrap())
        .collect();
    let aggregate: Vec<&str> = lines[6].split('\t').collect();
    assert_eq!(aggregate[0], "mean±std");
    let (mean_text, std_text) = aggregate[auroc_col].split_once('±').unwrap();
    let mean: f64 = mean_text.parse().unwrap();
    let std: f64 = std_text.parse().unwrap();
    let expected = fold_aurocs.iter().sum::<f64>() / fold_aurocs.len() as f64;
    assert_eq!(mean.to_bits(), expected.to_bits(), "aggregate mean is not the exact average");
    // The constant-probability checkpoint ties every pair: AUROC is exactly
    // 0.5 in every fold, so the reported std is exactly zero.
    assert!(fold_aurocs.iter().all(|&a| a == 0.5), "{fold_aurocs:?}");
    assert_eq!(std, 0.0);
}

#[test]
fn screen_orders_ties_by_id_and_bounds_cosine() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    make_planted(&data, 60);
    let ckpt = dir.path().join("ckpt");
    write_constant_checkpoint(&ckpt, 16, 16);

    // Constant head: every ligand scores 0.5 in ban mode, so the order is
    // purely the id tie-break.
    let ranked_path = dir.path().join("ranked.tsv");
    run_ok(saban().args([
        "screen",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--library",
        data.join("drugs").to_str().unwrap(),
        "--target",
        data.join("proteins").join("p00000.sbem").to_str().unwrap(),
        "--score-mode",
        "ban",
        "--out",
        ranked_path.to_str().unwrap(),
    ]));
    let ranked = read(&ranked_path);
    let ids: Vec<&str> = ranked.lines().skip(1).map(|l| l.split('\t').next().unwrap()).collect();
    let mut sorted = ids.clone();
    sorted.sort_unstable();
    assert_eq!(ids, sorted, "tied scores must rank by ligand id");
    assert_eq!(ids.len(), 60);

    // Cosine mode stays within [-1, 1].
    let cos_path = dir.path().join("ranked_cos.tsv");
    run_ok(saban().args([
        "screen",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--library",
        data.join("drugs").to_str().unwrap(),
        "--target",
        data.join("proteins").join("p00000.sbem").to_str().unwrap(),
        "--out",
        cos_path.to_str().unwrap(),
    ]));
    for line in read(&cos_path).lines().skip(1) {
        let score: f64 = line.split('\t').nth(1).unwrap().parse().unwrap();
        assert!((-1.0..=1.0).contains(&score), "cosine score {score} out of range");
    }

    // A single-ligand library produces a single-row ranking.
    let single = dir.path().join("single");
    std::fs::create_dir_all(&single).unwrap();
    std::fs::copy(
        data.join("drugs").join("d00000.sbem"),
        single.join("d00000.sbem"),
    )
    .unwrap();
    let single_path = dir.path().join("single.tsv");
    run_ok(saban().args([
        "screen",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--library",
        single.to_str().unwrap(),
        "--target",
        data.join("proteins").join("p00000.sbem").to_str().unwrap(),
        "--out",
        single_path.to_str().unwrap(),
    ]));
    assert_eq!(read(&single_path).lines().count(), 2);
}

#[test]
fn screen_with_labels_emits_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    make_planted(&data, 60);
    let ckpt = dir.path().join("ckpt");
    write_constant_checkpoint(&ckpt, 16, 16);

    // Label every drug by its pair label against its own protein.
    let pairs = read(&data.join("pairs.tsv"));
    let mut labels = String::from("ligand_id\tlabel\n");
    for line in pairs.lines().skip(1) {
        let mut fields = line.split('\t');
        let drug = fields.next().unwrap();
        let _protein = fields.next().unwrap();
        let label = fields.next().unwrap();
        labels.push_str(&format!("{drug}\t{label}\n"));
    }
    let labels_path = dir.path().join("labels.tsv");
    std::fs::write(&labels_path, labels).unwrap();

    let ranked_path = dir.path().join("ranked.tsv");
    run_ok(saban().args([
        "screen",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--library",
        data.join("drugs").to_str().unwrap(),
        "--target",
        data.join("proteins").join("p00000.sbem").to_str().unwrap(),
        "--labels",
        labels_path.to_str().unwrap(),
        "--out",
        ranked_path.to_str().unwrap(),
    ]));
    assert!(read(&ranked_path).lines().next().unwrap().ends_with("label"));
    let metrics = read(&dir.path().join("ranked.metrics.tsv"));
    assert!(metrics.starts_with("auroc\tauprc\taccuracy\tbedroc"));
    assert_eq!(metrics.lines().count(), 2);
}

#[test]
fn export_attention_single_token_pair() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("ckpt");
    write_constant_checkpoint(&ckpt, 16, 16);

    // Single-token drug and protein embeddings.
    let drug = dir.path().join("d.sbem");
    let protein = dir.path().join("p.sbem");
    run_ok(saban().args([
        "embed", "--selfies", "[C]", "--dim", "16", "--out", drug.to_str().unwrap(),
    ]));
    run_ok(saban().args([
        "embed", "--protein", "Aa", "--dim", "16", "--out", protein.to_str().unwrap(),
    ]));

    let prefix = dir.path().join("attn");
    run_ok(saban().args([
        "export-attention",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--drug",
        drug.to_str().unwrap(),
        "--protein",
        protein.to_str().unwrap(),
        "--drug-selfies",
        "[C]",
        "--protein-seq",
        "Aa",
        "--out-prefix",
        prefix.to_str().unwrap(),
    ]));

    let drug_attn = read(&dir.path().join("attn.drug_attention.tsv"));
    assert_eq!(drug_attn, "position\ttoken_label\tweight\n0\t[C]\t1\n");
    let ban_map = read(&dir.path().join("attn.ban_glimpse0.tsv"));
    assert_eq!(ban_map, "drug_token\tprotein_token\tweight\n0\t0\t1\n");
}

#[test]
fn export_attention_weights_sum_to_one() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("ckpt");
    write_constant_checkpoint(&ckpt, 16, 16);
    let drug = dir.path().join("d.sbem");
    let protein = dir.path().join("p.sbem");
    run_ok(saban().args([
        "embed", "--selfies", "[C][O][N][C][=C]", "--dim", "16", "--out", drug.to_str().unwrap(),
    ]));
    run_ok(saban().args([
        "embed", "--protein", "AaCcDdEe", "--dim", "16", "--out", protein.to_str().unwrap(),
    ]));
    let prefix = dir.path().join("attn");
    run_ok(saban().args([
        "export-attention",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--drug",
        drug.to_str().unwrap(),
        "--protein",
        protein.to_str().unwrap(),
        "--out-prefix",
        prefix.to_str().unwrap(),
    ]));
    for side in ["drug", "protein"] {
        let text = read(&dir.path().join(format!("attn.{side}_attention.tsv")));
        let sum: f64 =
            text.lines().skip(1).map(|l| l.split('\t').nth(2).unwrap().parse::<f64>().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-12, "{side} weights sum to {sum}");
    }
    // Re-running reproduces identical files.
    let before = read(&dir.path().join("attn.drug_attention.tsv"));
    run_ok(saban().args([
        "export-attention",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--drug",
        drug.to_str().unwrap(),
        "--protein",
        protein.to_str().unwrap(),
        "--out-prefix",
        prefix.to_str().unwrap(),
    ]));
    assert_eq!(before, read(&dir.path().join("attn.drug_attention.tsv")));
}

#[test]
fn ablate_writes_four_variant_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    make_planted(&data, 60);
    let out = dir.path().join("abl");
    run_ok(saban().args([
        "ablate",
        "--pairs",
        data.join("pairs.tsv").to_str().unwrap(),
        "--drug-dir",
        data.join("drugs").to_str().unwrap(),
        "--protein-dir",
        data.join("proteins").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--d-drug",
        "16",
        "--d-protein",
        "16",
        "--proj-dim",
        "8",
        "--glimpses",
        "1",
        "--ban-rank",
        "4",
        "--mlp-hidden",
        "8",
        "--ffn-mult",
        "2",
        "--max-epochs",
        "2",
        "--patience",
        "1",
        "--batch-size",
        "16",
        "--seed",
        "5",
    ]));
    let comparison = read(&out.join("comparison.tsv"));
    let names: Vec<&str> =
        comparison.lines().skip(1).map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(names, vec!["full", "wo_la", "wo_ban", "wo_cl"]);

    let wo_cl = read(&out.join("wo_cl/manifest.txt"));
    assert!(wo_cl.contains("config.use_cl=false"));
    assert!(wo_cl.contains("result.zero_contrastive=true"));
    let wo_la = read(&out.join("wo_la/manifest.txt"));
    assert!(wo_la.contains("config.use_la=false"));
    let full = read(&out.join("full/manifest.txt"));
    assert!(full.contains("config.use_la=true"));
    assert!(full.contains("result.zero_contrastive=false"));
    // Identical inputs and seeds across variants.
    let hash_of = |text: &str| {
        text.lines()
            .find(|l| l.starts_with("input.pairs.sha256"))
            .map(|l| l.to_string())
            .unwrap()
    };
    assert_eq!(hash_of(&full), hash_of(&wo_cl));
    let seed_of = |text: &str| {
        text.lines().find(|l| l.starts_with("config.seed")).map(|l| l.to_string()).unwrap()
    };
    assert_eq!(seed_of(&full), seed_of(&wo_la));
}
