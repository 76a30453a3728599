//! Per-token embedding matrices for drugs and proteins.
//!
//! Embeddings come either from `SBEM` binary files (stand-ins for frozen
//! encoder outputs) or from a deterministic synthetic generator. Values are
//! stored as 32-bit floats on disk and widened to `f64` in memory; the
//! synthetic generator rounds through `f32` so file round-trips are
//! bit-exact.
//!
//! SBEM layout, all little-endian: magic `SBEM`, version `u32` (= 1),
//! row count `u32`, column count `u32`, then rows x cols `f32` values in
//! row-major order.
//!
//! Pair datasets are TSV files with header columns `drug_id`, `protein_id`,
//! `label` and an optional `ic50_nm` column used by the low-bias filter.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::mat::Mat;
use crate::rng::{hash_str, mix, unit_f64};

pub const SBEM_MAGIC: [u8; 4] = *b"SBEM";
pub const SBEM_VERSION: u32 = 1;

/// Default embedding width for drug token matrices.
pub const DEFAULT_DRUG_DIM: usize = 768;
/// Default embedding width for protein token matrices.
pub const DEFAULT_PROTEIN_DIM: usize = 1280;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("token id list must be non-empty")]
    EmptySequence,
    #[error("{path}: bad magic bytes (expected SBEM)")]
    BadMagic { path: String },
    #[error("{path}: unsupported SBEM version {version}")]
    UnsupportedVersion { path: String, version: u32 },
    #[error("{path}: file truncated (expected {expected} data bytes, found {found})")]
    TruncatedFile { path: String, expected: usize, found: usize },
    #[error("{path}: trailing bytes after {expected} data bytes")]
    TrailingBytes { path: String, expected: usize },
    #[error("embedding dimension mismatch for {entity}: expected {expected}, found {found}")]
    DimMismatch { entity: String, expected: usize, found: usize },
    #[error("{path}: missing required column '{column}'")]
    MissingColumn { path: String, column: String },
    #[error("{path}:{line}: bad label {text:?} (expected 0 or 1)")]
    BadLabel { path: String, line: usize, text: String },
    #[error("{path}:{line}: bad ic50_nm value {text:?}")]
    BadIc50 { path: String, line: usize, text: String },
    #[error("{path}:{line}: expected {expected} fields, found {found}")]
    BadRow { path: String, line: usize, expected: usize, found: usize },
    #[error("no embedding found for entity '{id}'")]
    MissingEntity { id: String },
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn io_err(path: &Path, source: std::io::Error) -> EmbedError {
    EmbedError::Io { path: path.display().to_string(), source }
}

/// Token embedding matrix for one entity; row `i` embeds token `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddings {
    pub entity_id: String,
    pub matrix: Mat,
}

impl TokenEmbeddings {
    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn token_count(&self) -> usize {
        self.matrix.rows()
    }
}

/// Deterministic stand-in for a frozen encoder: row `i` is a pure function
/// of `(token_ids[i], i, seed)` with entries in `[-1, 1]`, rounded through
/// `f32` so SBEM round-trips are bit-exact.
pub fn synth_embedding(
    entity_id: &str,
    token_ids: &[usize],
    dim: usize,
    seed: u64,
) -> Result<TokenEmbeddings, EmbedError> {
    assert!(dim >= 1, "embedding dimension must be at least 1");
    if token_ids.is_empty() {
        return Err(EmbedError::EmptySequence);
    }
    let matrix = Mat::from_fn(token_ids.len(), dim, |i, j| {
        let h = mix(&[seed, token_ids[i] as u64, i as u64, j as u64]);
        f64::from((unit_f64(h) * 2.0 - 1.0) as f32)
    });
    Ok(TokenEmbeddings { entity_id: entity_id.to_string(), matrix })
}

/// Deterministic token-id sequence for an entity, used by the synthetic
/// store when no real tokenization is available.
pub fn synth_token_ids(entity_id: &str, vocab_size: usize, seed: u64, min_len: usize, max_len: usize) -> Vec<usize> {
    assert!(min_len >= 1 && max_len >= min_len);
    let key = hash_str(entity_id);
    let span = (max_len - min_len + 1) as u64;
    let len = min_len + (mix(&[seed, key, 0xC0FFEE]) % span) as usize;
    (0..len)
        .map(|i| (mix(&[seed, key, i as u64]) % vocab_size as u64) as usize)
        .collect()
}

/// Write a token embedding matrix in SBEM format.
pub fn write_embeddings(path: &Path, emb: &TokenEmbeddings) -> Result<(), EmbedError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<File>, bytes: &[u8]| -> Result<(), EmbedError> {
        w.write_all(bytes).map_err(|e| io_err(path, e))
    };
    write(&mut w, &SBEM_MAGIC)?;
    write(&mut w, &SBEM_VERSION.to_le_bytes())?;
    write(&mut w, &(emb.matrix.rows() as u32).to_le_bytes())?;
    write(&mut w, &(emb.matrix.cols() as u32).to_le_bytes())?;
    for &v in emb.matrix.data() {
        write(&mut w, &(v as f32).to_le_bytes())?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Read an SBEM file; the entity id is the file stem.
pub fn read_embeddings(path: &Path) -> Result<TokenEmbeddings, EmbedError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = BufReader::new(file);
    let mut header = [0u8; 16];
    let path_str = path.display().to_string();
    r.read_exact(&mut header).map_err(|_| EmbedError::BadMagic { path: path_str.clone() })?;
    if header[0..4] != SBEM_MAGIC {
        return Err(EmbedError::BadMagic { path: path_str });
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != SBEM_VERSION {
        return Err(EmbedError::UnsupportedVersion { path: path_str, version });
    }
    let rows = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    let expected = rows * cols * 4;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload).map_err(|e| io_err(path, e))?;
    if payload.len() < expected {
        return Err(EmbedError::TruncatedFile { path: path_str, expected, found: payload.len() });
    }
    if payload.len() > expected {
        return Err(EmbedError::TrailingBytes { path: path_str, expected });
    }
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    let entity_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(TokenEmbeddings { entity_id, matrix: Mat::from_vec(rows, cols, data) })
}

/// One labeled drug-protein pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairRecord {
    pub drug_id: String,
    pub protein_id: String,
    pub label: u8,
}

/// Load a pairs TSV. With `low_bias_filter`, labels are derived from the
/// `ic50_nm` column instead of the `label` column: below 100 nM is positive,
/// above 10000 nM is negative, and rows in the 100-fold margin between the
/// thresholds are dropped. Drugs whose surviving rows are all-positive or
/// all-negative are then removed.
pub fn load_pairs(path: &Path, low_bias_filter: bool) -> Result<Vec<PairRecord>, EmbedError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let path_str = path.display().to_string();
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| EmbedError::MissingColumn {
        path: path_str.clone(),
        column: "drug_id".into(),
    })?;
    let columns: Vec<&str> = header.split('\t').collect();
    let find = |name: &str| -> Result<usize, EmbedError> {
        columns.iter().position(|&c| c == name).ok_or_else(|| EmbedError::MissingColumn {
            path: path_str.clone(),
            column: name.into(),
        })
    };
    let drug_col = find("drug_id")?;
    let protein_col = find("protein_id")?;
    let label_col = find("label")?;
    let ic50_col = if low_bias_filter { Some(find("ic50_nm")?) } else { None };

    let mut records = Vec::new();
    for (line_idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < columns.len() {
            return Err(EmbedError::BadRow {
                path: path_str.clone(),
                line: line_idx + 1,
                expected: columns.len(),
                found: fields.len(),
            });
        }
        let label = match ic50_col {
            Some(c) => {
                let text = fields[c];
                let ic50: f64 = text.parse().map_err(|_| EmbedError::BadIc50 {
                    path: path_str.clone(),
                    line: line_idx + 1,
                    text: text.to_string(),
                })?;
                if ic50 < 100.0 {
                    1
                } else if ic50 > 10_000.0 {
                    0
                } else {
                    continue; // inside the margin between thresholds
                }
            }
            None => match fields[label_col] {
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(EmbedError::BadLabel {
                        path: path_str.clone(),
                        line: line_idx + 1,
                        text: other.to_string(),
                    })
                }
            },
        };
        records.push(PairRecord {
            drug_id: fields[drug_col].to_string(),
            protein_id: fields[protein_col].to_string(),
            label,
        });
    }

    if low_bias_filter {
        let mut seen: HashMap<&str, (bool, bool)> = HashMap::new();
        for r in &records {
            let e = seen.entry(&r.drug_id).or_insert((false, false));
            if r.label == 1 {
                e.0 = true;
            } else {
                e.1 = true;
            }
        }
        let keep: std::collections::HashSet<String> = seen
            .iter()
            .filter(|(_, &(pos, neg))| pos && neg)
            .map(|(&id, _)| id.to_string())
            .collect();
        records.retain(|r| keep.contains(&r.drug_id));
    }
    Ok(records)
}

/// Anything that can hand out per-token embeddings by entity id.
pub trait EmbeddingSource {
    fn embedding(&self, id: &str) -> Result<&TokenEmbeddings, EmbedError>;
    fn dim(&self) -> usize;
}

/// In-memory store keyed by entity id.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    dim: usize,
    entries: HashMap<String, TokenEmbeddings>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        Self { dim, entries: HashMap::new() }
    }

    pub fn insert(&mut self, emb: TokenEmbeddings) -> Result<(), EmbedError> {
        if emb.dim() != self.dim {
            return Err(EmbedError::DimMismatch {
                entity: emb.entity_id.clone(),
                expected: self.dim,
                found: emb.dim(),
            });
        }
        self.entries.insert(emb.entity_id.clone(), emb);
        Ok(())
    }

    /// Load every `*.sbem` file in a directory; entity ids are file stems.
    pub fn load_dir(dir: &Path, dim: usize) -> Result<Self, EmbedError> {
        let mut store = Self::new(dim);
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| io_err(dir, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "sbem"))
            .collect();
        paths.sort();
        for path in paths {
            store.insert(read_embeddings(&path)?)?;
        }
        Ok(store)
    }

    /// Build a synthetic store for the given ids, fabricating token
    /// sequences from the entity ids themselves.
    pub fn synthetic(
        ids: impl IntoIterator<Item = String>,
        vocab_size: usize,
        dim: usize,
        seed: u64,
    ) -> Self {
        let mut store = Self::new(dim);
        for id in ids {
            let tokens = synth_token_ids(&id, vocab_size, seed, 4, 16);
            let emb = synth_embedding(&id, &tokens, dim, seed).expect("non-empty tokens");
            store.entries.insert(id, emb);
        }
        store
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.entries.keys().map(String::as_str).collect();
        ids.sort_unstable();
        ids
    }
}

impl EmbeddingSource for EmbeddingStore {
    fn embedding(&self, id: &str) -> Result<&TokenEmbeddings, EmbedError> {
        self.entries.get(id).ok_or_else(|| EmbedError::MissingEntity { id: id.to_string() })
    }

    fn dim(&self) -> usize {
        self.dim
    }
}

/// Parameters of the planted-signal benchmark: labels are the sign of the
/// product of per-entity factors carried in the embeddings, so the task is
/// solvable by construction.
#[derive(Debug, Clone)]
pub struct PlantedSpec {
    pub n_pairs: usize,
    pub d_drug: usize,
    pub d_protein: usize,
    pub drug_tokens: usize,
    pub protein_tokens: usize,
    /// Magnitude of the planted direction relative to the unit noise.
    pub strength: f64,
    pub seed: u64,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        Self {
            n_pairs: 2000,
            d_drug: 64,
            d_protein: 64,
            drug_tokens: 8,
            protein_tokens: 12,
            strength: 2.0,
            seed: 11,
        }
    }
}

/// Build a planted rank-1 dataset: each drug i carries factor `a_i = +/-1`
/// along a fixed direction `u`, each protein carries `b_i` along `w`, and
/// pair i is labeled positive iff `a_i * b_i > 0`.
pub fn planted_dataset(spec: &PlantedSpec) -> (EmbeddingStore, EmbeddingStore, Vec<PairRecord>) {
    let u: Vec<f64> = (0..spec.d_drug)
        .map(|j| f64::from((unit_f64(mix(&[spec.seed, 0xD1, j as u64])) * 2.0 - 1.0) as f32))
        .collect();
    let w: Vec<f64> = (0..spec.d_protein)
        .map(|j| f64::from((unit_f64(mix(&[spec.seed, 0xF2, j as u64])) * 2.0 - 1.0) as f32))
        .collect();

    let mut drugs = EmbeddingStore::new(spec.d_drug);
    let mut proteins = EmbeddingStore::new(spec.d_protein);
    let mut pairs = Vec::with_capacity(spec.n_pairs);
    for i in 0..spec.n_pairs {
        let a = if mix(&[spec.seed, 0xA0, i as u64]) & 1 == 0 { 1.0 } else { -1.0 };
        let b = if mix(&[spec.seed, 0xB0, i as u64]) & 1 == 0 { 1.0 } else { -1.0 };
        let drug_id = format!("d{i:05}");
        let protein_id = format!("p{i:05}");

        let drug_ids = synth_token_ids(&drug_id, crate::selfies::DRUG_VOCAB_SIZE, spec.seed, spec.drug_tokens, spec.drug_tokens);
        let mut demb = synth_embedding(&drug_id, &drug_ids, spec.d_drug, spec.seed).unwrap();
        plant(&mut demb.matrix, &u, spec.strength * a);
        drugs.entries.insert(drug_id.clone(), demb);

        let prot_ids = synth_token_ids(&protein_id, crate::protein::VOCAB_SIZE, spec.seed, spec.protein_tokens, spec.protein_tokens);
        let mut pemb = synth_embedding(&protein_id, &prot_ids, spec.d_protein, spec.seed).unwrap();
        plant(&mut pemb.matrix, &w, spec.strength * b);
        proteins.entries.insert(protein_id.clone(), pemb);

        pairs.push(PairRecord { drug_id, protein_id, label: u8::from(a * b > 0.0) });
    }
    (drugs, proteins, pairs)
}

fn plant(matrix: &mut Mat, direction: &[f64], coefficient: f64) {
    for i in 0..matrix.rows() {
        for (j, &dir) in direction.iter().enumerate() {
            let v = matrix.at(i, j) + coefficient * dir;
            matrix.set(i, j, f64::from(v as f32));
        }
    }
}
