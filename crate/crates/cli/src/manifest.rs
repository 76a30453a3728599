//! Run manifests: a key=value snapshot of everything needed to reproduce a
//! command bit-for-bit on one platform — resolved configuration, seeds,
//! content hashes of the inputs, and the fixed defaults baked into this
//! build. Manifests carry no timestamps so re-runs produce identical files.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

pub struct RunManifest {
    entries: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        let mut m = Self { entries: Vec::new() };
        m.push("tool", "saban");
        m.push("version", env!("CARGO_PKG_VERSION"));
        m.push("core_version", saban_core::VERSION);
        m.push("command", command);
        m.push("sbem_version", saban_core::embed::SBEM_VERSION.to_string());
        m
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.entries.push((key.into(), value.into()));
    }

    /// Record an input file's path and SHA-256 content hash.
    pub fn push_input(&mut self, name: &str, path: &Path) -> Result<()> {
        self.push(format!("input.{name}.path"), path.display().to_string());
        let bytes = std::fs::read(path)
            .with_context(|| format!("reading input {} for manifest", path.display()))?;
        self.push(format!("input.{name}.sha256"), hex_digest(&bytes));
        Ok(())
    }

    /// Record an input directory: per-file hashes of its `.sbem` entries,
    /// in sorted order, collapsed into one digest.
    pub fn push_input_dir(&mut self, name: &str, dir: &Path) -> Result<()> {
        self.push(format!("input.{name}.path"), dir.display().to_string());
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .with_context(|| format!("reading input directory {}", dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "sbem"))
            .collect();
        paths.sort();
        let mut hasher = Sha256::new();
        for p in &paths {
            hasher.update(p.file_name().unwrap().to_string_lossy().as_bytes());
            hasher.update(std::fs::read(p).with_context(|| format!("reading {}", p.display()))?);
        }
        self.push(format!("input.{name}.files"), paths.len().to_string());
        self.push(format!("input.{name}.sha256"), format!("{:x}", hasher.finalize()));
        Ok(())
    }

    pub fn push_config(&mut self, cfg: &saban_core::train::TrainConfig) {
        for (k, v) in cfg.to_pairs() {
            self.push(format!("config.{k}"), v);
        }
    }

    /// The fixed defaults this build chose where the method leaves room.
    pub fn push_defaults(&mut self) {
        self.push("decision.adamw_beta1", "0.9");
        self.push("decision.adamw_beta2", "0.999");
        self.push("decision.adamw_epsilon", "1e-8");
        self.push("decision.bedroc_alpha", saban_core::metrics::DEFAULT_BEDROC_ALPHA.to_string());
        self.push("decision.ef_fractions", "0.005,0.01,0.05");
        self.push("decision.split_ratios", "7:1:2");
        self.push(
            "decision.residue_alphabet",
            saban_core::protein::RESIDUE_ALPHABET.iter().collect::<String>(),
        );
        self.push(
            "decision.geometry_alphabet",
            saban_core::protein::GEOM_ALPHABET.iter().collect::<String>(),
        );
        self.push("decision.valence_table", "C:4,N:3,O:2,S:6,P:5,F:1,Cl:1,Br:1,I:1,H:1");
        self.push("decision.temperature_clamp", "1..100");
        self.push("decision.pool_init", "query=gaussian(0,0.02), projections=xavier_uniform");
        self.push("decision.accuracy_threshold", "0.5");
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render())
            .with_context(|| format!("writing manifest {}", path.display()))
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}
