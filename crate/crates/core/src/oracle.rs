//! Closed-form surrogate labels and labeled datasets.
//!
//! Performance and complexity are pure functions of an architecture, standing
//! in for trained-network measurements. Datasets read and write the same
//! JSON-lines records as [`crate::arch::Record`], so externally labeled data
//! can be dropped in.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::arch::{random_architecture, Architecture, Record, Split, DEFAULT_MAX_NODES};
use crate::error::{Error, Result};
use crate::scalar::logistic;

/// Per-operation cost and quality tables (indexed by type code) and the
/// logit coefficients of the performance surrogate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub cost: [f64; 8],
    pub quality: [f64; 8],
    /// Weight on total quality.
    pub a: f64,
    /// Weight on edge count.
    pub b: f64,
    /// Penalty on raw complexity.
    pub c: f64,
    pub z_norm: f64,
    pub max_nodes: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            cost: [0.0, 2.0, 1.0, 5.0, 2.5, 0.5, 0.5, 0.0],
            quality: [0.0, 0.30, 0.25, 0.35, 0.30, 0.10, 0.12, 0.0],
            a: 0.6,
            b: 0.08,
            c: 0.02,
            z_norm: 100.0,
            max_nodes: DEFAULT_MAX_NODES,
        }
    }
}

impl OracleConfig {
    pub fn check(&self) -> Result<()> {
        if self.cost.iter().chain(&self.quality).any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::Config("oracle costs and qualities must be finite and non-negative".into()));
        }
        if !(self.z_norm > 0.0) {
            return Err(Error::Config("oracle z_norm must be positive".into()));
        }
        Ok(())
    }

    /// `sum_v cost(type v) * indegree(v)`, unclamped.
    pub fn raw_complexity(&self, arch: &Architecture) -> Result<f64> {
        arch.ensure_valid(self.max_nodes)?;
        Ok(self.raw_unchecked(arch))
    }

    fn raw_unchecked(&self, arch: &Architecture) -> f64 {
        let mut indeg = vec![0usize; arch.num_nodes()];
        for &(_, v) in arch.edges() {
            indeg[v] += 1;
        }
        arch.types().iter().zip(&indeg).map(|(t, &d)| self.cost[t.code() as usize] * d as f64).sum()
    }

    /// Complexity in `[0, 1]`: raw complexity over `z_norm`, clamped at 1.
    pub fn complexity(&self, arch: &Architecture) -> Result<f64> {
        Ok((self.raw_complexity(arch)? / self.z_norm).min(1.0))
    }

    /// Performance in `(0, 1)`.
    pub fn performance(&self, arch: &Architecture) -> Result<f64> {
        let raw = self.raw_complexity(arch)?;
        let quality: f64 = arch.types().iter().map(|t| self.quality[t.code() as usize]).sum();
        Ok(logistic(self.a * quality + self.b * arch.edges().len() as f64 - self.c * raw))
    }

    pub fn label(&self, arch: &Architecture) -> Result<Labeled> {
        Ok(Labeled { arch: arch.clone(), perf: self.performance(arch)?, comp: self.complexity(arch)? })
    }
}

/// An architecture with its performance `perf` and complexity `comp`.
#[derive(Debug, Clone, PartialEq)]
pub struct Labeled {
    pub arch: Architecture,
    pub perf: f64,
    pub comp: f64,
}

impl Labeled {
    pub fn check_labels(&self) -> Result<()> {
        for v in [self.perf, self.comp] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::LabelOutOfRange(v));
            }
        }
        Ok(())
    }

    /// `perf - comp`.
    pub fn merit(&self) -> f64 {
        self.perf - self.comp
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<Labeled>,
    pub test: Vec<Labeled>,
    pub seed: u64,
    pub split_fraction: f64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.train.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all(&self) -> impl Iterator<Item = &Labeled> {
        self.train.iter().chain(&self.test)
    }

    pub fn train_keys(&self) -> HashSet<String> {
        self.train.iter().map(|r| r.arch.identity_key()).collect()
    }

    /// JSON lines, train records first, each tagged with its split.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (split, set) in [(Split::Train, &self.train), (Split::Test, &self.test)] {
            for r in set {
                let rec = Record { arch: r.arch.clone(), perf: Some(r.perf), comp: Some(r.comp), split: Some(split) };
                out.push_str(&rec.to_json_line());
                out.push('\n');
            }
        }
        out
    }

    /// Parses JSON lines. Records that all carry a split tag keep it;
    /// otherwise the records are shuffled with `seed` and split at
    /// `split_fraction`. Every record must be labeled.
    pub fn from_jsonl(text: &str, seed: u64, split_fraction: f64) -> Result<Self> {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec = Record::from_json_line(line).map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))?;
            let (Some(perf), Some(comp)) = (rec.perf, rec.comp) else {
                return Err(Error::Parse(format!("line {}: missing perf/comp label", i + 1)));
            };
            let l = Labeled { arch: rec.arch, perf, comp };
            l.check_labels()?;
            rows.push((l, rec.split));
        }
        if rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if rows.iter().all(|(_, s)| s.is_some()) {
            let mut ds = Dataset { train: Vec::new(), test: Vec::new(), seed, split_fraction };
            for (l, s) in rows {
                match s {
                    Some(Split::Train) => ds.train.push(l),
                    _ => ds.test.push(l),
                }
            }
            let n = ds.len() as f64;
            ds.split_fraction = ds.train.len() as f64 / n;
            return Ok(ds);
        }
        Ok(split(rows.into_iter().map(|(l, _)| l).collect(), seed, split_fraction))
    }

    pub fn read(path: &Path, seed: u64, split_fraction: f64) -> Result<Self> {
        Self::from_jsonl(&fs::read_to_string(path)?, seed, split_fraction)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    /// SHA-256 of the JSON-lines rendering, hex encoded.
    pub fn fingerprint(&self) -> String {
        fingerprint_bytes(self.to_jsonl().as_bytes())
    }
}

pub fn fingerprint_bytes(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

const SPLIT_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

fn split(mut rows: Vec<Labeled>, seed: u64, split_fraction: f64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SPLIT_STREAM);
    rows.shuffle(&mut rng);
    let n_train = (((rows.len() as f64) * split_fraction).round() as usize).min(rows.len());
    let test = rows.split_off(n_train);
    Dataset { train: rows, test, seed, split_fraction }
}

/// Draws `n` distinct architectures (by identity key), labels them with the
/// oracle and splits them into train and test.
pub fn build_dataset(
    oracle: &OracleConfig,
    n: usize,
    n_internal: usize,
    seed: u64,
    split_fraction: f64,
) -> Result<Dataset> {
    if n < 10 {
        return Err(Error::Config(format!("dataset needs at least 10 graphs, asked for {n}")));
    }
    if n_internal < 1 || n_internal + 2 > oracle.max_nodes {
        return Err(Error::Config(format!(
            "internal node count {n_internal} does not fit max_nodes {}",
            oracle.max_nodes
        )));
    }
    if !(0.0..=1.0).contains(&split_fraction) {
        return Err(Error::Config(format!("split fraction {split_fraction} outside [0, 1]")));
    }
    oracle.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut rows = Vec::with_capacity(n);
    let max_attempts = n.saturating_mul(1000);
    let mut attempts = 0;
    while rows.len() < n {
        if attempts == max_attempts {
            return Err(Error::SearchSpaceExhausted { wanted: n, attempts });
        }
        attempts += 1;
        let arch = random_architecture(&mut rng, n_internal);
        if seen.insert(arch.identity_key()) {
            rows.push(oracle.label(&arch)?);
        }
    }
    Ok(split(rows, seed, split_fraction))
}
