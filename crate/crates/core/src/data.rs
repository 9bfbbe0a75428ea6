//! Datasets: LIBSVM text ingestion, the synthetic logistic generator, and
//! random balanced partitioning into worker shards.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::objectives::{LogisticShard, Shard};
use crate::{DenseMatrix, Error, Result, Vector};

/// Sparse feature vector with 0-based, strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseRow {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseRow {
    pub fn new(indices: Vec<usize>, values: Vec<f64>) -> Self {
        debug_assert_eq!(indices.len(), values.len());
        debug_assert!(indices.windows(2).all(|w| w[0] < w[1]));
        Self { indices, values }
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn dot(&self, x: &Vector) -> f64 {
        self.indices.iter().zip(&self.values).map(|(&j, &v)| v * x[j]).sum()
    }

    pub fn norm_squared(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// `out += scale · self`
    pub fn axpy_into(&self, scale: f64, out: &mut Vector) {
        for (&j, &v) in self.indices.iter().zip(&self.values) {
            out[j] += scale * v;
        }
    }

    /// `out += w · self selfᵀ`
    pub fn add_outer_into(&self, w: f64, out: &mut DenseMatrix) {
        for (&i, &vi) in self.indices.iter().zip(&self.values) {
            for (&j, &vj) in self.indices.iter().zip(&self.values) {
                out[(i, j)] += w * vi * vj;
            }
        }
    }
}

/// Labelled sparse dataset with labels in {−1, +1}.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub rows: Vec<SparseRow>,
    pub labels: Vec<f64>,
    pub dim: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(SparseRow::nnz).sum()
    }

    /// Rescales every feature to [0, 1] from its observed range. Missing
    /// sparse entries count as zeros; constant features become zero.
    pub fn normalize_min_max(&mut self) {
        let n = self.rows.len();
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        let mut seen = vec![0usize; self.dim];
        for r in &self.rows {
            for (&j, &v) in r.indices.iter().zip(&r.values) {
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
                seen[j] += 1;
            }
        }
        for j in 0..self.dim {
            if seen[j] < n {
                lo[j] = lo[j].min(0.0);
                hi[j] = hi[j].max(0.0);
            }
        }
        // Absent entries map to (0 − lo)/range, which is nonzero when lo < 0;
        // such features are densified.
        let fills: Vec<(usize, f64)> = (0..self.dim)
            .filter(|&j| seen[j] < n && lo[j] < 0.0 && hi[j] > lo[j])
            .map(|j| (j, -lo[j] / (hi[j] - lo[j])))
            .collect();
        for r in &mut self.rows {
            let mut entries: Vec<(usize, f64)> = Vec::with_capacity(r.nnz() + fills.len());
            for (&j, &v) in r.indices.iter().zip(&r.values) {
                let range = hi[j] - lo[j];
                entries.push((j, if range > 0.0 { (v - lo[j]) / range } else { 0.0 }));
            }
            for &(j, fill) in &fills {
                if r.indices.binary_search(&j).is_err() {
                    entries.push((j, fill));
                }
            }
            entries.sort_unstable_by_key(|e| e.0);
            entries.retain(|e| e.1 != 0.0);
            let (idx, val) = entries.into_iter().unzip();
            *r = SparseRow::new(idx, val);
        }
    }
}

/// Parses LIBSVM text: `label idx:val idx:val ...` with 1-based, strictly
/// increasing indices. Blank lines and `#` comments are ignored. Labels from
/// {−1,+1}, {0,1} or {1,2} are mapped to {−1,+1}.
pub fn parse_libsvm<R: BufRead>(reader: R) -> Result<Dataset> {
    let mut rows = Vec::new();
    let mut raw_labels = Vec::new();
    let mut dim = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let label_tok = tokens.next().unwrap_or_default();
        let label: f64 = label_tok
            .parse()
            .map_err(|_| Error::Parse { line: lineno, msg: format!("bad label {label_tok:?}") })?;
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for tok in tokens {
            let (i, v) = tok
                .split_once(':')
                .ok_or_else(|| Error::Parse { line: lineno, msg: format!("expected idx:val, got {tok:?}") })?;
            let index: i64 = i
                .parse()
                .map_err(|_| Error::Parse { line: lineno, msg: format!("bad index {i:?}") })?;
            if index <= 0 {
                return Err(Error::Index { line: lineno, index });
            }
            let value: f64 = v
                .parse()
                .map_err(|_| Error::Parse { line: lineno, msg: format!("bad value {v:?}") })?;
            if !value.is_finite() {
                return Err(Error::Parse { line: lineno, msg: format!("non-finite value {v:?}") });
            }
            let j = (index - 1) as usize;
            if indices.last().is_some_and(|&prev| prev >= j) {
                return Err(Error::Parse { line: lineno, msg: "indices must be strictly increasing".into() });
            }
            if value != 0.0 {
                indices.push(j);
                values.push(value);
            }
            dim = dim.max(j + 1);
        }
        rows.push(SparseRow::new(indices, values));
        raw_labels.push((lineno, label));
    }
    let labels = map_labels(&raw_labels)?;
    Ok(Dataset { rows, labels, dim })
}

fn map_labels(raw: &[(usize, f64)]) -> Result<Vec<f64>> {
    let all_in = |set: &[f64]| raw.iter().all(|(_, l)| set.contains(l));
    let (neg, pos) = if all_in(&[-1.0, 1.0]) {
        (-1.0, 1.0)
    } else if all_in(&[0.0, 1.0]) {
        (0.0, 1.0)
    } else if all_in(&[1.0, 2.0]) {
        (1.0, 2.0)
    } else {
        let (line, l) = raw
            .iter()
            .find(|(_, l)| ![-1.0, 0.0, 1.0, 2.0].contains(l))
            .or_else(|| raw.first())
            .copied()
            .unwrap_or((0, f64::NAN));
        return Err(Error::Parse { line, msg: format!("unsupported binary label set (saw {l})") });
    };
    Ok(raw.iter().map(|(_, l)| if *l == pos { 1.0 } else { debug_assert_eq!(*l, neg); -1.0 }).collect())
}

/// Reads a LIBSVM file, transparently decompressing `.gz`.
pub fn load_libsvm(path: &Path) -> Result<Dataset> {
    let file = File::open(path)?;
    if path.extension().is_some_and(|e| e == "gz") {
        parse_libsvm(BufReader::new(GzDecoder::new(file)))
    } else {
        parse_libsvm(BufReader::new(file))
    }
}

/// Writes `dataset` in LIBSVM format with ±1 labels. Values use the
/// shortest round-trip representation, so parsing the output reproduces the
/// dataset exactly.
pub fn write_libsvm<W: Write>(dataset: &Dataset, mut out: W) -> Result<()> {
    for (row, &label) in dataset.rows.iter().zip(&dataset.labels) {
        write!(out, "{}", if label > 0.0 { "+1" } else { "-1" })?;
        for (&j, &v) in row.indices.iter().zip(&row.values) {
            write!(out, " {}:{}", j + 1, v)?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Parameters of the synthetic logistic-regression generator.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub dim: usize,
    /// Variance of the additive label noise ξ.
    pub noise_sigma2: f64,
    /// Probability that any single entry of the sample matrix is zeroed.
    pub sparsity: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(n_samples: usize, dim: usize, seed: u64) -> Self {
        Self { n_samples, dim, noise_sigma2: 0.09, sparsity: 0.0, seed }
    }

    fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || self.dim == 0 {
            return Err(Error::Config("synthetic data needs N > 0 and d > 0".into()));
        }
        if !(0.0..1.0).contains(&self.sparsity) {
            return Err(Error::Config(format!("sparsity {} not in [0, 1)", self.sparsity)));
        }
        if !(self.noise_sigma2 >= 0.0) {
            return Err(Error::Config("noise variance must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Features `x ~ N(0, Σ)` with `Σ_kk = k^{-1.2}` (1-based k), a random
/// subset of entries zeroed, `z = ⟨x, 1⟩ + ξ` with `ξ ~ N(0, σ²)`, and label
/// +1 with probability `1/(1 + e^{-z})`, else −1.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let noise = Normal::new(0.0, cfg.noise_sigma2.sqrt()).expect("finite noise");
    let scales: Vec<f64> = (1..=cfg.dim).map(|k| (k as f64).powf(-0.6)).collect();

    let mut rows = Vec::with_capacity(cfg.n_samples);
    let mut labels = Vec::with_capacity(cfg.n_samples);
    for _ in 0..cfg.n_samples {
        let mut indices = Vec::new();
        let mut values = Vec::new();
        let mut z = 0.0;
        for (j, &sd) in scales.iter().enumerate() {
            let v = sd * std_normal.sample(&mut rng);
            let keep = cfg.sparsity == 0.0 || rng.random::<f64>() >= cfg.sparsity;
            if keep && v != 0.0 {
                indices.push(j);
                values.push(v);
                z += v;
            }
        }
        z += noise.sample(&mut rng);
        let p = crate::objectives::sigmoid(z);
        labels.push(if rng.random::<f64>() < p { 1.0 } else { -1.0 });
        rows.push(SparseRow::new(indices, values));
    }
    Ok(Dataset { rows, labels, dim: cfg.dim })
}

/// Randomly permutes the rows and splits them into `n` logistic shards whose
/// sizes differ by at most one. Each shard carries the full regularizer λ.
pub fn partition(dataset: &Dataset, n: usize, seed: u64, lambda: f64) -> Result<Vec<Shard>> {
    if n == 0 {
        return Err(Error::Config("need at least one worker".into()));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (dataset.len() / n, dataset.len() % n);
    let mut shards = Vec::with_capacity(n);
    let mut start = 0;
    for k in 0..n {
        let size = base + usize::from(k < extra);
        let idx = &order[start..start + size];
        start += size;
        let rows = idx.iter().map(|&i| dataset.rows[i].clone()).collect();
        let labels = idx.iter().map(|&i| dataset.labels[i]).collect();
        shards.push(Shard::Logistic(LogisticShard::new(dataset.dim, rows, labels, lambda)?));
    }
    Ok(shards)
}
