//! Prediction-uncertainty analysis: Shannon entropy, entropy histograms,
//! entropy deltas and PCA of probability rows.

use std::io::{self, Write};

use thiserror::Error;

use crate::sampling::RngStream;
use crate::tensor::Tensor;

/// Allowed deviation of a probability row's sum from 1.
pub const SUM_TOLERANCE: f64 = 1e-6;
pub const PCA_TOLERANCE: f64 = 1e-10;
pub const PCA_MAX_ITERATIONS: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("negative probability {value} at index {index}")]
    NegativeProbability { index: usize, value: f64 },
    #[error("probabilities sum to {0}, outside 1 ± {SUM_TOLERANCE}")]
    BadSum(f64),
    #[error("normalized entropy needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("row has {actual} entries for {expected} classes")]
    RowLength { expected: usize, actual: usize },
    #[error("PCA needs at least 2 samples and k <= d (n = {n}, d = {d}, k = {k})")]
    PcaShape { n: usize, d: usize, k: usize },
}

/// Shannon entropy in nats, with `0 log 0 = 0`. Rows within tolerance of
/// summing to one are renormalized first.
pub fn entropy(p: &[f64]) -> Result<f64, AnalysisError> {
    if let Some((index, &value)) = p.iter().enumerate().find(|(_, &v)| v < 0.0 || v.is_nan()) {
        return Err(AnalysisError::NegativeProbability { index, value });
    }
    let total: f64 = p.iter().sum();
    if !((total - 1.0).abs() <= SUM_TOLERANCE) {
        return Err(AnalysisError::BadSum(total));
    }
    let h = -p
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| {
            let q = v / total;
            q * q.ln()
        })
        .sum::<f64>();
    Ok(h.max(0.0))
}

/// `H(p) / ln(n_classes)`, clamped to `[0, 1]`.
pub fn normalized_entropy(p: &[f64], n_classes: usize) -> Result<f64, AnalysisError> {
    if n_classes < 2 {
        return Err(AnalysisError::TooFewClasses(n_classes));
    }
    if p.len() != n_classes {
        return Err(AnalysisError::RowLength {
            expected: n_classes,
            actual: p.len(),
        });
    }
    Ok((entropy(p)? / (n_classes as f64).ln()).min(1.0))
}

/// Softmax rows annotated with their entropies.
#[derive(Debug, Clone)]
pub struct PredictionBatch {
    pub probs: Tensor,
    pub entropy: Vec<f64>,
    pub normalized_entropy: Vec<f64>,
}

impl PredictionBatch {
    pub fn new(probs: Tensor) -> Result<Self, AnalysisError> {
        let n_classes = probs.cols();
        let mut entropy_col = Vec::with_capacity(probs.rows());
        let mut normalized = Vec::with_capacity(probs.rows());
        for r in 0..probs.rows() {
            let row = probs.row(r);
            entropy_col.push(entropy(row)?);
            normalized.push(normalized_entropy(row, n_classes)?);
        }
        Ok(Self {
            probs,
            entropy: entropy_col,
            normalized_entropy: normalized,
        })
    }

    pub fn len(&self) -> usize {
        self.entropy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entropy.is_empty()
    }

    pub fn mean_normalized_entropy(&self) -> f64 {
        self.normalized_entropy.iter().sum::<f64>() / self.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyHistogram {
    /// `n_bins + 1` uniform edges on `[0, 1]`.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl EntropyHistogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// CSV with header `bin_lo,bin_hi,count`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "bin_lo,bin_hi,count")?;
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(out, "{},{},{}", self.edges[i], self.edges[i + 1], c)?;
        }
        Ok(())
    }
}

fn bin_edges(n_bins: usize) -> Vec<f64> {
    (0..=n_bins).map(|k| k as f64 / n_bins as f64).collect()
}

/// Bin index for `x ∈ [0, 1]`: bins are `[lo, hi)` except the last, `[lo, 1]`.
fn bin_of(x: f64, edges: &[f64]) -> usize {
    let n = edges.len() - 1;
    let mut b = ((x * n as f64).floor().max(0.0) as usize).min(n - 1);
    while b + 1 < n && x >= edges[b + 1] {
        b += 1;
    }
    while b > 0 && x < edges[b] {
        b -= 1;
    }
    b
}

/// Histogram of normalized entropies over `n_bins` uniform bins (`n_bins` of 0 is treated as 1).
pub fn entropy_histogram(batch: &PredictionBatch, n_bins: usize) -> EntropyHistogram {
    histogram_of(&batch.normalized_entropy, n_bins)
}

pub fn histogram_of(values: &[f64], n_bins: usize) -> EntropyHistogram {
    let edges = bin_edges(n_bins.max(1));
    let mut counts = vec![0; edges.len() - 1];
    for &v in values {
        counts[bin_of(v.clamp(0.0, 1.0), &edges)] += 1;
    }
    EntropyHistogram { edges, counts }
}

/// `H_initial - H_final`; positive when uncertainty went down.
pub fn delta_entropy(h_initial: f64, h_final: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&h_initial) && (0.0..=1.0).contains(&h_final));
    h_initial - h_final
}

/// Per-step reductions `H_{t-1} - H_t` along a trace of entropies.
pub fn entropy_deltas(trace: &[f64]) -> Vec<f64> {
    trace.windows(2).map(|w| delta_entropy(w[0], w[1])).collect()
}

#[derive(Debug, Clone)]
pub struct PcaResult {
    /// `n × k` scores of the centered data.
    pub projected: Tensor,
    /// Fraction of total variance per component, nonincreasing.
    pub explained_ratio: Vec<f64>,
    /// Unit-norm principal axes, one row per component.
    pub components: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub mean: Vec<f64>,
}

impl PcaResult {
    /// CSV `pc1,pc2,normalized_entropy`; needs at least two components.
    pub fn write_csv<W: Write>(&self, normalized_entropy: &[f64], mut out: W) -> io::Result<()> {
        writeln!(out, "pc1,pc2,normalized_entropy")?;
        for (r, h) in normalized_entropy.iter().enumerate() {
            let row = self.projected.row(r);
            let pc2 = row.get(1).copied().unwrap_or(0.0);
            writeln!(out, "{},{},{}", row[0], pc2, h)?;
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let c = dot(v, b);
        v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
    }
}

fn mat_vec(c: &[f64], d: usize, v: &[f64]) -> Vec<f64> {
    (0..d).map(|i| dot(&c[i * d..(i + 1) * d], v)).collect()
}

/// Unit vector orthogonal to `basis`, taken from the standard basis.
fn complement_vector(d: usize, basis: &[Vec<f64>]) -> Vec<f64> {
    (0..d)
        .map(|i| {
            let mut e = vec![0.0; d];
            e[i] = 1.0;
            orthogonalize(&mut e, basis);
            orthogonalize(&mut e, basis);
            e
        })
        .max_by(|a, b| dot(a, a).total_cmp(&dot(b, b)))
        .map(|mut e| {
            normalize(&mut e);
            e
        })
        .unwrap()
}

/// Largest-magnitude component made positive.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Top-`k` principal components by power iteration with deflation.
pub fn pca_project(x: &Tensor, k: usize) -> Result<PcaResult, AnalysisError> {
    let (n, d) = (x.rows(), x.cols());
    if x.rank() != 2 || n < 2 || k == 0 || k > d {
        return Err(AnalysisError::PcaShape { n, d, k });
    }
    let mean: Vec<f64> = (0..d)
        .map(|j| (0..n).map(|r| x.at(r, j)).sum::<f64>() / n as f64)
        .collect();
    let centered: Vec<f64> = (0..n)
        .flat_map(|r| x.row(r).iter().zip(&mean).map(|(v, m)| v - m).collect::<Vec<_>>())
        .collect();
    let mut cov = vec![0.0; d * d];
    for r in 0..n {
        let row = &centered[r * d..(r + 1) * d];
        for i in 0..d {
            for j in i..d {
                cov[i * d + j] += row[i] * row[j];
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..d {
        for j in i..d {
            cov[i * d + j] /= denom;
            cov[j * d + i] = cov[i * d + j];
        }
    }
    let trace: f64 = (0..d).map(|i| cov[i * d + i]).sum();

    let mut components: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut eigenvalues = Vec::with_capacity(k);
    let mut deflated = cov.clone();
    // Fixed start vector so every implementation follows the same iterates.
    let mut rng = RngStream::new(0x5043_415f_5354_4152);
    for _ in 0..k {
        let mut v: Vec<f64> = (0..d).map(|_| rng.uniform(-1.0, 1.0)).collect();
        orthogonalize(&mut v, &components);
        let mut norm = normalize(&mut v);
        let scale = trace.max(f64::MIN_POSITIVE);
        let mut lambda = 0.0;
        if norm > 0.0 && trace > 0.0 {
            for _ in 0..PCA_MAX_ITERATIONS {
                let mut w = mat_vec(&deflated, d, &v);
                orthogonalize(&mut w, &components);
                norm = normalize(&mut w);
                if norm <= 1e-14 * scale {
                    break;
                }
                let diff = w.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                v = w;
                if diff < PCA_TOLERANCE {
                    break;
                }
            }
            lambda = dot(&v, &mat_vec(&deflated, d, &v));
        }
        if !(norm > 1e-14 * scale) || lambda <= 0.0 {
            // Remaining spectrum is numerically zero.
            v = complement_vector(d, &components);
            lambda = 0.0;
        }
        orthogonalize(&mut v, &components);
        normalize(&mut v);
        fix_sign(&mut v);
        for i in 0..d {
            for j in 0..d {
                deflated[i * d + j] -= lambda * v[i] * v[j];
            }
        }
        eigenvalues.push(lambda.max(0.0));
        components.push(v);
    }

    let explained_ratio = eigenvalues
        .iter()
        .map(|&l| if trace > 0.0 { (l / trace).clamp(0.0, 1.0) } else { 0.0 })
        .collect();
    let projected: Vec<f64> = (0..n)
        .flat_map(|r| {
            let row = &centered[r * d..(r + 1) * d];
            components.iter().map(|c| dot(row, c)).collect::<Vec<_>>()
        })
        .collect();
    Ok(PcaResult {
        projected: Tensor::from_parts(vec![n, k], projected),
        explained_ratio,
        components,
        eigenvalues,
        mean,
    })
}
