//! Financial adjacency matrices, thresholding and edge densities.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::factor_adjust;
use crate::linalg::SymMatrix;
use crate::panel::GroupLabels;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjacencySource {
    Ifam,
    Cov,
    GlassoSigned,
}

/// Symmetric weighted adjacency with zero diagonal. Entries are nonnegative
/// unless `signed`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedAdjacency {
    entries: DMatrix<f64>,
    signed: bool,
    source: AdjacencySource,
}

impl WeightedAdjacency {
    pub fn new(entries: DMatrix<f64>, signed: bool, source: AdjacencySource) -> Result<Self> {
        let p = entries.nrows();
        if entries.ncols() != p || p == 0 {
            return Err(Error::dims("adjacency must be square and non-empty"));
        }
        for i in 0..p {
            if entries[(i, i)] != 0.0 {
                return Err(Error::invalid(format!("adjacency diagonal {i} is nonzero")));
            }
            for j in 0..i {
                let v = entries[(i, j)];
                if v != entries[(j, i)] || !v.is_finite() {
                    return Err(Error::invalid(format!(
                        "adjacency entry ({i}, {j}) is not symmetric and finite"
                    )));
                }
                if !signed && v < 0.0 {
                    return Err(Error::invalid(format!(
                        "unsigned adjacency has negative entry at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self {
            entries,
            signed,
            source,
        })
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn is_signed(&self) -> bool {
        self.signed
    }

    pub fn source(&self) -> AdjacencySource {
        self.source
    }

    /// Same graph with assets reordered by `idx`.
    pub fn permuted(&self, idx: &[usize]) -> WeightedAdjacency {
        let entries = DMatrix::from_fn(idx.len(), idx.len(), |a, b| self.entries[(idx[a], idx[b])]);
        WeightedAdjacency {
            entries,
            signed: self.signed,
            source: self.source,
        }
    }
}

/// `A_ij = −Ω_ij` where `Ω_ij < 0`, else 0.
pub fn build_ifam(precision: &SymMatrix) -> Result<WeightedAdjacency> {
    let p = precision.dim();
    check_positive_diag(&precision.diagonal())?;
    let entries = DMatrix::from_fn(p, p, |i, j| {
        let v = precision.get(i, j);
        if i != j && v < 0.0 {
            -v
        } else {
            0.0
        }
    });
    WeightedAdjacency::new(entries, false, AdjacencySource::Ifam)
}

fn check_positive_diag(d: &[f64]) -> Result<()> {
    if let Some(i) = d.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::invalid(format!(
            "normalising diagonal entry {i} is not positive ({})",
            d[i]
        )));
    }
    Ok(())
}

/// `D^{-1/2} A D^{-1/2}` with `D = diag(scale_diag)`.
pub fn normalize_adjacency(a: &WeightedAdjacency, scale_diag: &[f64]) -> Result<WeightedAdjacency> {
    let p = a.dim();
    if scale_diag.len() != p {
        return Err(Error::dims(format!(
            "{} diagonal entries for a {p}-asset adjacency",
            scale_diag.len()
        )));
    }
    check_positive_diag(scale_diag)?;
    let entries = DMatrix::from_fn(p, p, |i, j| a.entries[(i, j)] / (scale_diag[i] * scale_diag[j]).sqrt());
    WeightedAdjacency::new(entries, a.signed, a.source)
}

/// Normalised IFAM of a precision estimate.
pub fn normalized_ifam(precision: &SymMatrix) -> Result<WeightedAdjacency> {
    normalize_adjacency(&build_ifam(precision)?, &precision.diagonal())
}

/// Inputs for the benchmark adjacency matrices.
#[derive(Debug, Clone, Copy)]
pub enum BenchmarkInput<'a> {
    /// Absolute off-diagonals of the sample covariance with `r_c` principal
    /// components removed, scaled by that matrix's own diagonal.
    Cov { cov: &'a SymMatrix, r_c: usize },
    /// Precision with negated off-diagonals, kept signed, scaled by its
    /// diagonal.
    GlassoSigned { precision: &'a SymMatrix },
}

/// Normalised benchmark adjacency.
pub fn build_benchmark_adjacency(input: BenchmarkInput<'_>) -> Result<WeightedAdjacency> {
    match input {
        BenchmarkInput::Cov { cov, r_c } => {
            let resid = factor_adjust(cov, r_c)?.adjusted;
            let p = resid.dim();
            let entries = DMatrix::from_fn(p, p, |i, j| if i == j { 0.0 } else { resid.get(i, j).abs() });
            let a = WeightedAdjacency::new(entries, false, AdjacencySource::Cov)?;
            normalize_adjacency(&a, &resid.diagonal())
        }
        BenchmarkInput::GlassoSigned { precision } => {
            let p = precision.dim();
            check_positive_diag(&precision.diagonal())?;
            let entries = DMatrix::from_fn(p, p, |i, j| if i == j { 0.0 } else { -precision.get(i, j) });
            let a = WeightedAdjacency::new(entries, true, AdjacencySource::GlassoSigned)?;
            normalize_adjacency(&a, &precision.diagonal())
        }
    }
}

/// 0/1 adjacency, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryAdjacency {
    p: usize,
    bits: Vec<bool>,
}

impl BinaryAdjacency {
    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.p + j]
    }

    pub fn edge_count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn from_fn(p: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let bits = (0..p * p).map(|k| f(k / p, k % p)).collect();
        Self { p, bits }
    }
}

/// `1(A_ij > τ)`, strict.
pub fn threshold_binary(a: &WeightedAdjacency, tau: f64) -> BinaryAdjacency {
    BinaryAdjacency::from_fn(a.dim(), |i, j| a.entries[(i, j)] > tau)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupDensity {
    pub within: f64,
    pub between: f64,
}

/// Per-group edge densities over `G × G` and `G × Gᶜ`; both denominators
/// count every ordered pair, diagonal pairs included.
pub fn edge_densities(binary: &BinaryAdjacency, labels: &GroupLabels) -> Result<Vec<GroupDensity>> {
    let p = binary.dim();
    if labels.len() != p {
        return Err(Error::dims(format!(
            "{} labels for a {p}-asset graph",
            labels.len()
        )));
    }
    let sizes = labels.group_sizes();
    if sizes.iter().any(|&s| s == 0) {
        return Err(Error::invalid("empty group"));
    }
    let k = labels.num_groups();
    let mut within = vec![0usize; k];
    let mut between = vec![0usize; k];
    for i in 0..p {
        let gi = labels.group_of(i);
        for j in 0..p {
            if binary.get(i, j) {
                if labels.group_of(j) == gi {
                    within[gi] += 1;
                } else {
                    between[gi] += 1;
                }
            }
        }
    }
    Ok((0..k)
        .map(|g| {
            let n = sizes[g] as f64;
            let rest = (p - sizes[g]) as f64;
            GroupDensity {
                within: within[g] as f64 / (n * n),
                between: if rest > 0.0 { between[g] as f64 / (n * rest) } else { 0.0 },
            }
        })
        .collect())
}

/// Mean over replications of the smallest within-group density and of the
/// largest between-group density.
pub fn summarize_densities(replications: &[Vec<GroupDensity>]) -> Result<GroupDensity> {
    if replications.is_empty() {
        return Err(Error::invalid("no replications to summarise"));
    }
    let mut within = 0.0;
    let mut between = 0.0;
    for rep in replications {
        if rep.is_empty() {
            return Err(Error::invalid("replication without groups"));
        }
        within += rep.iter().map(|d| d.within).fold(f64::INFINITY, f64::min);
        between += rep.iter().map(|d| d.between).fold(f64::NEG_INFINITY, f64::max);
    }
    let n = replications.len() as f64;
    Ok(GroupDensity {
        within: within / n,
        between: between / n,
    })
}

/// `n` evenly spaced thresholds from 0 to 1 inclusive.
pub fn default_tau_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|k| k as f64 / (n - 1) as f64).collect(),
    }
}
