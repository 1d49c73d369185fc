//! Sample covariance, factor-count selection and principal-component removal.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{sym_eigen, EigenDecomposition, MatrixRole, SymMatrix};
use crate::panel::ReturnPanel;

/// Column-demeaned cross-product divided by `T`.
pub fn sample_covariance(panel: &ReturnPanel) -> Result<SymMatrix> {
    sample_covariance_of(panel.values())
}

pub(crate) fn sample_covariance_of(values: &DMatrix<f64>) -> Result<SymMatrix> {
    let t = values.nrows();
    if t < 2 {
        return Err(Error::invalid(format!(
            "sample covariance needs at least 2 observations, got {t}"
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite value in panel"));
    }
    let mut centered = values.clone();
    for mut col in centered.column_iter_mut() {
        let mean = col.sum() / t as f64;
        col.add_scalar_mut(-mean);
    }
    let cov = centered.tr_mul(&centered) / t as f64;
    SymMatrix::from_lower(cov, MatrixRole::Covariance)
}

/// Default upper bound for the eigenvalue-ratio search:
/// `floor(min(p, T) / 3)` capped at 10, and at least 1.
pub fn default_k_max(p: usize, t: usize) -> usize {
    (p.min(t) / 3).clamp(1, 10)
}

/// `argmax_{1 ≤ k ≤ k_max} λ_k / λ_{k+1}` (1-indexed), ties to the smaller `k`.
pub fn eigenvalue_ratio(eigs: &[f64], k_max: usize) -> Result<usize> {
    if k_max == 0 {
        return Err(Error::invalid("k_max must be at least 1"));
    }
    if eigs.len() < k_max + 1 {
        return Err(Error::invalid(format!(
            "eigenvalue ratio with k_max = {k_max} needs {} eigenvalues, got {}",
            k_max + 1,
            eigs.len()
        )));
    }
    if let Some(k) = eigs[..=k_max].iter().position(|&v| !(v > 0.0)) {
        return Err(Error::invalid(format!(
            "eigenvalue {} is not positive ({})",
            k + 1,
            eigs[k]
        )));
    }
    let mut best = 1;
    let mut best_ratio = f64::NEG_INFINITY;
    for k in 1..=k_max {
        let ratio = eigs[k - 1] / eigs[k];
        if ratio > best_ratio {
            best_ratio = ratio;
            best = k;
        }
    }
    Ok(best)
}

/// Eigenvalue-ratio count on an already-decomposed matrix, shrinking `k_max`
/// so that only strictly positive eigenvalues enter the ratios. Returns 0 when
/// fewer than two eigenvalues are positive.
pub fn eigenvalue_ratio_clipped(eigs: &[f64], k_max: usize) -> usize {
    let scale = eigs.first().copied().unwrap_or(0.0).abs().max(f64::MIN_POSITIVE);
    let positive = eigs.iter().take_while(|&&v| v > 1e-12 * scale).count();
    let k = k_max.min(positive.saturating_sub(1));
    if k == 0 {
        return 0;
    }
    eigenvalue_ratio(eigs, k).unwrap_or(0)
}

/// Covariance with its leading principal components removed.
#[derive(Debug, Clone)]
pub struct FactorAdjusted {
    pub adjusted: SymMatrix,
    /// Removed eigenvalues, descending.
    pub top_values: Vec<f64>,
    /// `p × r`, column `k` pairs with `top_values[k]`.
    pub top_vectors: DMatrix<f64>,
    /// Full decomposition of the input, kept for callers that need more.
    pub eigen: EigenDecomposition,
}

impl FactorAdjusted {
    /// The removed rank-`r` part `Σ ν_k η_k η_kᵀ`.
    pub fn removed_part(&self) -> DMatrix<f64> {
        self.eigen.leading_part(self.top_values.len())
    }
}

/// `cov − Σ_{k<r} ν_k η_k η_kᵀ`, together with the removed eigenpairs.
pub fn factor_adjust(cov: &SymMatrix, r: usize) -> Result<FactorAdjusted> {
    let eigen = sym_eigen(cov)?;
    factor_adjust_with(cov, eigen, r)
}

/// As [`factor_adjust`], reusing a decomposition of `cov`.
pub fn factor_adjust_with(cov: &SymMatrix, eigen: EigenDecomposition, r: usize) -> Result<FactorAdjusted> {
    let p = cov.dim();
    if r >= p {
        return Err(Error::invalid(format!(
            "cannot remove {r} factors from a {p}-dimensional matrix"
        )));
    }
    let removed = eigen.leading_part(r);
    let adjusted = SymMatrix::from_lower(cov.matrix() - removed, cov.role())?;
    Ok(FactorAdjusted {
        adjusted,
        top_values: eigen.values[..r].to_vec(),
        top_vectors: eigen.vectors.columns(0, r).into_owned(),
        eigen,
    })
}
