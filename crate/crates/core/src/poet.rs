//! Double-POET covariance estimation.
//!
//! Three steps: principal components of the sample covariance give the global
//! part, principal components of each group's block of the remainder give the
//! local parts, and the leftover idiosyncratic matrix is thresholded.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::{default_k_max, eigenvalue_ratio_clipped, sample_covariance};
use crate::linalg::{min_eigenvalue_exceeds, sym_eigen, MatrixRole, SymMatrix};
use crate::panel::{GroupLabels, ReturnPanel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorCount {
    Auto,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalFactorCount {
    Auto,
    Uniform(usize),
    PerGroup(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResidualThreshold {
    /// Smallest correlation threshold that leaves the matrix positive definite.
    MinPd,
    /// Keep entries within the same sector only; if that is not positive
    /// definite, the min-PD rule is applied to the within-sector entries.
    Sector(GroupLabels),
    /// Keep the full residual.
    Keep,
}

#[derive(Debug, Clone)]
pub struct DoublePoetFit {
    pub global: SymMatrix,
    /// Block diagonal with respect to the labels.
    pub local: SymMatrix,
    pub idiosyncratic: SymMatrix,
    pub estimate: SymMatrix,
    pub r_c: usize,
    pub r_local: Vec<usize>,
    /// Correlation threshold chosen by the min-PD rule.
    pub threshold_constant: Option<f64>,
}

/// Double-POET estimate of the panel covariance.
pub fn double_poet_estimate(
    panel: &ReturnPanel,
    labels: &GroupLabels,
    r_c: FactorCount,
    r_local: &LocalFactorCount,
    threshold: &ResidualThreshold,
) -> Result<SymMatrix> {
    Ok(double_poet_fit(panel, labels, r_c, r_local, threshold)?.estimate)
}

pub fn double_poet_fit(
    panel: &ReturnPanel,
    labels: &GroupLabels,
    r_c: FactorCount,
    r_local: &LocalFactorCount,
    threshold: &ResidualThreshold,
) -> Result<DoublePoetFit> {
    let cov = sample_covariance(panel)?;
    double_poet_from_cov(&cov, panel.n_obs(), labels, r_c, r_local, threshold)
}

/// Double-POET from a precomputed sample covariance of `n_obs` rows.
pub fn double_poet_from_cov(
    cov: &SymMatrix,
    n_obs: usize,
    labels: &GroupLabels,
    r_c: FactorCount,
    r_local: &LocalFactorCount,
    threshold: &ResidualThreshold,
) -> Result<DoublePoetFit> {
    let p = cov.dim();
    if labels.len() != p {
        return Err(Error::dims(format!("{} labels for {p} assets", labels.len())));
    }
    let members = labels.members();
    let local_counts: Vec<Option<usize>> = match r_local {
        LocalFactorCount::Auto => vec![None; members.len()],
        LocalFactorCount::Uniform(r) => vec![Some(*r); members.len()],
        LocalFactorCount::PerGroup(v) => {
            if v.len() != members.len() {
                return Err(Error::dims(format!(
                    "{} local factor counts for {} groups",
                    v.len(),
                    members.len()
                )));
            }
            v.iter().map(|r| Some(*r)).collect()
        }
    };
    for (g, (m, r)) in members.iter().zip(&local_counts).enumerate() {
        if let Some(r) = r {
            if *r > m.len() {
                return Err(Error::invalid(format!(
                    "group {g} has {} assets but {r} local factors were requested",
                    m.len()
                )));
            }
        }
    }

    let eig = sym_eigen(cov)?;
    let r_c = match r_c {
        FactorCount::Fixed(r) if r >= p => {
            return Err(Error::invalid(format!("{r} global factors for {p} assets")));
        }
        FactorCount::Fixed(r) => r,
        FactorCount::Auto => eigenvalue_ratio_clipped(&eig.values, default_k_max(p, n_obs)),
    };
    let global = eig.leading_part(r_c);
    let remainder = cov.matrix() - &global;

    let mut local = DMatrix::<f64>::zeros(p, p);
    let mut r_used = Vec::with_capacity(members.len());
    for (idx, requested) in members.iter().zip(&local_counts) {
        let block = SymMatrix::from_lower(
            DMatrix::from_fn(idx.len(), idx.len(), |a, b| remainder[(idx[a], idx[b])]),
            MatrixRole::Covariance,
        )?;
        let be = sym_eigen(&block)?;
        let r = match requested {
            Some(r) => *r,
            None => eigenvalue_ratio_clipped(&be.values, 5.min(idx.len().saturating_sub(1))),
        };
        let part = be.leading_part(r);
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                local[(i, j)] = part[(a, b)];
            }
        }
        r_used.push(r);
    }

    let global = SymMatrix::from_lower(global, MatrixRole::Covariance)?;
    let local = SymMatrix::from_lower(local, MatrixRole::Covariance)?;
    let residual = SymMatrix::from_lower(remainder - local.matrix(), MatrixRole::Covariance)?;

    let (idiosyncratic, threshold_constant) = match threshold {
        ResidualThreshold::Keep => (residual, None),
        ResidualThreshold::Sector(sectors) => {
            let masked = sector_threshold(&residual, sectors)?;
            let margin = 1e-10 * masked.trace() / p as f64;
            if min_eigenvalue_exceeds(masked.matrix(), margin) {
                (masked, None)
            } else {
                let t = hard_threshold_min_pd(&masked)?;
                (t.matrix, Some(t.constant))
            }
        }
        ResidualThreshold::MinPd => {
            let t = hard_threshold_min_pd(&residual)?;
            (t.matrix, Some(t.constant))
        }
    };
    let estimate = SymMatrix::from_lower(
        global.matrix() + local.matrix() + idiosyncratic.matrix(),
        MatrixRole::Covariance,
    )?;
    Ok(DoublePoetFit {
        global,
        local,
        idiosyncratic,
        estimate,
        r_c,
        r_local: r_used,
        threshold_constant,
    })
}

#[derive(Debug, Clone)]
pub struct ThresholdedResidual {
    pub matrix: SymMatrix,
    pub constant: f64,
}

const MIN_PD_WIDTH: f64 = 1e-4;

/// Keeps off-diagonal `(i, j)` iff `|r_ij| > C √(r_ii r_jj)`, with `C` the
/// smallest value (to a bisection width of 1e-4) leaving the matrix positive
/// definite: minimum eigenvalue above `1e-10 · trace / p`.
pub fn hard_threshold_min_pd(residual: &SymMatrix) -> Result<ThresholdedResidual> {
    let p = residual.dim();
    let diag = residual.diagonal();
    if let Some(i) = diag.iter().position(|d| !(*d > 0.0)) {
        return Err(Error::invalid(format!(
            "residual diagonal {i} is not positive ({})",
            diag[i]
        )));
    }
    let sd: Vec<f64> = diag.iter().map(|d| d.sqrt()).collect();
    let mut corr = DMatrix::<f64>::zeros(p, p);
    let mut max_corr = 0.0_f64;
    for j in 0..p {
        for i in (j + 1)..p {
            let c = (residual.get(i, j) / (sd[i] * sd[j])).abs();
            corr[(i, j)] = c;
            corr[(j, i)] = c;
            max_corr = max_corr.max(c);
        }
    }
    let margin = 1e-10 * residual.trace() / p as f64;
    let apply = |c: f64| -> DMatrix<f64> {
        DMatrix::from_fn(p, p, |i, j| {
            if i == j || corr[(i, j)] > c {
                residual.get(i, j)
            } else {
                0.0
            }
        })
    };

    let at_zero = apply(0.0);
    if min_eigenvalue_exceeds(&at_zero, margin) {
        return Ok(ThresholdedResidual {
            matrix: SymMatrix::from_lower(at_zero, MatrixRole::Covariance)?,
            constant: 0.0,
        });
    }
    let diagonal = apply(max_corr);
    assert!(
        min_eigenvalue_exceeds(&diagonal, margin),
        "a positive diagonal is always positive definite"
    );
    let (mut lo, mut hi) = (0.0, max_corr);
    let mut best = diagonal;
    while hi - lo > MIN_PD_WIDTH {
        let mid = 0.5 * (lo + hi);
        let m = apply(mid);
        if min_eigenvalue_exceeds(&m, margin) {
            hi = mid;
            best = m;
        } else {
            lo = mid;
        }
    }
    Ok(ThresholdedResidual {
        matrix: SymMatrix::from_lower(best, MatrixRole::Covariance)?,
        constant: hi,
    })
}

/// Zeroes residual covariances between assets of different sectors.
pub fn sector_threshold(residual: &SymMatrix, sectors: &GroupLabels) -> Result<SymMatrix> {
    let p = residual.dim();
    if sectors.len() != p {
        return Err(Error::invalid(format!(
            "{} sector labels for {p} assets",
            sectors.len()
        )));
    }
    SymMatrix::from_fn(p, residual.role(), |i, j| {
        if i == j || sectors.group_of(i) == sectors.group_of(j) {
            residual.get(i, j)
        } else {
            0.0
        }
    })
}
