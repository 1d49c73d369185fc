//! Dense symmetric linear algebra shared by every estimator.
//!
//! [`SymMatrix`] is the common currency: a square matrix whose lower triangle
//! is authoritative and mirrored on construction, so `m[(i, j)] == m[(j, i)]`
//! holds bit-for-bit.

use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What a symmetric matrix represents. Carried for diagnostics only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixRole {
    Covariance,
    Precision,
    Adjacency,
    Generic,
}

impl fmt::Display for MatrixRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MatrixRole::Covariance => "covariance",
            MatrixRole::Precision => "precision",
            MatrixRole::Adjacency => "adjacency",
            MatrixRole::Generic => "generic",
        };
        f.write_str(s)
    }
}

/// Dense symmetric matrix with a role tag.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    data: DMatrix<f64>,
    role: MatrixRole,
}

impl SymMatrix {
    /// Builds from a square matrix, mirroring the lower triangle onto the
    /// upper one.
    pub fn from_lower(mut m: DMatrix<f64>, role: MatrixRole) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::dims(format!(
                "expected a square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.nrows() == 0 {
            return Err(Error::invalid("matrix dimension must be at least 1"));
        }
        let p = m.nrows();
        for j in 0..p {
            for i in j..p {
                let v = m[(i, j)];
                if !v.is_finite() {
                    return Err(Error::invalid(format!(
                        "non-finite entry at ({i}, {j}) of {role} matrix"
                    )));
                }
                m[(j, i)] = v;
            }
        }
        Ok(Self { data: m, role })
    }

    /// Builds from a square matrix by averaging it with its transpose.
    pub fn from_average(m: DMatrix<f64>, role: MatrixRole) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::dims(format!(
                "expected a square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let avg = (&m + m.transpose()) * 0.5;
        Self::from_lower(avg, role)
    }

    /// Builds from row-major nested slices; only the lower triangle is read.
    pub fn from_rows(rows: &[Vec<f64>], role: MatrixRole) -> Result<Self> {
        let p = rows.len();
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::dims("rows of unequal length"));
        }
        Self::from_lower(DMatrix::from_fn(p, p, |i, j| rows[i][j]), role)
    }

    pub fn from_fn(p: usize, role: MatrixRole, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        Self::from_lower(DMatrix::from_fn(p, p, |i, j| if i >= j { f(i, j) } else { 0.0 }), role)
    }

    pub fn identity(p: usize, role: MatrixRole) -> Self {
        Self {
            data: DMatrix::identity(p, p),
            role,
        }
    }

    pub fn from_diagonal(diag: &[f64], role: MatrixRole) -> Result<Self> {
        let d = DVector::from_column_slice(diag);
        Self::from_lower(DMatrix::from_diagonal(&d), role)
    }

    pub fn zeros(p: usize, role: MatrixRole) -> Self {
        Self {
            data: DMatrix::zeros(p, p),
            role,
        }
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn role(&self) -> MatrixRole {
        self.role
    }

    pub fn with_role(mut self, role: MatrixRole) -> Self {
        self.role = role;
        self
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.data[(i, i)]).collect()
    }

    pub fn trace(&self) -> f64 {
        self.data.trace()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Principal submatrix on `idx` (in the given order).
    pub fn submatrix(&self, idx: &[usize]) -> SymMatrix {
        let data = DMatrix::from_fn(idx.len(), idx.len(), |a, b| self.data[(idx[a], idx[b])]);
        SymMatrix {
            data,
            role: self.role,
        }
    }

    /// `self + other`, keeping this matrix's role.
    pub fn add(&self, other: &SymMatrix) -> Result<SymMatrix> {
        check_same_dim(self, other)?;
        Ok(SymMatrix {
            data: &self.data + &other.data,
            role: self.role,
        })
    }

    pub fn sub(&self, other: &SymMatrix) -> Result<SymMatrix> {
        check_same_dim(self, other)?;
        Ok(SymMatrix {
            data: &self.data - &other.data,
            role: self.role,
        })
    }

    pub fn scale(&self, s: f64) -> SymMatrix {
        SymMatrix {
            data: &self.data * s,
            role: self.role,
        }
    }

    pub fn quadratic_form(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::dims(format!(
                "vector of length {} against matrix of dim {}",
                x.len(),
                self.dim()
            )));
        }
        let v = DVector::from_column_slice(x);
        Ok(v.dot(&(&self.data * &v)))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

fn check_same_dim(a: &SymMatrix, b: &SymMatrix) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::dims(format!("{} vs {}", a.dim(), b.dim())));
    }
    Ok(())
}

/// Eigenpairs sorted by descending eigenvalue.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition {
    pub values: Vec<f64>,
    /// Column `k` is the eigenvector of `values[k]`.
    pub vectors: DMatrix<f64>,
}

impl EigenDecomposition {
    /// `sum_{k < r} values[k] * v_k v_kᵀ`.
    pub fn leading_part(&self, r: usize) -> DMatrix<f64> {
        let p = self.vectors.nrows();
        let mut out = DMatrix::zeros(p, p);
        for k in 0..r {
            let v = self.vectors.column(k);
            out.ger(self.values[k], &v, &v, 1.0);
        }
        out
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.leading_part(self.values.len())
    }
}

/// Full spectral decomposition of a symmetric matrix.
///
/// Eigenvalues are sorted non-increasing. Each eigenvector is signed so that
/// its largest-magnitude component (first one on ties) is positive, which
/// makes downstream outputs reproducible byte for byte.
pub fn sym_eigen(m: &SymMatrix) -> Result<EigenDecomposition> {
    let p = m.dim();
    let eig = SymmetricEigen::try_new(m.matrix().clone(), f64::EPSILON, 200 * p.max(1))
        .ok_or(Error::EigenNotConverged {
            role: m.role(),
            dim: p,
        })?;

    let mut order: Vec<usize> = (0..p).collect();
    // Stable sort keeps the solver's order for exactly equal eigenvalues.
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let values: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = DMatrix::zeros(p, p);
    for (dst, &src) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(src);
        let mut lead = 0;
        let mut lead_abs = -1.0;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > lead_abs {
                lead_abs = v.abs();
                lead = i;
            }
        }
        let sign = if col[lead] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..p {
            vectors[(i, dst)] = sign * col[i];
        }
    }
    Ok(EigenDecomposition { values, vectors })
}

/// Lower Cholesky factor `L` with `L Lᵀ = M`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: DMatrix<f64>,
}

impl Cholesky {
    pub fn new(m: &SymMatrix) -> Result<Self> {
        Self::factor(m.matrix(), m.role())
    }

    /// Factors an arbitrary square matrix, reading only its lower triangle.
    pub fn factor(m: &DMatrix<f64>, role: MatrixRole) -> Result<Self> {
        let p = m.nrows();
        let mut l = DMatrix::<f64>::zeros(p, p);
        for j in 0..p {
            let mut d = m[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { role, dim: p, pivot: j });
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in (j + 1)..p {
                let mut s = m[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(Self { l })
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// Solves `M X = B` in place.
    pub fn solve_mut(&self, b: &mut DMatrix<f64>) {
        let p = self.l.nrows();
        let l = &self.l;
        for c in 0..b.ncols() {
            // forward: L y = b
            for i in 0..p {
                let mut s = b[(i, c)];
                for k in 0..i {
                    s -= l[(i, k)] * b[(k, c)];
                }
                b[(i, c)] = s / l[(i, i)];
            }
            // backward: Lᵀ x = y
            for i in (0..p).rev() {
                let mut s = b[(i, c)];
                for k in (i + 1)..p {
                    s -= l[(k, i)] * b[(k, c)];
                }
                b[(i, c)] = s / l[(i, i)];
            }
        }
    }

    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let mut m = DMatrix::from_column_slice(b.len(), 1, b);
        self.solve_mut(&mut m);
        m.as_slice().to_vec()
    }

    pub fn inverse(&self, role: MatrixRole) -> Result<SymMatrix> {
        let p = self.l.nrows();
        // L⁻¹ by forward substitution, then M⁻¹ = L⁻ᵀ L⁻¹.
        let mut linv = DMatrix::<f64>::zeros(p, p);
        for c in 0..p {
            linv[(c, c)] = 1.0 / self.l[(c, c)];
            for i in (c + 1)..p {
                let mut s = 0.0;
                for k in c..i {
                    s -= self.l[(i, k)] * linv[(k, c)];
                }
                linv[(i, c)] = s / self.l[(i, i)];
            }
        }
        let inv = linv.transpose() * &linv;
        SymMatrix::from_lower(inv, role)
    }
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(m: &SymMatrix) -> Result<SymMatrix> {
    Cholesky::new(m)?.inverse(m.role())
}

/// True when `M - margin·I` admits a Cholesky factorisation, i.e. the smallest
/// eigenvalue exceeds `margin`.
pub fn min_eigenvalue_exceeds(m: &DMatrix<f64>, margin: f64) -> bool {
    let mut shifted = m.clone();
    for i in 0..shifted.nrows() {
        shifted[(i, i)] -= margin;
    }
    Cholesky::factor(&shifted, MatrixRole::Generic).is_ok()
}

/// Estimation error of `est` against `truth`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatrixNorms {
    pub max: f64,
    pub frobenius: f64,
    pub relative_frobenius: f64,
}

/// Max, Frobenius and relative Frobenius error,
/// the last being `p^{-1/2} ‖T^{-1/2} E T^{-1/2} − I‖_F`.
pub fn matrix_norms(est: &SymMatrix, truth: &SymMatrix) -> Result<MatrixNorms> {
    check_same_dim(est, truth)?;
    let p = truth.dim();
    let diff = est.matrix() - truth.matrix();
    let max = diff.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let frobenius = diff.norm();

    Cholesky::new(truth)?;
    let eig = sym_eigen(truth)?;
    if eig.values.iter().any(|&v| v <= 0.0) {
        return Err(Error::NotPositiveDefinite {
            role: truth.role(),
            dim: p,
            pivot: p - 1,
        });
    }
    let mut scaled = eig.vectors.clone();
    for (k, v) in eig.values.iter().enumerate() {
        scaled.column_mut(k).scale_mut(v.powf(-0.5));
    }
    let inv_sqrt = &scaled * eig.vectors.transpose();
    let mut rel = &inv_sqrt * est.matrix() * &inv_sqrt;
    for i in 0..p {
        rel[(i, i)] -= 1.0;
    }
    let relative_frobenius = rel.norm() / (p as f64).sqrt();
    Ok(MatrixNorms {
        max,
        frobenius,
        relative_frobenius,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sym(rows: &[&[f64]]) -> SymMatrix {
        let v: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        SymMatrix::from_rows(&v, MatrixRole::Generic).unwrap()
    }

    fn random_spd(p: usize, seed: u64) -> SymMatrix {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
        let m = &a * a.transpose() + DMatrix::identity(p, p) * 0.5;
        SymMatrix::from_lower(m, MatrixRole::Covariance).unwrap()
    }

    #[test]
    fn eigen_of_diagonal() {
        let e = sym_eigen(&sym(&[&[3.0, 0.0], &[0.0, 1.0]])).unwrap();
        assert_eq!(e.values, vec![3.0, 1.0]);
        assert_eq!(e.vectors, DMatrix::identity(2, 2));
    }

    #[test]
    fn eigen_closed_form_2x2() {
        let e = sym_eigen(&sym(&[&[2.0, 1.0], &[1.0, 2.0]])).unwrap();
        assert!((e.values[0] - 3.0).abs() < 1e-14);
        assert!((e.values[1] - 1.0).abs() < 1e-14);
        let s = 0.5_f64.sqrt();
        assert!((e.vectors[(0, 0)] - s).abs() < 1e-14);
        assert!((e.vectors[(1, 0)] - s).abs() < 1e-14);
        // largest component (tie → first) positive
        assert!((e.vectors[(0, 1)] - s).abs() < 1e-14);
        assert!((e.vectors[(1, 1)] + s).abs() < 1e-14);
    }

    #[test]
    fn eigen_reconstructs_random_spd() {
        let m = random_spd(8, 3);
        let e = sym_eigen(&m).unwrap();
        let resid = (e.reconstruct() - m.matrix()).amax();
        assert!(resid <= 1e-8 * m.max_abs().max(1.0), "{resid}");
        let orth = (e.vectors.transpose() * &e.vectors - DMatrix::identity(8, 8)).amax();
        assert!(orth <= 1e-10);
        assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
        assert!(e.values.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn eigen_is_deterministic() {
        let m = random_spd(12, 9);
        let a = sym_eigen(&m).unwrap();
        let b = sym_eigen(&m).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn inverse_examples() {
        let i = SymMatrix::identity(3, MatrixRole::Covariance);
        assert_eq!(spd_inverse(&i).unwrap().matrix(), i.matrix());

        let d = spd_inverse(&sym(&[&[4.0, 0.0], &[0.0, 1.0]])).unwrap();
        assert!((d.get(0, 0) - 0.25).abs() < 1e-15);
        assert!((d.get(1, 1) - 1.0).abs() < 1e-15);
        assert_eq!(d.get(0, 1), 0.0);

        let m = spd_inverse(&sym(&[&[2.0, 1.0], &[1.0, 2.0]])).unwrap();
        let expect = [[2.0 / 3.0, -1.0 / 3.0], [-1.0 / 3.0, 2.0 / 3.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((m.get(i, j) - expect[i][j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn inverse_reports_failing_pivot() {
        let m = sym(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 2.0], &[0.0, 2.0, 1.0]]);
        match spd_inverse(&m) {
            Err(Error::NotPositiveDefinite { pivot, dim, .. }) => {
                assert_eq!(pivot, 2);
                assert_eq!(dim, 3);
            }
            other => panic!("expected pivot failure, got {other:?}"),
        }
    }

    #[test]
    fn double_inverse_round_trips() {
        let m = random_spd(10, 4);
        let back = spd_inverse(&spd_inverse(&m).unwrap()).unwrap();
        assert!((back.matrix() - m.matrix()).amax() < 1e-6);
        let prod = m.matrix() * spd_inverse(&m).unwrap().matrix();
        assert!((prod - DMatrix::identity(10, 10)).amax() < 1e-8);
    }

    #[test]
    fn norms_of_identical_inputs_vanish() {
        let m = random_spd(5, 1);
        let n = matrix_norms(&m, &m).unwrap();
        assert!(n.max == 0.0 && n.frobenius == 0.0);
        assert!(n.relative_frobenius < 1e-12);
    }

    #[test]
    fn norms_analytic_shift() {
        let truth = SymMatrix::identity(2, MatrixRole::Covariance);
        let est = sym(&[&[1.1, 0.0], &[0.0, 1.1]]);
        let n = matrix_norms(&est, &truth).unwrap();
        assert!((n.max - 0.1).abs() < 1e-12);
        assert!((n.frobenius - 0.1 * 2f64.sqrt()).abs() < 1e-12);
        assert!((n.relative_frobenius - 0.1).abs() < 1e-12);
    }

    #[test]
    fn norms_match_direct_recomputation() {
        let truth = random_spd(6, 11);
        let est = random_spd(6, 12);
        let n = matrix_norms(&est, &truth).unwrap();

        let mut max = 0.0_f64;
        let mut fro = 0.0;
        for i in 0..6 {
            for j in 0..6 {
                let d = est.get(i, j) - truth.get(i, j);
                max = max.max(d.abs());
                fro += d * d;
            }
        }
        assert!((n.max - max).abs() < 1e-14);
        assert!((n.frobenius - fro.sqrt()).abs() < 1e-12);

        // ‖T^{-1/2} E T^{-1/2} − I‖_F² = tr((T⁻¹E − I)²), which avoids the square root.
        let tinv = spd_inverse(&truth).unwrap();
        let mut a = tinv.matrix() * est.matrix();
        for i in 0..6 {
            a[(i, i)] -= 1.0;
        }
        let rel = ((&a * &a).trace() / 6.0).sqrt();
        assert!((n.relative_frobenius - rel).abs() < 1e-9);
    }

    #[test]
    fn relative_norm_requires_spd_truth() {
        let truth = sym(&[&[1.0, 2.0], &[2.0, 1.0]]);
        assert!(matches!(
            matrix_norms(&truth, &truth),
            Err(Error::NotPositiveDefinite { .. })
        ));
        let a = SymMatrix::identity(2, MatrixRole::Generic);
        let b = SymMatrix::identity(3, MatrixRole::Generic);
        assert!(matches!(matrix_norms(&a, &b), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn lower_triangle_is_authoritative() {
        let m = SymMatrix::from_lower(
            DMatrix::from_row_slice(2, 2, &[1.0, 9.0, 2.0, 3.0]),
            MatrixRole::Generic,
        )
        .unwrap();
        assert_eq!(m.get(0, 1), 2.0);
        assert!(SymMatrix::from_lower(DMatrix::from_element(2, 2, f64::NAN), MatrixRole::Generic).is_err());
    }
}
