//! Sparse precision estimation.
//!
//! The graphical lasso maximises `log det Ω − tr(SΩ) − ρ‖Ω‖₁` (diagonal
//! included) by block coordinate descent on the covariance `W = Ω⁻¹`: each
//! column of `W` is refreshed from a lasso regression of that column on the
//! others. The factor-adjusted estimator runs it on a covariance with the
//! leading principal components removed and puts the low-rank part back with
//! the Sherman-Morrison-Woodbury identity.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::factor_adjust;
use crate::linalg::{Cholesky, MatrixRole, SymMatrix};
use crate::panel::GroupLabels;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlassoSettings {
    pub rho: f64,
    /// Stop once no entry of `W` moves more than this in a sweep.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl GlassoSettings {
    pub fn new(rho: f64) -> Self {
        Self {
            rho,
            ..Self::default()
        }
    }
}

impl Default for GlassoSettings {
    fn default() -> Self {
        Self {
            rho: 0.0,
            tol: 1e-6,
            max_sweeps: 500,
        }
    }
}

/// Solver state that can seed a solve at a nearby penalty.
#[derive(Debug, Clone)]
pub struct GlassoState {
    /// Current covariance iterate `W`.
    w: DMatrix<f64>,
    /// Column `j` holds the lasso coefficients of column `j` (entry `j` unused).
    beta: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct GlassoSolution {
    pub precision: SymMatrix,
    pub sweeps: usize,
    pub last_delta: f64,
    /// `log det W` after each sweep. Block coordinate ascent on the dual never
    /// decreases it.
    pub dual_objective: Vec<f64>,
    pub state: Option<GlassoState>,
}

/// Penalised maximum-likelihood precision matrix.
pub fn glasso_solve(cov: &SymMatrix, settings: &GlassoSettings) -> Result<SymMatrix> {
    Ok(glasso_solve_detailed(cov, settings, None, false)?.precision)
}

/// As [`glasso_solve`] with an optional warm start and per-sweep dual trace.
pub fn glasso_solve_detailed(
    cov: &SymMatrix,
    settings: &GlassoSettings,
    warm: Option<&GlassoState>,
    trace: bool,
) -> Result<GlassoSolution> {
    let p = cov.dim();
    let rho = settings.rho;
    if !(rho >= 0.0) || !rho.is_finite() {
        return Err(Error::invalid(format!("penalty must be non-negative, got {rho}")));
    }
    if !(settings.tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    if let Some(i) = (0..p).position(|i| !(cov.get(i, i) > 0.0)) {
        return Err(Error::invalid(format!(
            "covariance diagonal must be positive (entry {i} is {})",
            cov.get(i, i)
        )));
    }

    // Unpenalised optimum is the plain inverse.
    if rho == 0.0 {
        let precision = Cholesky::new(cov)?.inverse(MatrixRole::Precision)?;
        return Ok(GlassoSolution {
            precision,
            sweeps: 0,
            last_delta: 0.0,
            dual_objective: Vec::new(),
            state: None,
        });
    }

    let s = cov.matrix();
    let (mut w, mut beta) = match warm {
        Some(st) if st.w.nrows() == p => (st.w.clone(), st.beta.clone()),
        _ => (s.clone(), DMatrix::zeros(p, p)),
    };
    for i in 0..p {
        w[(i, i)] = s[(i, i)] + rho;
    }

    let inner_tol = settings.tol / 10.0;
    let inner_max = 10_000;
    let mut v = vec![0.0; p];
    let mut dual_objective = Vec::new();
    let mut last_delta = f64::INFINITY;
    let mut sweeps = 0;

    if p > 1 {
        while sweeps < settings.max_sweeps {
            sweeps += 1;
            let mut delta = 0.0_f64;
            for j in 0..p {
                // v = W₁₁ β over k ≠ j
                for k in 0..p {
                    v[k] = 0.0;
                }
                for l in (0..p).filter(|&l| l != j) {
                    let b = beta[(l, j)];
                    if b != 0.0 {
                        for k in 0..p {
                            v[k] += w[(k, l)] * b;
                        }
                    }
                }
                // the closed-form step is tried once a pass leaves the support
                // alone, backing off after each failure
                let (mut next_exact, mut gap) = (0, 1);
                for pass in 0..inner_max {
                    let mut max_change = 0.0_f64;
                    let mut support_moved = false;
                    for k in (0..p).filter(|&k| k != j) {
                        let old = beta[(k, j)];
                        let wkk = w[(k, k)];
                        let r = s[(k, j)] - (v[k] - wkk * old);
                        let new = soft_threshold(r, rho) / wkk;
                        if new != old {
                            let d = new - old;
                            for l in 0..p {
                                v[l] += d * w[(l, k)];
                            }
                            beta[(k, j)] = new;
                            max_change = max_change.max(d.abs());
                            support_moved |= old == 0.0 || new == 0.0;
                        }
                    }
                    if max_change < inner_tol {
                        break;
                    }
                    if !support_moved && pass >= next_exact {
                        if exact_lasso_step(&w, s, &mut beta, &mut v, j, rho) {
                            break;
                        }
                        next_exact = pass + gap;
                        gap *= 2;
                    }
                }
                for k in (0..p).filter(|&k| k != j) {
                    delta = delta.max((v[k] - w[(k, j)]).abs());
                    w[(k, j)] = v[k];
                    w[(j, k)] = v[k];
                }
            }
            if trace {
                let ld = Cholesky::factor(&w, MatrixRole::Covariance)
                    .map(|c| c.log_det())
                    .unwrap_or(f64::NEG_INFINITY);
                dual_objective.push(ld);
            }
            last_delta = delta;
            if delta < settings.tol {
                break;
            }
        }
        if last_delta >= settings.tol {
            return Err(Error::GlassoNotConverged { sweeps, last_delta });
        }
    } else {
        last_delta = 0.0;
    }

    // Ω from the regression coefficients: ω_jj = 1/(w_jj − w₁₂ᵀβ), ω₁₂ = −β ω_jj.
    let mut omega = DMatrix::<f64>::zeros(p, p);
    for j in 0..p {
        let mut dot = 0.0;
        for k in (0..p).filter(|&k| k != j) {
            dot += w[(k, j)] * beta[(k, j)];
        }
        let ojj = 1.0 / (w[(j, j)] - dot);
        if !(ojj > 0.0) || !ojj.is_finite() {
            return Err(Error::Numerical(format!(
                "graphical lasso produced a non-positive precision diagonal at {j}"
            )));
        }
        omega[(j, j)] = ojj;
        for k in (0..p).filter(|&k| k != j) {
            omega[(k, j)] = -beta[(k, j)] * ojj;
        }
    }
    let precision = SymMatrix::from_average(omega, MatrixRole::Precision)?;
    Ok(GlassoSolution {
        precision,
        sweeps,
        last_delta,
        dual_objective,
        state: Some(GlassoState { w, beta }),
    })
}

/// Solves the column-`j` lasso on the current support and signs in closed
/// form, `W_AA β_A = s_A − ρ sign(β_A)`. When that flips a sign, `β` moves to
/// the first zero crossing on the way (the objective falls along the whole
/// segment), the crossing coordinate leaves the support and the solve is
/// repeated. Returns whether the result also satisfies the optimality
/// conditions off the support.
fn exact_lasso_step(
    w: &DMatrix<f64>,
    s: &DMatrix<f64>,
    beta: &mut DMatrix<f64>,
    v: &mut [f64],
    j: usize,
    rho: f64,
) -> bool {
    let p = w.nrows();
    let mut active: Vec<usize> = (0..p).filter(|&k| k != j && beta[(k, j)] != 0.0).collect();
    loop {
        let n = active.len();
        if n == 0 {
            break;
        }
        let mut x = nalgebra::DVector::from_fn(n, |a, _| {
            let k = active[a];
            s[(k, j)] - rho * beta[(k, j)].signum()
        });
        let sub = DMatrix::from_fn(n, n, |a, b| w[(active[a], active[b])]);
        let Some(chol) = sub.cholesky() else { return false };
        chol.solve_mut(&mut x);
        let mut first: Option<(f64, usize)> = None;
        for a in 0..n {
            let b = beta[(active[a], j)];
            if x[a] * b <= 0.0 {
                let t = b / (b - x[a]);
                if first.is_none_or(|(ft, _)| t < ft) {
                    first = Some((t, a));
                }
            }
        }
        match first {
            None => {
                for (a, &k) in active.iter().enumerate() {
                    beta[(k, j)] = x[a];
                }
                break;
            }
            Some((t, hit)) => {
                for (a, &k) in active.iter().enumerate() {
                    let b = beta[(k, j)];
                    beta[(k, j)] = if a == hit { 0.0 } else { b + t * (x[a] - b) };
                }
                active.retain(|&k| beta[(k, j)] != 0.0);
            }
        }
    }
    for k in 0..p {
        v[k] = 0.0;
    }
    for &l in &active {
        let b = beta[(l, j)];
        for k in 0..p {
            v[k] += w[(k, l)] * b;
        }
    }
    // off the support |s_k − (Wβ)_k| ≤ ρ
    let slack = rho * (1.0 + 1e-12);
    (0..p).filter(|&k| k != j && beta[(k, j)] == 0.0).all(|k| (s[(k, j)] - v[k]).abs() <= slack)
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// `log det Ω − tr(SΩ) − ρ Σ_ij |Ω_ij|`; `-∞` when `Ω` is not positive definite.
pub fn glasso_objective(cov: &SymMatrix, omega: &SymMatrix, rho: f64) -> f64 {
    let Ok(chol) = Cholesky::new(omega) else {
        return f64::NEG_INFINITY;
    };
    let tr = cov.matrix().component_mul(omega.matrix()).sum();
    let l1: f64 = omega.matrix().iter().map(|v| v.abs()).sum();
    chol.log_det() - tr - rho * l1
}

/// Number of nonzero entries strictly below the diagonal.
pub fn lower_nonzeros(omega: &SymMatrix) -> usize {
    let p = omega.dim();
    (0..p)
        .flat_map(|j| ((j + 1)..p).map(move |i| (i, j)))
        .filter(|&(i, j)| omega.get(i, j) != 0.0)
        .count()
}

/// `tr(SΩ) − log det Ω + k log T / T`.
pub fn bic_score(cov: &SymMatrix, omega: &SymMatrix, n_obs: usize) -> Result<f64> {
    let chol = Cholesky::new(omega)?;
    let tr = cov.matrix().component_mul(omega.matrix()).sum();
    let t = n_obs as f64;
    Ok(tr - chol.log_det() + lower_nonzeros(omega) as f64 * t.ln() / t)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BicRow {
    pub rho: f64,
    /// `None` when the solve failed at this penalty.
    pub bic: Option<f64>,
    pub nonzeros: usize,
}

#[derive(Debug, Clone)]
pub struct BicSelection {
    pub rho: f64,
    pub precision: SymMatrix,
    pub table: Vec<BicRow>,
}

/// `n` log-spaced penalties over `[0.01, 1] × max |off-diagonal|`
/// (falling back to the largest diagonal entry for diagonal input).
pub fn default_rho_grid(cov: &SymMatrix, n: usize) -> Vec<f64> {
    let p = cov.dim();
    let mut scale = 0.0_f64;
    for j in 0..p {
        for i in (j + 1)..p {
            scale = scale.max(cov.get(i, j).abs());
        }
    }
    if scale == 0.0 {
        scale = cov.diagonal().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    }
    if n == 1 {
        return vec![scale];
    }
    let (lo, hi) = (0.01_f64.ln(), 0.0_f64);
    (0..n)
        .map(|k| scale * (lo + (hi - lo) * k as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Penalty minimising the BIC over `rho_grid` (ties to the smaller penalty).
pub fn bic_select_rho(cov: &SymMatrix, n_obs: usize, rho_grid: &[f64]) -> Result<BicSelection> {
    check_grid(rho_grid, n_obs)?;
    let mut path = BicPath::default();
    path.extend(cov, n_obs, rho_grid);
    path.select()
}

/// Decades searched below the default grid when BIC lands on its smallest
/// penalty.
pub const MAX_GRID_EXTENSIONS: usize = 3;

/// BIC selection over [`default_rho_grid`]. While the minimiser is the smallest
/// penalty tried, the grid is continued downwards one point at a time at the
/// same log spacing, for at most [`MAX_GRID_EXTENSIONS`] decades.
pub fn bic_select_rho_default(cov: &SymMatrix, n_obs: usize) -> Result<BicSelection> {
    let grid = default_rho_grid(cov, DEFAULT_GRID_POINTS);
    check_grid(&grid, n_obs)?;
    let mut path = BicPath::default();
    path.extend(cov, n_obs, &grid);
    if grid.len() < 2 {
        return path.select();
    }
    let step = grid[1] / grid[0];
    let per_decade = (10f64.ln() / step.ln()).round().max(1.0) as usize;
    for _ in 0..MAX_GRID_EXTENSIONS * per_decade {
        let Some(best) = path.best() else { break };
        let lowest = path.lowest();
        if path.rows[best].rho != lowest {
            break;
        }
        log::debug!("BIC minimum at the smallest penalty {lowest:e}; extending the grid");
        path.extend(cov, n_obs, &[lowest / step]);
    }
    path.select()
}

pub const DEFAULT_GRID_POINTS: usize = 20;

fn check_grid(rho_grid: &[f64], n_obs: usize) -> Result<()> {
    if rho_grid.is_empty() {
        return Err(Error::invalid("penalty grid is empty"));
    }
    if n_obs < 2 {
        return Err(Error::invalid("BIC needs at least 2 observations"));
    }
    if let Some(r) = rho_grid.iter().find(|r| !(**r > 0.0) || !r.is_finite()) {
        return Err(Error::invalid(format!("penalties must be positive, got {r}")));
    }
    Ok(())
}

/// Solutions along a penalty path, in the order the grid was given.
#[derive(Default)]
struct BicPath {
    rows: Vec<BicRow>,
    solutions: Vec<Option<SymMatrix>>,
    warm: Option<GlassoState>,
    last_err: Option<Error>,
}

impl BicPath {
    /// Solves the new penalties from the largest down, each warm-started from
    /// the previous solve.
    fn extend(&mut self, cov: &SymMatrix, n_obs: usize, rhos: &[f64]) {
        let base = self.rows.len();
        let mut order: Vec<usize> = (0..rhos.len()).collect();
        order.sort_by(|&a, &b| rhos[b].total_cmp(&rhos[a]));
        let mut rows: Vec<Option<BicRow>> = vec![None; rhos.len()];
        let mut sols: Vec<Option<SymMatrix>> = vec![None; rhos.len()];
        for &idx in &order {
            let rho = rhos[idx];
            let settings = GlassoSettings::new(rho);
            let outcome = glasso_solve_detailed(cov, &settings, self.warm.as_ref(), false)
                .and_then(|sol| bic_score(cov, &sol.precision, n_obs).map(|b| (sol, b)));
            match outcome {
                Ok((sol, bic)) => {
                    rows[idx] = Some(BicRow {
                        rho,
                        bic: Some(bic),
                        nonzeros: lower_nonzeros(&sol.precision),
                    });
                    self.warm = sol.state;
                    sols[idx] = Some(sol.precision);
                }
                Err(e) => {
                    log::debug!("glasso failed at rho = {rho}: {e}");
                    rows[idx] = Some(BicRow {
                        rho,
                        bic: None,
                        nonzeros: 0,
                    });
                    self.last_err = Some(e);
                }
            }
        }
        self.rows.extend(rows.into_iter().map(|r| r.expect("every grid point visited")));
        self.solutions.extend(sols);
        debug_assert_eq!(self.rows.len(), base + rhos.len());
    }

    fn lowest(&self) -> f64 {
        self.rows.iter().map(|r| r.rho).fold(f64::INFINITY, f64::min)
    }

    fn best(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, row) in self.rows.iter().enumerate() {
            let Some(b) = row.bic else { continue };
            best = match best {
                None => Some(i),
                Some(j) => {
                    let bj = self.rows[j].bic.expect("best has a score");
                    if b < bj || (b == bj && row.rho < self.rows[j].rho) {
                        Some(i)
                    } else {
                        Some(j)
                    }
                }
            };
        }
        best
    }

    fn select(mut self) -> Result<BicSelection> {
        let Some(best) = self.best() else {
            return Err(self
                .last_err
                .unwrap_or_else(|| Error::Numerical("no penalty converged".into())));
        };
        Ok(BicSelection {
            rho: self.rows[best].rho,
            precision: self.solutions[best].take().expect("solution stored"),
            table: self.rows,
        })
    }
}

/// `Ω_E − Ω_E U (diag(V)⁻¹ + Uᵀ Ω_E U)⁻¹ Uᵀ Ω_E`: the inverse of
/// `Ω_E⁻¹ + U diag(V) Uᵀ`.
pub fn smw_reconstruct(omega_e: &SymMatrix, values: &[f64], vectors: &DMatrix<f64>) -> Result<SymMatrix> {
    let p = omega_e.dim();
    let r = values.len();
    if vectors.nrows() != p || vectors.ncols() != r {
        return Err(Error::dims(format!(
            "expected {p}x{r} eigenvectors, got {}x{}",
            vectors.nrows(),
            vectors.ncols()
        )));
    }
    if r == 0 {
        return Ok(omega_e.clone().with_role(MatrixRole::Precision));
    }
    if let Some(v) = values.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::invalid(format!(
            "removed eigenvalues must be positive, got {v}"
        )));
    }
    let x = omega_e.matrix() * vectors; // p × r
    let mut inner = vectors.transpose() * &x;
    for (k, v) in values.iter().enumerate() {
        inner[(k, k)] += 1.0 / v;
    }
    let chol = Cholesky::factor(&inner, MatrixRole::Generic)
        .map_err(|_| Error::Numerical("low-rank correction matrix is singular".into()))?;
    let mut y = x.transpose();
    chol.solve_mut(&mut y);
    let omega = omega_e.matrix() - &x * y;
    SymMatrix::from_average(omega, MatrixRole::Precision)
}

#[derive(Debug, Clone)]
pub struct FactorAdjustedPrecision {
    pub precision: SymMatrix,
    /// Estimate of the inverse of the factor-adjusted covariance.
    pub precision_e: SymMatrix,
    pub rho: f64,
    pub bic_table: Vec<BicRow>,
    pub removed_values: Vec<f64>,
}

/// Factor-adjusted graphical lasso: strip `r_c` principal components, pick a
/// penalty by BIC, then reattach the components through SMW.
pub fn factor_adjusted_precision(
    cov: &SymMatrix,
    r_c: usize,
    n_obs: usize,
    rho_grid: Option<&[f64]>,
) -> Result<FactorAdjustedPrecision> {
    let adj = factor_adjust(cov, r_c)?;
    if let Some(v) = adj.top_values.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::invalid(format!(
            "removed eigenvalue {v} is not positive"
        )));
    }
    let sel = match rho_grid {
        Some(g) => bic_select_rho(&adj.adjusted, n_obs, g)?,
        None => bic_select_rho_default(&adj.adjusted, n_obs)?,
    };
    let precision = smw_reconstruct(&sel.precision, &adj.top_values, &adj.top_vectors)?;
    Ok(FactorAdjustedPrecision {
        precision,
        precision_e: sel.precision,
        rho: sel.rho,
        bic_table: sel.table,
        removed_values: adj.top_values,
    })
}

/// Closed-form precision of a one-global, one-local factor model with
/// diagonal idiosyncratic precision `omega_diag`:
/// `Ω_ij = ω_ij − H_ij − Q_ij`.
///
/// With `Q1_G = (σ_G⁻² + Σ_{k∈G} ω_k (b_kᴳ)²)⁻¹` and
/// `Q2_G = Σ_{k∈G} ω_k b_kᶜ b_kᴳ`:
/// * `H_ij = ω_i ω_j b_iᴳ b_jᴳ Q1_G` for `i, j` in the same group, else 0;
/// * `Q3 = (σ_c⁻² + Σ_k ω_k (b_kᶜ)² − Σ_G Q1_G Q2_G²)⁻¹`;
/// * `Q_ij = Q3 a_i a_j` with `a_i = ω_i b_iᶜ − Q1_{g_i} Q2_{g_i} ω_i b_i^{g_i}`.
pub fn simplified_inverse_oracle(
    b_c: &[f64],
    b_g: &[f64],
    labels: &GroupLabels,
    sigma_c2: f64,
    sigma_g2: &[f64],
    omega_diag: &[f64],
) -> Result<SymMatrix> {
    let p = labels.len();
    if b_c.len() != p || b_g.len() != p || omega_diag.len() != p {
        return Err(Error::dims("loadings, labels and omega_diag must share length p"));
    }
    if sigma_g2.len() != labels.num_groups() {
        return Err(Error::dims("one local variance per group required"));
    }
    if !(sigma_c2 > 0.0) || sigma_g2.iter().chain(omega_diag).any(|v| !(*v > 0.0)) {
        return Err(Error::invalid("variances and precisions must be positive"));
    }

    let k = labels.num_groups();
    let mut q1 = vec![0.0; k];
    let mut q2 = vec![0.0; k];
    for g in 0..k {
        q1[g] = 1.0 / sigma_g2[g];
    }
    for i in 0..p {
        let g = labels.group_of(i);
        q1[g] += omega_diag[i] * b_g[i] * b_g[i];
        q2[g] += omega_diag[i] * b_c[i] * b_g[i];
    }
    for v in &mut q1 {
        *v = 1.0 / *v;
    }

    let mut q3_inv = 1.0 / sigma_c2;
    for i in 0..p {
        q3_inv += omega_diag[i] * b_c[i] * b_c[i];
    }
    for g in 0..k {
        q3_inv -= q1[g] * q2[g] * q2[g];
    }
    let q3 = 1.0 / q3_inv;

    let a: Vec<f64> = (0..p)
        .map(|i| {
            let g = labels.group_of(i);
            omega_diag[i] * b_c[i] - q1[g] * q2[g] * omega_diag[i] * b_g[i]
        })
        .collect();

    SymMatrix::from_fn(p, MatrixRole::Precision, |i, j| {
        let omega_ij = if i == j { omega_diag[i] } else { 0.0 };
        let (gi, gj) = (labels.group_of(i), labels.group_of(j));
        let h = if gi == gj {
            omega_diag[i] * omega_diag[j] * b_g[i] * b_g[j] * q1[gi]
        } else {
            0.0
        };
        omega_ij - h - q3 * a[i] * a[j]
    })
}

/// `σ_c² b_c b_cᵀ + Σ_G σ_G² b_G b_Gᵀ + diag(1/ω)`: the covariance whose
/// inverse [`simplified_inverse_oracle`] evaluates.
pub fn simplified_covariance(
    b_c: &[f64],
    b_g: &[f64],
    labels: &GroupLabels,
    sigma_c2: f64,
    sigma_g2: &[f64],
    omega_diag: &[f64],
) -> Result<SymMatrix> {
    let p = labels.len();
    if b_c.len() != p || b_g.len() != p || omega_diag.len() != p {
        return Err(Error::dims("loadings, labels and omega_diag must share length p"));
    }
    SymMatrix::from_fn(p, MatrixRole::Covariance, |i, j| {
        let mut v = sigma_c2 * b_c[i] * b_c[j];
        let g = labels.group_of(i);
        if g == labels.group_of(j) {
            v += sigma_g2[g] * b_g[i] * b_g[j];
        }
        if i == j {
            v += 1.0 / omega_diag[i];
        }
        v
    })
}
