//! Minimum-variance allocation under a gross-exposure bound, and risk
//! accounting for simulated and rolling out-of-sample portfolios.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, SymMatrix};

const FEASIBILITY_TOL: f64 = 1e-8;
pub const WEEKS_PER_YEAR: f64 = 52.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioWeights {
    weights: Vec<f64>,
    c0: f64,
}

impl PortfolioWeights {
    pub fn new(weights: Vec<f64>, c0: f64) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("empty weight vector"));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("non-finite weight"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > FEASIBILITY_TOL {
            return Err(Error::invalid(format!("weights sum to {sum}, not 1")));
        }
        let l1: f64 = weights.iter().map(|w| w.abs()).sum();
        if l1 > c0 + FEASIBILITY_TOL {
            return Err(Error::invalid(format!("gross exposure {l1} exceeds c0 = {c0}")));
        }
        Ok(Self { weights, c0 })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    pub fn l1_norm(&self) -> f64 {
        self.weights.iter().map(|w| w.abs()).sum()
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// `wᵀ r`.
    pub fn apply(&self, returns: &[f64]) -> Result<f64> {
        if returns.len() != self.weights.len() {
            return Err(Error::dims(format!(
                "{} weights, {} returns",
                self.weights.len(),
                returns.len()
            )));
        }
        Ok(self.weights.iter().zip(returns).map(|(w, r)| w * r).sum())
    }
}

/// Solver output with the multipliers of
/// `min wᵀΣw  s.t.  1ᵀw = 1 (μ),  ‖w‖₁ ≤ c0 (λ)`.
#[derive(Debug, Clone)]
pub struct MinVarianceSolution {
    pub weights: PortfolioWeights,
    pub mu: f64,
    pub lambda: f64,
    pub iterations: usize,
}

pub fn min_variance_weights(cov: &SymMatrix, c0: f64) -> Result<PortfolioWeights> {
    Ok(min_variance_solve(cov, c0)?.weights)
}

/// Global minimum-variance weights `Σ⁻¹1 / 1ᵀΣ⁻¹1` and `1ᵀΣ⁻¹1`.
pub fn gmv_weights(cov: &SymMatrix) -> Result<(Vec<f64>, f64)> {
    let chol = Cholesky::new(cov)?;
    let x = chol.solve_vec(&vec![1.0; cov.dim()]);
    let s: f64 = x.iter().sum();
    if !(s > 0.0) {
        return Err(Error::Numerical(format!("1ᵀΣ⁻¹1 = {s}")));
    }
    Ok((x.iter().map(|v| v / s).collect(), s))
}

/// Active-set solve on the split `w = w⁺ − w⁻`.
///
/// If the GMV portfolio meets the bound it is the answer. Otherwise the bound
/// binds, so the problem becomes `Σw⁺ = (c0+1)/2`, `Σw⁻ = (c0−1)/2`,
/// `w± ≥ 0`. An index free on both sides absorbs any slack; the multipliers of
/// a second such index are exactly zero, so it is never released.
pub fn min_variance_solve(cov: &SymMatrix, c0: f64) -> Result<MinVarianceSolution> {
    if !(c0 >= 1.0) || !c0.is_finite() {
        return Err(Error::invalid(format!(
            "gross exposure bound c0 = {c0} is infeasible (need c0 >= 1)"
        )));
    }
    let p = cov.dim();
    let (gmv, s) = gmv_weights(cov)?;
    let gmv_l1: f64 = gmv.iter().map(|w| w.abs()).sum();
    if gmv_l1 <= c0 {
        return Ok(MinVarianceSolution {
            weights: PortfolioWeights::new(gmv, c0)?,
            mu: 2.0 / s,
            lambda: 0.0,
            iterations: 0,
        });
    }

    let sigma = cov.matrix();
    let a = 0.5 * (c0 + 1.0);
    let b = 0.5 * (c0 - 1.0);
    let shorts = b > 0.0;
    let n = if shorts { 2 * p } else { p };
    // variable v < p is w⁺_v, v >= p is w⁻_{v-p}
    let side = |v: usize| -> (usize, f64) { if v < p { (v, 1.0) } else { (v - p, -1.0) } };

    let start = (0..p)
        .min_by(|&i, &j| sigma[(i, i)].total_cmp(&sigma[(j, j)]))
        .expect("p >= 1");
    let mut x = vec![0.0; n];
    let mut free = vec![false; n];
    x[start] = a;
    free[start] = true;
    if shorts {
        x[p + start] = b;
        free[p + start] = true;
    }

    let scale = sigma.diagonal().amax().max(f64::MIN_POSITIVE);
    let release_tol = 1e-13 * scale * c0;
    let step_tol = 1e-15 * c0;
    let max_iter = 50 * n + 100;

    let mut iterations = 0;
    loop {
        iterations += 1;
        if iterations > max_iter {
            return Err(Error::Numerical(format!(
                "minimum-variance active set did not settle in {max_iter} iterations"
            )));
        }
        let fvars: Vec<usize> = (0..n).filter(|&v| free[v]).collect();
        let has_minus = fvars.iter().any(|&v| v >= p);
        if shorts && !has_minus {
            return Err(Error::Numerical("short book emptied despite a positive budget".into()));
        }
        let m = fvars.len();
        let rows = if has_minus { 2 } else { 1 };
        let dim = m + rows;
        let mut kkt = DMatrix::<f64>::zeros(dim, dim);
        let mut rhs = DVector::<f64>::zeros(dim);
        for (r, &u) in fvars.iter().enumerate() {
            let (iu, su) = side(u);
            for (c, &v) in fvars.iter().enumerate() {
                let (iv, sv) = side(v);
                kkt[(r, c)] = 2.0 * su * sv * sigma[(iu, iv)];
            }
            let row = if u < p { m } else { m + 1 };
            kkt[(r, row)] = 1.0;
            kkt[(row, r)] = 1.0;
        }
        rhs[m] = a;
        if has_minus {
            rhs[m + 1] = b;
        }
        let sol = kkt
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical("singular active-set KKT system".into()))?;
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite active-set step".into()));
        }

        let mut alpha = 1.0;
        let mut blocking = None;
        let mut moved = false;
        for (r, &v) in fvars.iter().enumerate() {
            let d = sol[r] - x[v];
            if d.abs() > step_tol {
                moved = true;
            }
            if d < 0.0 {
                let ratio = x[v] / -d;
                if ratio < alpha {
                    alpha = ratio;
                    blocking = Some(v);
                }
            }
        }

        if moved {
            for (r, &v) in fvars.iter().enumerate() {
                x[v] += alpha * (sol[r] - x[v]);
            }
            if let Some(v) = blocking {
                x[v] = 0.0;
                free[v] = false;
            }
            continue;
        }

        for (r, &v) in fvars.iter().enumerate() {
            x[v] = sol[r].max(0.0);
        }
        // g_F = ν on each row; λ_row = −ν
        let nu_plus = -sol[m];
        let nu_minus = if has_minus { Some(-sol[m + 1]) } else { None };
        let w: Vec<f64> = (0..p)
            .map(|i| x[i] - if shorts { x[p + i] } else { 0.0 })
            .collect();
        let sw = sigma * DVector::from_column_slice(&w);
        let mut worst = None;
        let mut worst_z = -release_tol;
        for v in (0..n).filter(|&v| !free[v]) {
            let (i, sv) = side(v);
            let nu = if v < p { nu_plus } else { nu_minus.expect("shorts imply a free short") };
            let z = 2.0 * sv * sw[i] - nu;
            if z < worst_z {
                worst_z = z;
                worst = Some(v);
            }
        }
        match worst {
            Some(v) => {
                free[v] = true;
            }
            None => {
                let (mu, lambda) = match nu_minus {
                    Some(nm) => (0.5 * (nu_plus - nm), -0.5 * (nu_plus + nm)),
                    None => {
                        let lam = (0..p)
                            .map(|i| 0.5 * (2.0 * sw[i] - nu_plus))
                            .fold(0.0, f64::max);
                        (nu_plus + lam, lam)
                    }
                };
                let weights = PortfolioWeights::new(w, c0).map_err(|e| {
                    Error::Numerical(format!("minimum-variance solution infeasible: {e}"))
                })?;
                return Ok(MinVarianceSolution {
                    weights,
                    mu,
                    lambda,
                    iterations,
                });
            }
        }
    }
}

/// Largest violation of the optimality conditions of the gross-exposure
/// minimum-variance problem at `(w, μ, λ)`.
pub fn kkt_residual(cov: &SymMatrix, sol: &MinVarianceSolution) -> Result<f64> {
    let w = sol.weights.weights();
    let p = cov.dim();
    if w.len() != p {
        return Err(Error::dims(format!("{} weights for {p} assets", w.len())));
    }
    let c0 = sol.weights.c0();
    let (mu, lambda) = (sol.mu, sol.lambda);
    let sw = cov.matrix() * DVector::from_column_slice(w);
    let l1 = sol.weights.l1_norm();
    let mut res: f64 = (w.iter().sum::<f64>() - 1.0).abs();
    res = res.max(l1 - c0).max(-lambda).max((lambda * (c0 - l1)).abs());
    let zero = 1e-12 * c0;
    for i in 0..p {
        let g = 2.0 * sw[i] - mu;
        let r = if w[i] > zero {
            (g + lambda).abs()
        } else if w[i] < -zero {
            (g - lambda).abs()
        } else {
            (g.abs() - lambda).max(0.0)
        };
        res = res.max(r);
    }
    Ok(res)
}

/// Solves the problem for each bound, in parallel; output order follows `c0s`.
pub fn min_variance_path(cov: &SymMatrix, c0s: &[f64]) -> Result<Vec<PortfolioWeights>> {
    c0s.par_iter().map(|&c0| min_variance_weights(cov, c0)).collect()
}

/// `wᵀ Σ w`.
pub fn expected_risk(w: &PortfolioWeights, sigma_true: &SymMatrix) -> Result<f64> {
    sigma_true.quadratic_form(w.weights())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestRecord {
    /// Row index of the out-of-sample return; the fit used earlier rows only.
    pub window_end: usize,
    pub weights: PortfolioWeights,
    pub realized_return: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BacktestLedger {
    records: Vec<BacktestRecord>,
}

impl BacktestLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: BacktestRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.window_end <= last.window_end {
                return Err(Error::invalid(format!(
                    "window end {} does not follow {}",
                    record.window_end, last.window_end
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[BacktestRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records whose out-of-sample row lies in `[start, end)`.
    pub fn slice_rows(&self, start: usize, end: usize) -> BacktestLedger {
        BacktestLedger {
            records: self
                .records
                .iter()
                .filter(|r| r.window_end >= start && r.window_end < end)
                .cloned()
                .collect(),
        }
    }
}

/// `√((52/m) Σ_k r_k²)` over the stored realized returns.
pub fn realized_annualized_risk(ledger: &BacktestLedger) -> Result<f64> {
    annualized_risk(ledger.records().iter().map(|r| r.realized_return))
}

pub fn annualized_risk(returns: impl IntoIterator<Item = f64>) -> Result<f64> {
    let mut m = 0usize;
    let mut ss = 0.0;
    for r in returns {
        m += 1;
        ss += r * r;
    }
    if m == 0 {
        return Err(Error::invalid("annualized risk of an empty ledger"));
    }
    Ok((WEEKS_PER_YEAR / m as f64 * ss).sqrt())
}
