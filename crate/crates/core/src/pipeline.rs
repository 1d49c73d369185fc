//! End-to-end group detection and the rolling portfolio backtest.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cluster::{default_k_grid, select_num_clusters, CvRow, RscEmbedding};
use crate::error::{Error, Result};
use crate::factor::{default_k_max, eigenvalue_ratio_clipped, sample_covariance};
use crate::graph::{build_benchmark_adjacency, normalized_ifam, BenchmarkInput, WeightedAdjacency};
use crate::linalg::{sym_eigen, SymMatrix};
use crate::panel::{GroupLabels, ReturnPanel};
use crate::poet::{double_poet_from_cov, FactorCount, LocalFactorCount, ResidualThreshold};
use crate::portfolio::{min_variance_weights, BacktestLedger, BacktestRecord};
use crate::precision::{bic_select_rho, bic_select_rho_default, factor_adjusted_precision, BicRow};

/// Which adjacency matrix feeds the clustering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ifam,
    Cov,
    Glasso,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Ifam, Method::Cov, Method::Glasso];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ifam => "ifam",
            Method::Cov => "cov",
            Method::Glasso => "glasso",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ifam" => Ok(Method::Ifam),
            "cov" => Ok(Method::Cov),
            "glasso" => Ok(Method::Glasso),
            other => Err(Error::invalid(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectSettings {
    pub method: Method,
    /// Global factor count removed before GLASSO (IFAM) or from the sample
    /// covariance (COV).
    pub r_c: FactorCount,
    /// Penalty grid; `None` uses the default log grid.
    pub rho_grid: Option<Vec<f64>>,
    /// Candidate cluster counts; `None` uses `{2, …, min(40, p/4)}`.
    pub k_grid: Option<Vec<usize>>,
    pub folds: usize,
    pub seed: u64,
}

impl Default for DetectSettings {
    fn default() -> Self {
        Self {
            method: Method::Ifam,
            r_c: FactorCount::Auto,
            rho_grid: None,
            k_grid: None,
            folds: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdjacencyEstimate {
    pub adjacency: WeightedAdjacency,
    pub r_c: usize,
    pub rho: Option<f64>,
    pub bic_table: Vec<BicRow>,
    /// The precision estimate behind IFAM or GLASSO.
    pub precision: Option<SymMatrix>,
}

#[derive(Debug, Clone)]
pub struct GroupDetection {
    pub estimate: AdjacencyEstimate,
    pub labels: GroupLabels,
    pub k_hat: usize,
    pub cv_table: Vec<CvRow>,
}

fn resolve_r_c(cov: &SymMatrix, n_obs: usize, r_c: FactorCount) -> Result<usize> {
    let p = cov.dim();
    match r_c {
        FactorCount::Fixed(r) if r >= p => Err(Error::invalid(format!("{r} global factors for {p} assets"))),
        FactorCount::Fixed(r) => Ok(r),
        FactorCount::Auto => Ok(eigenvalue_ratio_clipped(&sym_eigen(cov)?.values, default_k_max(p, n_obs))),
    }
}

/// Normalised adjacency of the chosen method from a sample covariance.
pub fn estimate_adjacency_from_cov(
    cov: &SymMatrix,
    n_obs: usize,
    settings: &DetectSettings,
) -> Result<AdjacencyEstimate> {
    match settings.method {
        Method::Ifam => {
            let r_c = resolve_r_c(cov, n_obs, settings.r_c)?;
            let fit = factor_adjusted_precision(cov, r_c, n_obs, settings.rho_grid.as_deref())?;
            Ok(AdjacencyEstimate {
                adjacency: normalized_ifam(&fit.precision)?,
                r_c,
                rho: Some(fit.rho),
                bic_table: fit.bic_table,
                precision: Some(fit.precision),
            })
        }
        Method::Cov => {
            let r_c = resolve_r_c(cov, n_obs, settings.r_c)?;
            Ok(AdjacencyEstimate {
                adjacency: build_benchmark_adjacency(BenchmarkInput::Cov { cov, r_c })?,
                r_c,
                rho: None,
                bic_table: Vec::new(),
                precision: None,
            })
        }
        Method::Glasso => {
            let sel = match &settings.rho_grid {
                Some(g) => bic_select_rho(cov, n_obs, g)?,
                None => bic_select_rho_default(cov, n_obs)?,
            };
            Ok(AdjacencyEstimate {
                adjacency: build_benchmark_adjacency(BenchmarkInput::GlassoSigned {
                    precision: &sel.precision,
                })?,
                r_c: 0,
                rho: Some(sel.rho),
                bic_table: sel.table,
                precision: Some(sel.precision),
            })
        }
    }
}

pub fn estimate_adjacency(panel: &ReturnPanel, settings: &DetectSettings) -> Result<AdjacencyEstimate> {
    let cov = sample_covariance(panel)?;
    estimate_adjacency_from_cov(&cov, panel.n_obs(), settings)
}

/// Adjacency, spectral clustering for every candidate `K`, then the
/// cross-validated choice of `K`.
pub fn detect_groups(panel: &ReturnPanel, settings: &DetectSettings) -> Result<GroupDetection> {
    let estimate = estimate_adjacency(panel, settings)?;
    detect_groups_from_estimate(panel, estimate, settings)
}

/// Clustering and `K` selection on an adjacency already estimated from `panel`.
pub fn detect_groups_from_estimate(
    panel: &ReturnPanel,
    estimate: AdjacencyEstimate,
    settings: &DetectSettings,
) -> Result<GroupDetection> {
    let p = panel.n_assets();
    let grid = match &settings.k_grid {
        Some(g) => g.clone(),
        None => default_k_grid(p),
    };
    let grid: Vec<usize> = grid.into_iter().filter(|&k| k >= 2 && k <= p).collect();
    if grid.is_empty() {
        return Err(Error::invalid(format!("no candidate K in [2, {p}]")));
    }
    let embedding = RscEmbedding::new(&estimate.adjacency)?;
    let mut labelings = BTreeMap::new();
    for &k in &grid {
        labelings.insert(k, embedding.cluster(k, settings.seed)?);
    }
    let sel = select_num_clusters(panel, &labelings, settings.folds)?;
    Ok(GroupDetection {
        estimate,
        labels: sel.labels,
        k_hat: sel.k_hat,
        cv_table: sel.table,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BacktestSettings {
    pub detect: DetectSettings,
    /// Rows used to estimate group labels.
    pub ifam_window: usize,
    /// Rows used for the Double-POET covariance.
    pub poet_window: usize,
    /// Labels are re-estimated every this many steps.
    pub refit_every: usize,
    pub r_c: FactorCount,
    pub r_local: LocalFactorCount,
}

impl Default for BacktestSettings {
    fn default() -> Self {
        Self {
            detect: DetectSettings::default(),
            ifam_window: 500,
            poet_window: 50,
            refit_every: 1,
            r_c: FactorCount::Auto,
            r_local: LocalFactorCount::Auto,
        }
    }
}

/// Where group labels come from in a backtest.
#[derive(Debug, Clone)]
pub enum LabelSource {
    Detect,
    /// Labels fixed in advance, such as a nationality or sector map.
    Fixed(GroupLabels),
}

/// Rolling out-of-sample backtest, one ledger per entry of `c0s`.
///
/// Step `k` uses rows `[k, k + ifam_window)` for the labels and the trailing
/// `poet_window` rows of that range for Double-POET, then earns row
/// `k + ifam_window`. A panel of `T` rows yields `T − ifam_window` records.
pub fn rolling_backtest_grid(
    panel: &ReturnPanel,
    settings: &BacktestSettings,
    labels: &LabelSource,
    threshold: &ResidualThreshold,
    c0s: &[f64],
) -> Result<Vec<BacktestLedger>> {
    let t = panel.n_obs();
    let w = settings.ifam_window;
    if settings.poet_window < 2 || settings.poet_window > w {
        return Err(Error::invalid(format!(
            "poet window {} must lie in [2, ifam window {w}]",
            settings.poet_window
        )));
    }
    if t <= w {
        return Err(Error::invalid(format!(
            "{t} rows leave no out-of-sample period after a window of {w}"
        )));
    }
    if c0s.is_empty() {
        return Err(Error::invalid("empty c0 grid"));
    }
    if let LabelSource::Fixed(l) = labels {
        if l.len() != panel.n_assets() {
            return Err(Error::dims(format!(
                "{} labels for {} assets",
                l.len(),
                panel.n_assets()
            )));
        }
    }
    let refit = settings.refit_every.max(1);
    let mut ledgers = vec![BacktestLedger::new(); c0s.len()];
    let mut current: Option<GroupLabels> = None;
    for (step, k) in (0..t - w).enumerate() {
        let end = k + w;
        let step_labels = match labels {
            LabelSource::Fixed(l) => l.clone(),
            LabelSource::Detect => {
                if step % refit == 0 || current.is_none() {
                    let window = panel.rows(k, end)?;
                    current = Some(detect_groups(&window, &settings.detect)?.labels);
                }
                current.clone().expect("labels fitted")
            }
        };
        let recent = panel.rows(end - settings.poet_window, end)?;
        let cov = sample_covariance(&recent)?;
        let fit = double_poet_from_cov(
            &cov,
            recent.n_obs(),
            &step_labels,
            settings.r_c,
            &settings.r_local,
            threshold,
        )?;
        let next = panel.row(end);
        for (ledger, &c0) in ledgers.iter_mut().zip(c0s) {
            let weights = min_variance_weights(&fit.estimate, c0)?;
            let realized_return = weights.apply(&next)?;
            ledger.push(BacktestRecord {
                window_end: end,
                weights,
                realized_return,
            })?;
        }
        log::debug!("backtest step {step} (row {end}) done");
    }
    Ok(ledgers)
}

/// Single-bound rolling backtest with detected labels and min-PD thresholding.
pub fn rolling_backtest(panel: &ReturnPanel, settings: &BacktestSettings, c0: f64) -> Result<BacktestLedger> {
    let mut v = rolling_backtest_grid(panel, settings, &LabelSource::Detect, &ResidualThreshold::MinPd, &[c0])?;
    Ok(v.pop().expect("one ledger per c0"))
}
