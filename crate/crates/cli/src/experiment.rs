//! Monte Carlo tables: edge densities over τ, ARI, matrix errors and
//! expected portfolio risk, one long-format CSV per family.

use std::collections::BTreeMap;

use ifam_core::cluster::adjusted_rand_index;
use ifam_core::factor::sample_covariance;
use ifam_core::graph::{
    build_benchmark_adjacency, edge_densities, summarize_densities, threshold_binary, BenchmarkInput, GroupDensity,
    WeightedAdjacency,
};
use ifam_core::pipeline::{detect_groups_from_estimate, estimate_adjacency_from_cov, DetectSettings};
use ifam_core::poet::{double_poet_from_cov, LocalFactorCount, ResidualThreshold};
use ifam_core::portfolio::{expected_risk, min_variance_path};
use ifam_core::{generate_replication, matrix_norms, DgpConfig, GroupLabels, Method, StreamKey};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, Family};
use crate::csvio::{fmt_f64, Table};
use crate::error::{CliError, CliResult};
use crate::manifest::{Manifest, Run};

/// Share of replications allowed to fail before the run is rejected.
pub const MAX_FAILURE_SHARE: f64 = 0.10;

#[derive(Debug, Clone)]
pub struct DensityCurve {
    pub t: usize,
    /// `ifam`, `cov`, `glasso`, or `cov_r{r}` for a fixed number of removed
    /// components.
    pub method: String,
    pub replication: u64,
    /// Indexed by τ, then group.
    pub by_tau: Vec<Vec<GroupDensity>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensitySummaryRow {
    pub t: usize,
    pub method: String,
    pub tau: f64,
    pub within_mean_of_min: f64,
    pub between_mean_of_max: f64,
    pub replications: usize,
}

#[derive(Debug, Clone)]
pub struct AriRow {
    pub t: usize,
    pub method: Method,
    pub replication: u64,
    pub k_hat: usize,
    pub ari: f64,
    pub r_c: usize,
    pub rho: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ErrorRow {
    pub t: usize,
    /// Label source: a method name, `true` or `permuted`.
    pub labels: String,
    pub replication: u64,
    pub max: f64,
    pub frobenius: f64,
    pub relative_frobenius: f64,
}

#[derive(Debug, Clone)]
pub struct RiskRow {
    pub t: usize,
    pub labels: String,
    pub replication: u64,
    pub c0: f64,
    pub expected_risk: f64,
}

#[derive(Debug, Clone)]
pub struct FailureRow {
    pub t: usize,
    pub replication: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentResults {
    pub densities: Vec<DensityCurve>,
    pub ari: Vec<AriRow>,
    pub matrix_error: Vec<ErrorRow>,
    pub risk: Vec<RiskRow>,
    pub failures: Vec<FailureRow>,
    pub attempted: usize,
}

#[derive(Default)]
struct RepOutput {
    densities: Vec<DensityCurve>,
    ari: Vec<AriRow>,
    matrix_error: Vec<ErrorRow>,
    risk: Vec<RiskRow>,
}

struct Plan<'a> {
    cfg: &'a ExperimentConfig,
    families: Vec<Family>,
    methods: Vec<Method>,
    taus: Vec<f64>,
    c0s: Vec<f64>,
}

impl Plan<'_> {
    fn wants(&self, f: Family) -> bool {
        self.families.contains(&f)
    }

    fn needs_labels(&self) -> bool {
        self.wants(Family::Ari) || self.wants(Family::MatrixError) || self.wants(Family::Risk)
    }

    fn curve(&self, a: &WeightedAdjacency, truth: &GroupLabels) -> ifam_core::Result<Vec<Vec<GroupDensity>>> {
        self.taus
            .iter()
            .map(|&tau| edge_densities(&threshold_binary(a, tau), truth))
            .collect()
    }

    fn replication(&self, dgp: &DgpConfig, rep: u64) -> ifam_core::Result<RepOutput> {
        let t = dgp.n_obs;
        let key = StreamKey::new(dgp.seed, rep);
        let (panel, truth) = generate_replication(dgp, rep)?;
        let cov = sample_covariance(&panel)?;
        let mut out = RepOutput::default();
        let mut sources: Vec<(String, GroupLabels)> = Vec::new();

        for &method in &self.methods {
            let settings = DetectSettings {
                method,
                r_c: self.cfg.r_c.into(),
                rho_grid: self.cfg.rho_grid.clone(),
                k_grid: self.cfg.k_grid.clone(),
                folds: self.cfg.folds,
                seed: key.sub_seed("rsc"),
            };
            let est = estimate_adjacency_from_cov(&cov, t, &settings)?;
            if self.wants(Family::Densities) {
                out.densities.push(DensityCurve {
                    t,
                    method: method.to_string(),
                    replication: rep,
                    by_tau: self.curve(&est.adjacency, &truth.labels)?,
                });
            }
            if self.needs_labels() {
                let (r_c, rho) = (est.r_c, est.rho);
                let det = detect_groups_from_estimate(&panel, est, &settings)?;
                out.ari.push(AriRow {
                    t,
                    method,
                    replication: rep,
                    k_hat: det.k_hat,
                    ari: adjusted_rand_index(&det.labels, &truth.labels)?,
                    r_c,
                    rho,
                });
                sources.push((method.to_string(), det.labels));
            }
        }

        if self.wants(Family::Densities) && self.methods.contains(&Method::Cov) {
            let r_max = self.cfg.cov_r_max.min(panel.n_assets() - 1);
            for r in 1..=r_max {
                let a = build_benchmark_adjacency(BenchmarkInput::Cov { cov: &cov, r_c: r })?;
                out.densities.push(DensityCurve {
                    t,
                    method: format!("cov_r{r}"),
                    replication: rep,
                    by_tau: self.curve(&a, &truth.labels)?,
                });
            }
        }

        if self.wants(Family::MatrixError) || self.wants(Family::Risk) {
            let mut shuffled = truth.labels.assignments().to_vec();
            shuffled.shuffle(&mut key.stream("permuted-labels"));
            sources.push(("true".to_string(), truth.labels.clone()));
            sources.push((
                "permuted".to_string(),
                GroupLabels::new(shuffled, truth.labels.num_groups())?,
            ));
            for (name, labels) in &sources {
                let fit = double_poet_from_cov(
                    &cov,
                    t,
                    labels,
                    self.cfg.r_c.into(),
                    &LocalFactorCount::Auto,
                    &ResidualThreshold::MinPd,
                )?;
                if self.wants(Family::MatrixError) {
                    let n = matrix_norms(&fit.estimate, &truth.sigma_true)?;
                    out.matrix_error.push(ErrorRow {
                        t,
                        labels: name.clone(),
                        replication: rep,
                        max: n.max,
                        frobenius: n.frobenius,
                        relative_frobenius: n.relative_frobenius,
                    });
                }
                if self.wants(Family::Risk) {
                    for w in min_variance_path(&fit.estimate, &self.c0s)? {
                        out.risk.push(RiskRow {
                            t,
                            labels: name.clone(),
                            replication: rep,
                            c0: w.c0(),
                            expected_risk: expected_risk(&w, &truth.sigma_true)?,
                        });
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Runs every `(T, replication)` cell. Failed cells are kept in `failures`.
pub fn run_experiment(cfg: &ExperimentConfig) -> CliResult<ExperimentResults> {
    let base = cfg
        .dgp
        .clone()
        .ok_or_else(|| CliError::config("experiment needs 'dgp'"))?;
    let plan = Plan {
        cfg,
        families: cfg.families(),
        methods: cfg.methods(),
        taus: cfg.tau_grid(),
        c0s: cfg.c0_grid(),
    };
    let t_grid = cfg.t_grid.clone().unwrap_or_else(|| vec![base.n_obs]);
    let cells: Vec<(DgpConfig, u64)> = t_grid
        .iter()
        .flat_map(|&t| {
            let dgp = DgpConfig { n_obs: t, ..base.clone() };
            (0..cfg.replications as u64).map(move |r| (dgp.clone(), r))
        })
        .collect();
    let outputs: Vec<_> = cells
        .par_iter()
        .map(|(dgp, rep)| {
            let res = plan.replication(dgp, *rep);
            match &res {
                Ok(_) => log::info!("T={} replication {rep} done", dgp.n_obs),
                Err(e) => log::warn!("T={} replication {rep} failed: {e}", dgp.n_obs),
            }
            res
        })
        .collect();

    let mut results = ExperimentResults {
        attempted: cells.len(),
        ..Default::default()
    };
    for ((dgp, rep), res) in cells.iter().zip(outputs) {
        match res {
            Ok(o) => {
                results.densities.extend(o.densities);
                results.ari.extend(o.ari);
                results.matrix_error.extend(o.matrix_error);
                results.risk.extend(o.risk);
            }
            Err(e) => results.failures.push(FailureRow {
                t: dgp.n_obs,
                replication: *rep,
                message: e.to_string(),
            }),
        }
    }
    Ok(results)
}

impl ExperimentResults {
    /// Mean-of-min within and mean-of-max between density per `(T, method, τ)`.
    pub fn density_summary(&self, taus: &[f64]) -> CliResult<Vec<DensitySummaryRow>> {
        let mut grouped: BTreeMap<(usize, &str), Vec<&DensityCurve>> = BTreeMap::new();
        for c in &self.densities {
            grouped.entry((c.t, c.method.as_str())).or_default().push(c);
        }
        let mut rows = Vec::new();
        for ((t, method), curves) in grouped {
            for (k, &tau) in taus.iter().enumerate() {
                let reps: Vec<Vec<GroupDensity>> = curves.iter().map(|c| c.by_tau[k].clone()).collect();
                let s = summarize_densities(&reps)?;
                rows.push(DensitySummaryRow {
                    t,
                    method: method.to_string(),
                    tau,
                    within_mean_of_min: s.within,
                    between_mean_of_max: s.between,
                    replications: reps.len(),
                });
            }
        }
        Ok(rows)
    }

    pub fn check_failures(&self) -> CliResult<()> {
        let failed = self.failures.len();
        if failed as f64 > MAX_FAILURE_SHARE * self.attempted as f64 {
            return Err(CliError::Numerical(format!(
                "{failed} of {} replications failed; first: {}",
                self.attempted,
                self.failures.first().map_or("", |f| f.message.as_str())
            )));
        }
        Ok(())
    }
}

pub fn cmd_experiment(cfg: &ExperimentConfig) -> CliResult<Manifest> {
    let mut run = Run::start(cfg)?;
    let results = run_experiment(cfg)?;
    let dgp = cfg.dgp.as_ref().expect("validated");
    let (ng, gs, seed) = (dgp.num_groups.to_string(), dgp.group_size.to_string(), cfg.seed().to_string());
    let taus = cfg.tau_grid();

    let mut failures = Table::create(&run.output("failures.csv"), &["T", "replication", "seed", "error"])?;
    for f in &results.failures {
        failures.row([f.t.to_string(), f.replication.to_string(), seed.clone(), f.message.clone()])?;
    }
    failures.finish()?;

    let families = cfg.families();
    if families.contains(&Family::Densities) {
        let mut files: BTreeMap<(usize, &str), Vec<&DensityCurve>> = BTreeMap::new();
        for c in &results.densities {
            files.entry((c.t, c.method.as_str())).or_default().push(c);
        }
        for ((t, method), curves) in files {
            let mut tab = Table::create(
                &run.output(&format!("densities_{method}_T{t}.csv")),
                &["replication", "tau", "group", "within", "between"],
            )?;
            for c in curves {
                for (tau, groups) in taus.iter().zip(&c.by_tau) {
                    for (g, d) in groups.iter().enumerate() {
                        tab.row([
                            c.replication.to_string(),
                            fmt_f64(*tau),
                            (g + 1).to_string(),
                            fmt_f64(d.within),
                            fmt_f64(d.between),
                        ])?;
                    }
                }
            }
            tab.finish()?;
        }
        let mut tab = Table::create(
            &run.output("density_summary.csv"),
            &["T", "method", "tau", "within_mean_of_min", "between_mean_of_max", "replications"],
        )?;
        for r in results.density_summary(&taus)? {
            tab.row([
                r.t.to_string(),
                r.method,
                fmt_f64(r.tau),
                fmt_f64(r.within_mean_of_min),
                fmt_f64(r.between_mean_of_max),
                r.replications.to_string(),
            ])?;
        }
        tab.finish()?;
    }
    if families.contains(&Family::Ari) {
        let mut tab = Table::create(
            &run.output("ari.csv"),
            &["T", "num_groups", "group_size", "method", "replication", "seed", "k_hat", "ari", "r_c", "rho"],
        )?;
        for r in &results.ari {
            tab.row([
                r.t.to_string(),
                ng.clone(),
                gs.clone(),
                r.method.to_string(),
                r.replication.to_string(),
                seed.clone(),
                r.k_hat.to_string(),
                fmt_f64(r.ari),
                r.r_c.to_string(),
                r.rho.map(fmt_f64).unwrap_or_default(),
            ])?;
        }
        tab.finish()?;
    }
    if families.contains(&Family::MatrixError) {
        let mut tab = Table::create(
            &run.output("matrix_error.csv"),
            &["T", "num_groups", "group_size", "labels", "replication", "seed", "max", "frobenius", "relative_frobenius"],
        )?;
        for r in &results.matrix_error {
            tab.row([
                r.t.to_string(),
                ng.clone(),
                gs.clone(),
                r.labels.clone(),
                r.replication.to_string(),
                seed.clone(),
                fmt_f64(r.max),
                fmt_f64(r.frobenius),
                fmt_f64(r.relative_frobenius),
            ])?;
        }
        tab.finish()?;
    }
    if families.contains(&Family::Risk) {
        let mut tab = Table::create(
            &run.output("risk.csv"),
            &["T", "num_groups", "group_size", "labels", "replication", "seed", "c0", "expected_risk"],
        )?;
        for r in &results.risk {
            tab.row([
                r.t.to_string(),
                ng.clone(),
                gs.clone(),
                r.labels.clone(),
                r.replication.to_string(),
                seed.clone(),
                fmt_f64(r.c0),
                fmt_f64(r.expected_risk),
            ])?;
        }
        tab.finish()?;
    }
    results.check_failures()?;
    run.finish(cfg)
}
