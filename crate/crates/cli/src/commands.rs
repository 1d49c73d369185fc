use std::path::Path;

use ifam_core::cluster::adjusted_rand_index;
use ifam_core::pipeline::{detect_groups, rolling_backtest_grid, BacktestSettings, DetectSettings, LabelSource};
use ifam_core::poet::{double_poet_fit, LocalFactorCount, ResidualThreshold};
use ifam_core::portfolio::{min_variance_path, realized_annualized_risk, BacktestLedger};
use ifam_core::{generate_panel, GroupLabels, Method};
use serde_json::json;

use crate::config::{ExperimentConfig, Mode};
use crate::csvio::{
    fmt_f64, group_sizes, read_labels, read_returns, read_sectors, write_json, write_labels, write_matrix,
    write_returns, write_sym, write_text, LabeledPanel, Table,
};
use crate::error::{CliError, CliResult};
use crate::experiment;
use crate::manifest::{Manifest, Run};

pub fn run(cfg: &ExperimentConfig) -> CliResult<Manifest> {
    match cfg.mode() {
        Mode::Simulate => simulate(cfg),
        Mode::Cluster => cluster(cfg),
        Mode::Estimate => estimate(cfg),
        Mode::Backtest => backtest(cfg),
        Mode::Experiment => experiment::cmd_experiment(cfg),
    }
}

fn input(cfg: &ExperimentConfig) -> CliResult<LabeledPanel> {
    read_returns(cfg.input_csv.as_deref().ok_or_else(|| CliError::config("input_csv is required"))?)
}

fn detect_settings(cfg: &ExperimentConfig, method: Method) -> DetectSettings {
    DetectSettings {
        method,
        r_c: cfg.r_c.into(),
        rho_grid: cfg.rho_grid.clone(),
        k_grid: cfg.k_grid.clone(),
        folds: cfg.folds,
        seed: cfg.seed(),
    }
}

fn threshold(cfg: &ExperimentConfig, ids: &[String]) -> CliResult<ResidualThreshold> {
    Ok(match &cfg.sectors_csv {
        Some(p) => ResidualThreshold::Sector(read_sectors(p, ids)?),
        None => ResidualThreshold::MinPd,
    })
}

fn labels_file(path: &Path, ids: &[String]) -> CliResult<GroupLabels> {
    read_labels(path, ids)
}

pub fn simulate(cfg: &ExperimentConfig) -> CliResult<Manifest> {
    let dgp = cfg.dgp.as_ref().ok_or_else(|| CliError::config("simulate needs 'dgp'"))?;
    let mut run = Run::start(cfg)?;
    let (panel, truth) = generate_panel(dgp)?;
    let lp = LabeledPanel {
        row_labels: (0..panel.n_obs()).map(|t| t.to_string()).collect(),
        panel,
    };
    let ids = lp.panel.asset_ids().to_vec();
    write_returns(&run.output("returns.csv"), &lp)?;
    write_labels(&run.output("truth_labels.csv"), &ids, &truth.labels)?;
    write_sym(&run.output("truth_sigma.csv"), &ids, &truth.sigma_true)?;
    run.finish(cfg)
}

pub fn cluster(cfg: &ExperimentConfig) -> CliResult<Manifest> {
    let lp = input(cfg)?;
    let ids = lp.panel.asset_ids().to_vec();
    let truth = match &cfg.truth_csv {
        Some(p) => Some(labels_file(p, &ids)?),
        None => None,
    };
    let mut run = Run::start(cfg)?;
    let det = detect_groups(&lp.panel, &detect_settings(cfg, cfg.method))?;
    write_labels(&run.output("labels.csv"), &ids, &det.labels)?;
    write_matrix(&run.output("adjacency.csv"), &ids, det.estimate.adjacency.entries())?;
    let diagnostics = json!({
        "method": cfg.method,
        "n_obs": lp.panel.n_obs(),
        "n_assets": lp.panel.n_assets(),
        "r_c": det.estimate.r_c,
        "rho": det.estimate.rho,
        "k_hat": det.k_hat,
        "group_sizes": group_sizes(&det.labels),
        "bic_table": det.estimate.bic_table,
        "cv_table": det.cv_table,
    });
    write_json(&run.output("diagnostics.json"), &diagnostics)?;
    if let Some(truth) = truth {
        let ari = adjusted_rand_index(&det.labels, &truth)?;
        write_text(&run.output("ari.txt"), &format!("{}\n", fmt_f64(ari)))?;
    }
    run.finish(cfg)
}

pub fn estimate(cfg: &ExperimentConfig) -> CliResult<Manifest> {
    let lp = input(cfg)?;
    let ids = lp.panel.asset_ids().to_vec();
    let threshold = threshold(cfg, &ids)?;
    let given = match &cfg.labels_csv {
        Some(p) => Some(labels_file(p, &ids)?),
        None => None,
    };
    let mut run = Run::start(cfg)?;
    let (labels, k_hat) = match given {
        Some(l) => (l, None),
        None => {
            let det = detect_groups(&lp.panel, &detect_settings(cfg, cfg.method))?;
            (det.labels, Some(det.k_hat))
        }
    };
    let fit = double_poet_fit(&lp.panel, &labels, cfg.r_c.into(), &LocalFactorCount::Auto, &threshold)?;
    write_sym(&run.output("sigma_hat.csv"), &ids, &fit.estimate)?;
    let c0s = cfg.c0_grid();
    let weights = min_variance_path(&fit.estimate, &c0s)?;
    let mut t = Table::create(&run.output("weights.csv"), &["c0", "asset_id", "weight"])?;
    for w in &weights {
        for (id, v) in ids.iter().zip(w.weights()) {
            t.row([fmt_f64(w.c0()), id.clone(), fmt_f64(*v)])?;
        }
    }
    t.finish()?;
    write_labels(&run.output("labels.csv"), &ids, &labels)?;
    let diagnostics = json!({
        "labels": if cfg.labels_csv.is_some() { "file".to_string() } else { cfg.method.to_string() },
        "k_hat": k_hat,
        "r_c": fit.r_c,
        "r_local": fit.r_local,
        "threshold_constant": fit.threshold_constant,
        "sector_threshold": cfg.sectors_csv.is_some(),
    });
    write_json(&run.output("diagnostics.json"), &diagnostics)?;
    run.finish(cfg)
}

/// Out-of-sample periods as `(name, first record, end record)`; split points
/// are record offsets into the out-of-sample stretch.
pub fn periods(n_records: usize, splits: Option<&[usize]>) -> CliResult<Vec<(String, usize, usize)>> {
    let cuts: Vec<usize> = match splits {
        Some(s) => s.to_vec(),
        None => vec![n_records / 2],
    };
    let mut bounds = vec![0];
    for &c in &cuts {
        if c == 0 || c >= n_records || c <= *bounds.last().expect("non-empty") {
            return Err(CliError::config(format!(
                "period split {c} must be increasing and inside (0, {n_records})"
            )));
        }
        bounds.push(c);
    }
    bounds.push(n_records);
    let mut out = vec![("full".to_string(), 0, n_records)];
    for (i, w) in bounds.windows(2).enumerate() {
        out.push((format!("period{}", i + 1), w[0], w[1]));
    }
    Ok(out)
}

pub fn backtest(cfg: &ExperimentConfig) -> CliResult<Manifest> {
    let lp = input(cfg)?;
    let ids = lp.panel.asset_ids().to_vec();
    let threshold = threshold(cfg, &ids)?;
    let t = lp.panel.n_obs();
    if t <= cfg.ifam_window {
        return Err(CliError::data(format!(
            "{t} rows of history; backtest needs at least ifam_window + 1 = {}",
            cfg.ifam_window + 1
        )));
    }
    let runs: Vec<(String, LabelSource, Method)> = match &cfg.labels_csv {
        Some(p) => vec![("labels".to_string(), LabelSource::Fixed(labels_file(p, &ids)?), cfg.method)],
        None => cfg
            .methods()
            .into_iter()
            .map(|m| (m.to_string(), LabelSource::Detect, m))
            .collect(),
    };
    let n_records = t - cfg.ifam_window;
    let periods = periods(n_records, cfg.period_splits.as_deref())?;
    let c0s = cfg.c0_grid();
    let mut run = Run::start(cfg)?;
    let mut results: Vec<(String, Vec<BacktestLedger>)> = Vec::new();
    for (name, source, method) in runs {
        let settings = BacktestSettings {
            detect: detect_settings(cfg, method),
            ifam_window: cfg.ifam_window,
            poet_window: cfg.poet_window,
            refit_every: cfg.refit_every,
            r_c: cfg.r_c.into(),
            r_local: LocalFactorCount::Auto,
        };
        log::info!("backtest with {name} labels over {n_records} steps");
        let ledgers = rolling_backtest_grid(&lp.panel, &settings, &source, &threshold, &c0s)?;
        results.push((name, ledgers));
    }

    let mut ledger_csv = Table::create(
        &run.output("ledger.csv"),
        &["method", "step", "window_end", "date", "c0", "realized_return", "l1_norm"],
    )?;
    for (name, ledgers) in &results {
        for (ledger, &c0) in ledgers.iter().zip(&c0s) {
            for (step, r) in ledger.records().iter().enumerate() {
                ledger_csv.row([
                    name.clone(),
                    step.to_string(),
                    r.window_end.to_string(),
                    lp.row_labels[r.window_end].clone(),
                    fmt_f64(c0),
                    fmt_f64(r.realized_return),
                    fmt_f64(r.weights.l1_norm()),
                ])?;
            }
        }
    }
    ledger_csv.finish()?;

    let mut summary = Table::create(
        &run.output("summary.csv"),
        &["method", "c0", "period", "start", "end", "n", "annualized_risk"],
    )?;
    for (name, ledgers) in &results {
        for (ledger, &c0) in ledgers.iter().zip(&c0s) {
            for (period, a, b) in &periods {
                let w = cfg.ifam_window;
                let part = ledger.slice_rows(w + a, w + b);
                summary.row([
                    name.clone(),
                    fmt_f64(c0),
                    period.clone(),
                    lp.row_labels[w + a].clone(),
                    lp.row_labels[w + b - 1].clone(),
                    part.len().to_string(),
                    fmt_f64(realized_annualized_risk(&part)?),
                ])?;
            }
        }
    }
    summary.finish()?;
    run.finish(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_periods_halve_the_history() {
        let p = periods(11, None).unwrap();
        assert_eq!(
            p,
            vec![("full".into(), 0, 11), ("period1".into(), 0, 5), ("period2".into(), 5, 11)]
        );
        assert_eq!(periods(10, Some(&[3, 7])).unwrap().len(), 4);
        assert!(periods(10, Some(&[7, 3])).is_err());
        assert!(periods(10, Some(&[10])).is_err());
    }
}
