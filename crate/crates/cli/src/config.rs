//! JSON run configuration.
//!
//! Values are resolved as command-line flags, then the config file, then the
//! defaults below. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use ifam_core::poet::FactorCount;
use ifam_core::{DgpConfig, Method};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Simulate,
    Cluster,
    Estimate,
    Backtest,
    Experiment,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Simulate => "simulate",
            Mode::Cluster => "cluster",
            Mode::Estimate => "estimate",
            Mode::Backtest => "backtest",
            Mode::Experiment => "experiment",
        }
    }
}

/// Output tables of the experiment driver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Edge densities over the τ grid, with the precision-vs-FPR summary.
    Densities,
    Ari,
    MatrixError,
    Risk,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Densities, Family::Ari, Family::MatrixError, Family::Risk];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoKeyword {
    Auto,
}

/// A factor count written as a number or `"auto"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FactorSpec {
    Fixed(usize),
    Auto(AutoKeyword),
}

impl Default for FactorSpec {
    fn default() -> Self {
        FactorSpec::Auto(AutoKeyword::Auto)
    }
}

impl From<FactorSpec> for FactorCount {
    fn from(f: FactorSpec) -> Self {
        match f {
            FactorSpec::Fixed(r) => FactorCount::Fixed(r),
            FactorSpec::Auto(_) => FactorCount::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub mode: Option<Mode>,
    pub dgp: Option<DgpConfig>,
    pub input_csv: Option<PathBuf>,
    pub sectors_csv: Option<PathBuf>,
    /// Fixed group labels for `estimate` and `backtest`.
    pub labels_csv: Option<PathBuf>,
    /// True labels for scoring `cluster` output.
    pub truth_csv: Option<PathBuf>,
    pub method: Method,
    /// Methods compared by `experiment` and `backtest`; defaults to all three
    /// for experiments and to `method` for backtests.
    pub methods: Option<Vec<Method>>,
    pub replications: usize,
    /// Sample sizes swept by `experiment`; defaults to the DGP's own `T`.
    pub t_grid: Option<Vec<usize>>,
    pub tau_grid: Option<Vec<f64>>,
    pub rho_grid: Option<Vec<f64>>,
    pub c0_grid: Option<Vec<f64>>,
    pub k_grid: Option<Vec<usize>>,
    pub folds: usize,
    pub r_c: FactorSpec,
    /// Falls back to `dgp.seed`, then 0.
    pub seed: Option<u64>,
    pub output_dir: PathBuf,
    pub ifam_window: usize,
    pub poet_window: usize,
    pub refit_every: usize,
    /// Out-of-sample record indices where backtest sub-periods start; the
    /// default is one split at the midpoint.
    pub period_splits: Option<Vec<usize>>,
    pub families: Option<Vec<Family>>,
    /// The COV density curves take the best of `r_c = 1..=cov_r_max`.
    pub cov_r_max: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: None,
            dgp: None,
            input_csv: None,
            sectors_csv: None,
            labels_csv: None,
            truth_csv: None,
            method: Method::Ifam,
            methods: None,
            replications: 20,
            t_grid: None,
            tau_grid: None,
            rho_grid: None,
            c0_grid: None,
            k_grid: None,
            folds: 2,
            r_c: FactorSpec::default(),
            seed: None,
            output_dir: PathBuf::from("ifam-out"),
            ifam_window: 500,
            poet_window: 50,
            refit_every: 1,
            period_splits: None,
            families: None,
            cov_r_max: 10,
        }
    }
}

/// Values given on the command line; `None` leaves the file value alone.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub method: Option<Method>,
    pub truth_csv: Option<PathBuf>,
    pub input_csv: Option<PathBuf>,
    pub labels_csv: Option<PathBuf>,
    pub sectors_csv: Option<PathBuf>,
    pub replications: Option<usize>,
}

pub const DEFAULT_TAU_POINTS: usize = 101;

impl ExperimentConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::config(format!("bad config JSON: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Applies flags and the subcommand, then checks the fields that mode needs.
    pub fn resolve(mut self, mode: Mode, o: Overrides) -> CliResult<Self> {
        if let Some(m) = self.mode {
            if m != mode {
                return Err(CliError::config(format!(
                    "config is for '{}' but the command is '{}'",
                    m.name(),
                    mode.name()
                )));
            }
        }
        self.mode = Some(mode);
        if o.seed.is_some() {
            self.seed = o.seed;
        }
        if self.seed.is_none() {
            self.seed = Some(self.dgp.as_ref().map_or(0, |d| d.seed));
        }
        let seed = self.seed();
        if let Some(d) = self.dgp.as_mut() {
            d.seed = seed;
        }
        macro_rules! take {
            ($($f:ident),*) => { $( if let Some(v) = o.$f { self.$f = Some(v); } )* };
        }
        take!(truth_csv, input_csv, labels_csv, sectors_csv);
        if let Some(v) = o.output_dir {
            self.output_dir = v;
        }
        if let Some(v) = o.method {
            self.method = v;
        }
        if let Some(v) = o.replications {
            self.replications = v;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn mode(&self) -> Mode {
        self.mode.unwrap_or(Mode::Experiment)
    }

    fn require<'a, T>(&self, v: &'a Option<T>, name: &str) -> CliResult<&'a T> {
        v.as_ref()
            .ok_or_else(|| CliError::config(format!("'{}' needs '{name}'", self.mode().name())))
    }

    pub fn validate(&self) -> CliResult<()> {
        let mode = self.mode();
        match mode {
            Mode::Simulate | Mode::Experiment => {
                let d = self.require(&self.dgp, "dgp")?;
                d.validate().map_err(|e| CliError::config(e.to_string()))?;
            }
            Mode::Cluster | Mode::Estimate | Mode::Backtest => {
                self.require(&self.input_csv, "input_csv")?;
            }
        }
        if self.folds < 2 {
            return Err(CliError::config("folds must be at least 2"));
        }
        if mode == Mode::Experiment && self.replications == 0 {
            return Err(CliError::config("replications must be positive"));
        }
        if let Some(g) = &self.tau_grid {
            if g.is_empty() || g.iter().any(|t| !t.is_finite()) {
                return Err(CliError::config("tau_grid must be a non-empty list of finite numbers"));
            }
        }
        if let Some(g) = &self.rho_grid {
            if g.is_empty() || g.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
                return Err(CliError::config("rho_grid must be a non-empty list of positive numbers"));
            }
        }
        if let Some(g) = &self.c0_grid {
            if g.is_empty() || g.iter().any(|c| !(*c >= 1.0) || !c.is_finite()) {
                return Err(CliError::config("c0_grid must be a non-empty list of numbers ≥ 1"));
            }
        }
        if let Some(g) = &self.k_grid {
            if g.is_empty() || g.iter().any(|&k| k < 2) {
                return Err(CliError::config("k_grid must be a non-empty list of integers ≥ 2"));
            }
        }
        if let Some(g) = &self.t_grid {
            if g.is_empty() || g.iter().any(|&t| t < 2 * self.folds) {
                return Err(CliError::config(format!(
                    "t_grid must be non-empty with every T ≥ {}",
                    2 * self.folds
                )));
            }
        }
        if let Some(m) = &self.methods {
            if m.is_empty() {
                return Err(CliError::config("methods must not be empty"));
            }
        }
        if let Some(f) = &self.families {
            if f.is_empty() {
                return Err(CliError::config("families must not be empty"));
            }
        }
        if mode == Mode::Backtest {
            if self.poet_window < 2 || self.poet_window > self.ifam_window {
                return Err(CliError::config(format!(
                    "poet_window {} must lie in [2, ifam_window {}]",
                    self.poet_window, self.ifam_window
                )));
            }
            if self.refit_every == 0 {
                return Err(CliError::config("refit_every must be positive"));
            }
        }
        if self.cov_r_max == 0 {
            return Err(CliError::config("cov_r_max must be positive"));
        }
        Ok(())
    }

    pub fn tau_grid(&self) -> Vec<f64> {
        self.tau_grid
            .clone()
            .unwrap_or_else(|| ifam_core::graph::default_tau_grid(DEFAULT_TAU_POINTS))
    }

    /// 1 to 4 by 0.25 for simulations, 1 to 8 by 0.5 for backtests.
    pub fn c0_grid(&self) -> Vec<f64> {
        match &self.c0_grid {
            Some(g) => g.clone(),
            None if self.mode() == Mode::Backtest => (0..=14).map(|k| 1.0 + 0.5 * k as f64).collect(),
            None => (0..=12).map(|k| 1.0 + 0.25 * k as f64).collect(),
        }
    }

    pub fn methods(&self) -> Vec<Method> {
        match &self.methods {
            Some(m) => m.clone(),
            None if self.mode() == Mode::Experiment => Method::ALL.to_vec(),
            None => vec![self.method],
        }
    }

    pub fn families(&self) -> Vec<Family> {
        let mut f = self.families.clone().unwrap_or_else(|| Family::ALL.to_vec());
        f.sort();
        f.dedup();
        f
    }

    /// Hex SHA-256 of the config serialised with sorted keys.
    pub fn canonical_hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serialises");
        let bytes = serde_json::to_vec(&value).expect("value serialises");
        hex(&Sha256::digest(&bytes))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beat_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"input_csv": "a.csv", "seed": 5, "folds": 3}"#).unwrap();
        let o = Overrides {
            seed: Some(9),
            ..Overrides::default()
        };
        let r = cfg.resolve(Mode::Cluster, o).unwrap();
        assert_eq!(r.seed(), 9);
        assert_eq!(r.folds, 3);
        assert_eq!(r.ifam_window, 500);
    }

    #[test]
    fn dgp_seed_is_the_fallback() {
        let cfg = ExperimentConfig::from_json(r#"{"dgp": {"num_groups": 2, "group_size": 3, "T": 50, "seed": 4}}"#)
            .unwrap()
            .resolve(Mode::Simulate, Overrides::default())
            .unwrap();
        assert_eq!(cfg.seed(), 4);
        let cfg = cfg.resolve(Mode::Simulate, Overrides { seed: Some(8), ..Overrides::default() }).unwrap();
        assert_eq!(cfg.dgp.unwrap().seed, 8);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ExperimentConfig::from_json(r#"{"bogus": 1}"#).is_err());
        let cfg = ExperimentConfig::default();
        let e = cfg.clone().resolve(Mode::Simulate, Overrides::default()).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let e = ExperimentConfig::from_json(r#"{"input_csv": "x", "mode": "cluster"}"#)
            .unwrap()
            .resolve(Mode::Backtest, Overrides::default())
            .unwrap_err();
        assert!(e.to_string().contains("cluster"));
        let e = ExperimentConfig::from_json(r#"{"input_csv": "x", "c0_grid": [0.5]}"#)
            .unwrap()
            .resolve(Mode::Backtest, Overrides::default())
            .unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn factor_spec_accepts_number_or_auto() {
        let a: ExperimentConfig = ExperimentConfig::from_json(r#"{"r_c": 3}"#).unwrap();
        assert_eq!(FactorCount::from(a.r_c), FactorCount::Fixed(3));
        let b: ExperimentConfig = ExperimentConfig::from_json(r#"{"r_c": "auto"}"#).unwrap();
        assert_eq!(FactorCount::from(b.r_c), FactorCount::Auto);
        assert!(ExperimentConfig::from_json(r#"{"r_c": "many"}"#).is_err());
    }

    #[test]
    fn hash_tracks_every_field() {
        let base = ExperimentConfig::default();
        let mut other = base.clone();
        other.poet_window = 51;
        assert_ne!(base.canonical_hash(), other.canonical_hash());
        assert_eq!(base.canonical_hash(), base.clone().canonical_hash());
        assert_eq!(base.canonical_hash().len(), 64);
    }

    #[test]
    fn default_grids() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.tau_grid().len(), 101);
        let c0 = cfg.c0_grid();
        assert_eq!((c0[0], *c0.last().unwrap(), c0.len()), (1.0, 4.0, 13));
        let bt = ExperimentConfig {
            mode: Some(Mode::Backtest),
            ..ExperimentConfig::default()
        };
        let c0 = bt.c0_grid();
        assert_eq!((c0[0], *c0.last().unwrap(), c0.len()), (1.0, 8.0, 15));
    }
}
