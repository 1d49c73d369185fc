//! Synthetic multi-level factor panels with full ground truth.
//!
//! Returns follow `y_it = b_iᶜ·f_tᶜ + b_i^{g}·f_t^{g} + u_it` with global
//! factors shared by every asset, local factors shared within a group, and a
//! sparse-precision idiosyncratic term.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Gamma, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{spd_inverse, Cholesky, MatrixRole, SymMatrix};
use crate::panel::{GroupLabels, ReturnPanel};
use crate::rng::{StreamKey, StreamRng};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpConfig {
    pub num_groups: usize,
    pub group_size: usize,
    #[serde(rename = "T")]
    pub n_obs: usize,
    #[serde(default = "default_global_factors")]
    pub r_c: usize,
    #[serde(default = "default_local_factors")]
    pub r_g: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_global_factors() -> usize {
    5
}

fn default_local_factors() -> usize {
    2
}

impl DgpConfig {
    pub fn new(num_groups: usize, group_size: usize, n_obs: usize, seed: u64) -> Self {
        Self {
            num_groups,
            group_size,
            n_obs,
            r_c: default_global_factors(),
            r_g: default_local_factors(),
            seed,
        }
    }

    pub fn n_assets(&self) -> usize {
        self.num_groups * self.group_size
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("num_groups", self.num_groups),
            ("group_size", self.group_size),
            ("T", self.n_obs),
            ("r_c", self.r_c),
            ("r_g", self.r_g),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be at least 1")));
            }
        }
        if self.num_groups < 2 {
            return Err(Error::invalid(
                "the idiosyncratic design needs at least 2 groups",
            ));
        }
        Ok(())
    }
}

/// Everything the generator knows that an estimator must not see.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub labels: GroupLabels,
    /// `p × r_c`
    pub loadings_global: DMatrix<f64>,
    /// `p × r_g`, row `i` holds the loadings on asset `i`'s own group factors.
    pub loadings_local: DMatrix<f64>,
    pub sigma_c: SymMatrix,
    pub sigma_g: SymMatrix,
    /// Variance multiplier `σ_g²` of each group's local factors.
    pub sigma_g_scales: Vec<f64>,
    pub sigma_u: SymMatrix,
    pub sigma_true: SymMatrix,
}

impl GroundTruth {
    pub fn global_part(&self) -> DMatrix<f64> {
        &self.loadings_global * self.sigma_c.matrix() * self.loadings_global.transpose()
    }

    /// Block-diagonal local factor covariance.
    pub fn local_part(&self) -> DMatrix<f64> {
        let p = self.labels.len();
        let mut out = DMatrix::zeros(p, p);
        for (g, members) in self.labels.members().iter().enumerate() {
            let scale = self.sigma_g_scales[g];
            for &i in members {
                for &j in members {
                    let bi = self.loadings_local.row(i);
                    let bj = self.loadings_local.row(j);
                    let v = (bi * self.sigma_g.matrix() * bj.transpose())[(0, 0)];
                    out[(i, j)] = scale * v;
                }
            }
        }
        out
    }

    /// Covariance left after removing the global factors.
    pub fn sigma_e(&self) -> SymMatrix {
        SymMatrix::from_lower(self.local_part() + self.sigma_u.matrix(), MatrixRole::Covariance)
            .expect("finite by construction")
    }
}

/// Global factor covariance: unit diagonal except `(r−1)+0.01` in the first
/// slot, and `−1` between the first factor and each other factor.
pub fn global_factor_covariance(r: usize) -> SymMatrix {
    if r == 1 {
        return SymMatrix::identity(1, MatrixRole::Covariance);
    }
    SymMatrix::from_fn(r, MatrixRole::Covariance, |i, j| match (i, j) {
        (0, 0) => 0.01 + (r - 1) as f64,
        (i, j) if i == j => 1.0,
        (_, 0) => -1.0,
        _ => 0.0,
    })
    .expect("finite")
}

/// Local factor covariance (before the per-group scale): `0.25` on the
/// diagonal plus `0.01` in the first slot, `−0.25` between the first factor
/// and each other factor.
pub fn local_factor_covariance(r: usize) -> SymMatrix {
    if r == 1 {
        return SymMatrix::identity(1, MatrixRole::Covariance);
    }
    SymMatrix::from_fn(r, MatrixRole::Covariance, |i, j| match (i, j) {
        (0, 0) => 0.01 + 0.25 * (r - 1) as f64,
        (i, j) if i == j => 0.25,
        (_, 0) => -0.25,
        _ => 0.0,
    })
    .expect("finite")
}

/// Probability that a given pair of groups is linked in the idiosyncratic
/// precision: `1 / (|𝒢| √ln|𝒢|)`.
pub fn idiosyncratic_link_rate(num_groups: usize) -> Result<f64> {
    if num_groups < 2 {
        return Err(Error::invalid("link rate needs at least 2 groups"));
    }
    let g = num_groups as f64;
    Ok((1.0 / (g * g.ln().sqrt())).min(1.0))
}

/// Draws `(global, local)` loadings. The first column is uniform and later
/// columns perturb it.
pub fn sample_loadings(cfg: &DgpConfig, rng: &mut StreamRng) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    cfg.validate()?;
    let p = cfg.n_assets();
    let first_c = Uniform::new(0.2, 1.8).expect("valid range");
    let step_c = Uniform::new(-0.16, 0.16).expect("valid range");
    let first_g = Uniform::new(0.5, 1.5).expect("valid range");
    let step_g = Uniform::new(-0.3, 0.3).expect("valid range");

    let mut bc = DMatrix::zeros(p, cfg.r_c);
    let mut bg = DMatrix::zeros(p, cfg.r_g);
    for i in 0..p {
        let base = first_c.sample(rng);
        bc[(i, 0)] = base;
        for l in 1..cfg.r_c {
            bc[(i, l)] = base + step_c.sample(rng);
        }
        let base = first_g.sample(rng);
        bg[(i, 0)] = base;
        for l in 1..cfg.r_g {
            bg[(i, l)] = base + step_g.sample(rng);
        }
    }
    Ok((bc, bg))
}

/// `Σ_u = 0.03² (S + Σ_{pairs} q (d₁+d₂)(d₁+d₂)ᵀ)⁻¹` with `S` a Gamma(50, 50)
/// diagonal and `q` Bernoulli per unordered pair of groups.
pub fn sample_idiosyncratic_covariance(
    cfg: &DgpConfig,
    labels: &GroupLabels,
    rng: &mut StreamRng,
) -> Result<SymMatrix> {
    cfg.validate()?;
    let p = labels.len();
    let num_groups = labels.num_groups();
    let rate = idiosyncratic_link_rate(num_groups)?;

    let gamma = Gamma::new(50.0, 1.0 / 50.0).expect("valid gamma");
    let link = Bernoulli::new(rate).expect("valid probability");
    let spike = Normal::new(0.0, 0.5).expect("valid normal");
    let members = labels.members();

    let mut m = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        m[(i, i)] = gamma.sample(rng);
    }
    for j1 in 0..num_groups {
        for j2 in (j1 + 1)..num_groups {
            if !link.sample(rng) {
                continue;
            }
            let a = members[j1][rng.random_range(0..members[j1].len())];
            let va: f64 = spike.sample(rng);
            let b = members[j2][rng.random_range(0..members[j2].len())];
            let vb: f64 = spike.sample(rng);
            // (d₁+d₂)(d₁+d₂)ᵀ has support {a, b} × {a, b}
            m[(a, a)] += va * va;
            m[(b, b)] += vb * vb;
            m[(a, b)] += va * vb;
            m[(b, a)] += va * vb;
        }
    }
    let precision = SymMatrix::from_lower(m, MatrixRole::Precision)?;
    Ok(spd_inverse(&precision)?.scale(0.03 * 0.03).with_role(MatrixRole::Covariance))
}

/// One simulated panel together with the population quantities behind it.
pub fn generate_panel(cfg: &DgpConfig) -> Result<(ReturnPanel, GroundTruth)> {
    generate_replication(cfg, 0)
}

/// Replication `rep` of the design; replications use independent streams.
pub fn generate_replication(cfg: &DgpConfig, rep: u64) -> Result<(ReturnPanel, GroundTruth)> {
    cfg.validate()?;
    let key = StreamKey::new(cfg.seed, rep);
    let p = cfg.n_assets();
    let labels = GroupLabels::contiguous(cfg.num_groups, cfg.group_size)?;

    let (bc, bg) = sample_loadings(cfg, &mut key.stream("loadings"))?;
    let sigma_u = sample_idiosyncratic_covariance(cfg, &labels, &mut key.stream("idiosyncratic"))?;
    let scale_dist = Gamma::new(5.0, 1.0 / 5.0).expect("valid gamma");
    let mut scale_rng = key.stream("group-scales");
    let sigma_g_scales: Vec<f64> = (0..cfg.num_groups)
        .map(|_| {
            let s: f64 = scale_dist.sample(&mut scale_rng);
            s * s
        })
        .collect();

    let sigma_c = global_factor_covariance(cfg.r_c);
    let sigma_g = local_factor_covariance(cfg.r_g);

    let chol_c = Cholesky::new(&sigma_c)?;
    let chol_g = Cholesky::new(&sigma_g)?;
    let chol_u = Cholesky::new(&sigma_u)?;

    let mut values = DMatrix::<f64>::zeros(cfg.n_obs, p);
    let mut rng = key.stream("returns");
    let draw = |rng: &mut StreamRng, n: usize| -> DVector<f64> {
        DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
    };
    for t in 0..cfg.n_obs {
        let fc = chol_c.lower() * draw(&mut rng, cfg.r_c);
        let local: Vec<DVector<f64>> = sigma_g_scales
            .iter()
            .map(|s2| chol_g.lower() * draw(&mut rng, cfg.r_g) * s2.sqrt())
            .collect();
        let u = chol_u.lower() * draw(&mut rng, p);
        for i in 0..p {
            let g = labels.group_of(i);
            let y = bc.row(i).dot(&fc.transpose()) + bg.row(i).dot(&local[g].transpose()) + u[i];
            values[(t, i)] = y;
        }
    }

    let mut truth = GroundTruth {
        labels,
        loadings_global: bc,
        loadings_local: bg,
        sigma_c,
        sigma_g,
        sigma_g_scales,
        sigma_u: sigma_u.clone(),
        sigma_true: SymMatrix::identity(1, MatrixRole::Covariance),
    };
    let total = truth.global_part() + truth.local_part() + sigma_u.matrix();
    truth.sigma_true = SymMatrix::from_lower(total, MatrixRole::Covariance)?;
    let panel = ReturnPanel::with_default_ids(values)?;
    Ok((panel, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sym_eigen;

    fn cfg(groups: usize, size: usize, t: usize) -> DgpConfig {
        DgpConfig::new(groups, size, t, 42)
    }

    #[test]
    fn displayed_factor_covariances() {
        let c = global_factor_covariance(5);
        assert_eq!(c.get(0, 0), 4.01);
        assert_eq!(c.get(0, 1), -1.0);
        assert_eq!(c.get(3, 3), 1.0);
        assert_eq!(c.get(2, 3), 0.0);
        let g = local_factor_covariance(2);
        assert_eq!(g.matrix().as_slice(), &[0.26, -0.25, -0.25, 0.25]);
    }

    #[test]
    fn loadings_respect_their_supports() {
        let c = cfg(4, 10, 10);
        let (bc, bg) = sample_loadings(&c, &mut StreamKey::new(1, 0).stream("l")).unwrap();
        for i in 0..40 {
            assert!((0.2..=1.8).contains(&bc[(i, 0)]));
            assert!((0.5..=1.5).contains(&bg[(i, 0)]));
            for l in 1..5 {
                assert!((bc[(i, l)] - bc[(i, 0)]).abs() <= 0.16);
            }
            assert!((bg[(i, 1)] - bg[(i, 0)]).abs() <= 0.3);
        }
        let again = sample_loadings(&c, &mut StreamKey::new(1, 0).stream("l")).unwrap();
        assert_eq!((bc, bg), again);
    }

    #[test]
    fn link_rate_for_ten_groups() {
        let r = idiosyncratic_link_rate(10).unwrap();
        let expect = 1.0 / (10.0 * 10f64.ln().sqrt());
        assert!((r - expect).abs() < 1e-15);
        assert!((r - 0.0659).abs() < 5e-5);
        assert!(idiosyncratic_link_rate(1).is_err());
    }

    #[test]
    fn idiosyncratic_covariance_is_spd() {
        let c = cfg(10, 5, 10);
        let labels = GroupLabels::contiguous(10, 5).unwrap();
        for rep in 0..20 {
            let s = sample_idiosyncratic_covariance(&c, &labels, &mut StreamKey::new(3, rep).stream("u"))
                .unwrap();
            assert!(Cholesky::new(&s).is_ok());
        }
    }

    #[test]
    fn no_links_gives_scaled_inverse_diagonal() {
        // Find a draw with no Bernoulli successes: Σ_u must then be diagonal.
        let c = cfg(2, 3, 10);
        let labels = GroupLabels::contiguous(2, 3).unwrap();
        let mut found = false;
        for rep in 0..50 {
            let s = sample_idiosyncratic_covariance(&c, &labels, &mut StreamKey::new(5, rep).stream("u"))
                .unwrap();
            let off = (0..6)
                .flat_map(|i| (0..6).map(move |j| (i, j)))
                .filter(|(i, j)| i != j)
                .any(|(i, j)| s.get(i, j) != 0.0);
            if !off {
                found = true;
                assert!(s.diagonal().iter().all(|&v| v > 0.0 && v < 0.01));
            }
        }
        assert!(found);
    }

    #[test]
    fn truth_matches_components_and_rank() {
        let c = cfg(3, 6, 20);
        let (panel, truth) = generate_panel(&c).unwrap();
        assert_eq!(panel.n_obs(), 20);
        assert_eq!(panel.n_assets(), 18);
        assert_eq!(truth.labels.group_sizes(), vec![6, 6, 6]);

        // direct elementwise rebuild
        let p = 18;
        for i in 0..p {
            for j in 0..p {
                let mut v = 0.0;
                for a in 0..5 {
                    for b in 0..5 {
                        v += truth.loadings_global[(i, a)] * truth.sigma_c.get(a, b) * truth.loadings_global[(j, b)];
                    }
                }
                let (gi, gj) = (truth.labels.group_of(i), truth.labels.group_of(j));
                if gi == gj {
                    for a in 0..2 {
                        for b in 0..2 {
                            v += truth.sigma_g_scales[gi]
                                * truth.loadings_local[(i, a)]
                                * truth.sigma_g.get(a, b)
                                * truth.loadings_local[(j, b)];
                        }
                    }
                }
                v += truth.sigma_u.get(i, j);
                assert!((truth.sigma_true.get(i, j) - v).abs() <= 1e-10);
            }
        }

        let low_rank = SymMatrix::from_lower(
            truth.sigma_true.matrix() - truth.sigma_u.matrix(),
            MatrixRole::Generic,
        )
        .unwrap();
        let e = sym_eigen(&low_rank).unwrap();
        let r = 5 + 3 * 2;
        assert!(e.values[r].abs() <= 1e-8 * e.values[0]);
        assert!(Cholesky::new(&truth.sigma_true).is_ok());
    }

    #[test]
    fn replications_are_reproducible_and_independent() {
        let c = cfg(2, 3, 5);
        let (a, _) = generate_replication(&c, 0).unwrap();
        let (b, _) = generate_replication(&c, 0).unwrap();
        let (d, _) = generate_replication(&c, 1).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, d);
    }

    #[test]
    fn rejects_degenerate_configs() {
        assert!(generate_panel(&cfg(1, 5, 10)).is_err());
        assert!(generate_panel(&cfg(2, 0, 10)).is_err());
    }
}
