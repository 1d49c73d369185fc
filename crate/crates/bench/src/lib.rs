//! Fixtures shared by the benchmarks.

use ifam_core::factor::{factor_adjust, sample_covariance};
use ifam_core::graph::{normalized_ifam, WeightedAdjacency};
use ifam_core::{generate_replication, DgpConfig, GroundTruth, ReturnPanel, SymMatrix};

pub struct Fixture {
    pub panel: ReturnPanel,
    pub truth: GroundTruth,
    pub cov: SymMatrix,
    /// Sample covariance with the leading principal components removed.
    pub residual: SymMatrix,
    pub population_ifam: WeightedAdjacency,
}

/// One replication of the simulation design with `groups × size` assets.
pub fn fixture(groups: usize, size: usize, t: usize) -> Fixture {
    let cfg = DgpConfig::new(groups, size, t, 7);
    let (panel, truth) = generate_replication(&cfg, 0).expect("valid design");
    let cov = sample_covariance(&panel).expect("covariance");
    let residual = factor_adjust(&cov, cfg.r_c).expect("factor adjustment").adjusted;
    let omega = ifam_core::spd_inverse(&truth.sigma_true).expect("SPD truth");
    let population_ifam = normalized_ifam(&omega).expect("adjacency");
    Fixture {
        panel,
        truth,
        cov,
        residual,
        population_ifam,
    }
}
