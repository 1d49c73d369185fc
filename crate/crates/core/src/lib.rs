//! Group detection in multi-level factor models through the inverse
//! covariance: factor-adjusted graphical lasso, IFAM adjacency, regularized
//! spectral clustering, Double-POET covariance and minimum-variance
//! portfolios.

pub mod cluster;
pub mod dgp;
pub mod error;
pub mod factor;
pub mod graph;
pub mod linalg;
pub mod panel;
pub mod pipeline;
pub mod poet;
pub mod portfolio;
pub mod precision;
pub mod rng;

pub use cluster::{adjusted_rand_index, rsc_cluster, select_num_clusters, KSelection, RscEmbedding};
pub use dgp::{generate_panel, generate_replication, DgpConfig, GroundTruth};
pub use error::{Error, Result};
pub use graph::{AdjacencySource, BinaryAdjacency, GroupDensity, WeightedAdjacency};
pub use linalg::{matrix_norms, spd_inverse, sym_eigen, EigenDecomposition, MatrixNorms, MatrixRole, SymMatrix};
pub use panel::{GroupLabels, ReturnPanel};
pub use pipeline::{detect_groups, BacktestSettings, DetectSettings, LabelSource, Method};
pub use poet::{double_poet_estimate, FactorCount, LocalFactorCount, ResidualThreshold};
pub use portfolio::{
    expected_risk, min_variance_weights, realized_annualized_risk, BacktestLedger, BacktestRecord, PortfolioWeights,
};
pub use precision::{factor_adjusted_precision, glasso_solve, GlassoSettings};
pub use rng::StreamKey;
