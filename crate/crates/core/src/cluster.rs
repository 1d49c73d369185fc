//! Regularized spectral clustering, cluster-count selection and the adjusted
//! Rand index.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::sample_covariance;
use crate::graph::WeightedAdjacency;
use crate::linalg::{sym_eigen, Cholesky, EigenDecomposition, MatrixRole, SymMatrix};
use crate::panel::{GroupLabels, ReturnPanel};
use crate::poet::{double_poet_from_cov, FactorCount, LocalFactorCount, ResidualThreshold};
use crate::rng::{StreamKey, StreamRng};

pub const KMEANS_RESTARTS: usize = 10;
const KMEANS_MAX_ITER: usize = 300;

/// Spectrum of the regularized Laplacian `L_τ = (D+τI)^{-1/2} A (D+τI)^{-1/2}`,
/// with `D_ii = Σ_j |A_ij|` and `τ` the mean degree. Reusable across `K`.
#[derive(Debug, Clone)]
pub struct RscEmbedding {
    eigen: EigenDecomposition,
}

impl RscEmbedding {
    pub fn new(a: &WeightedAdjacency) -> Result<Self> {
        let p = a.dim();
        let deg: Vec<f64> = (0..p)
            .map(|i| (0..p).map(|j| a.get(i, j).abs()).sum())
            .collect();
        let tau = deg.iter().sum::<f64>() / p as f64;
        if !(tau > 0.0) {
            return Err(Error::invalid("adjacency has no edges; the Laplacian is undefined"));
        }
        let scale: Vec<f64> = deg.iter().map(|d| 1.0 / (d + tau).sqrt()).collect();
        let lap = SymMatrix::from_lower(
            DMatrix::from_fn(p, p, |i, j| scale[i] * a.get(i, j) * scale[j]),
            MatrixRole::Adjacency,
        )?;
        Ok(Self {
            eigen: sym_eigen(&lap)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.eigen.values.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigen.values
    }

    /// Rows of eigenvectors 2..K (by descending eigenvalue), each scaled to unit
    /// length; all-zero rows stay zero.
    pub fn features(&self, k: usize) -> Result<Vec<Vec<f64>>> {
        let p = self.dim();
        if k < 2 {
            return Err(Error::invalid("spectral clustering needs K >= 2"));
        }
        if k > p {
            return Err(Error::invalid(format!("K = {k} exceeds {p} assets")));
        }
        Ok((0..p)
            .map(|i| {
                let row: Vec<f64> = (1..k).map(|c| self.eigen.vectors[(i, c)]).collect();
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    row.into_iter().map(|v| v / norm).collect()
                } else {
                    row
                }
            })
            .collect())
    }

    pub fn cluster(&self, k: usize, seed: u64) -> Result<GroupLabels> {
        let x = self.features(k)?;
        Ok(kmeans(&x, k, seed, KMEANS_RESTARTS)?.labels)
    }
}

/// Regularized spectral clustering into `k` groups.
pub fn rsc_cluster(a: &WeightedAdjacency, k: usize, seed: u64) -> Result<GroupLabels> {
    if k < 2 {
        return Err(Error::invalid("spectral clustering needs K >= 2"));
    }
    if k > a.dim() {
        return Err(Error::invalid(format!("K = {k} exceeds {} assets", a.dim())));
    }
    RscEmbedding::new(a)?.cluster(k, seed)
}

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub labels: GroupLabels,
    pub inertia: f64,
    pub restart: usize,
}

/// Lloyd's algorithm from k-means++ seeds, best of `restarts` runs by inertia
/// (ties to the earlier restart). Labels are numbered by first appearance.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, restarts: usize) -> Result<KMeansResult> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("cannot form {k} clusters from {n} points")));
    }
    let restarts = restarts.max(1);
    let mut best: Option<(Vec<usize>, f64, usize)> = None;
    for r in 0..restarts {
        let mut rng = StreamKey::new(seed, r as u64).stream("kmeans");
        let (assign, inertia) = lloyd(points, k, &mut rng);
        if best.as_ref().map_or(true, |b| inertia < b.1) {
            best = Some((assign, inertia, r));
        }
    }
    let (assign, inertia, restart) = best.expect("at least one restart");
    Ok(KMeansResult {
        labels: GroupLabels::from_raw(&assign)?,
        inertia,
        restart,
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn plus_plus(points: &[Vec<f64>], k: usize, rng: &mut StreamRng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random_range(0.0..total);
            let mut pick = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            // all remaining points coincide with a centre
            (0..n).find(|i| !chosen.contains(i)).expect("k <= n")
        };
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &points[next]));
        }
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

fn lloyd(points: &[Vec<f64>], k: usize, rng: &mut StreamRng) -> (Vec<usize>, f64) {
    let n = points.len();
    let dim = points[0].len();
    let mut centres = plus_plus(points, k, rng);
    let mut assign = vec![usize::MAX; n];
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, centre) in centres.iter().enumerate() {
                let d = sq_dist(p, centre);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        changed |= repair_empty(points, &centres, &mut assign, k);
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            counts[assign[i]] += 1;
            for (s, v) in sums[assign[i]].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            for v in &mut sums[c] {
                *v /= counts[c] as f64;
            }
        }
        centres = sums;
    }
    let inertia = points
        .iter()
        .zip(&assign)
        .map(|(p, &c)| sq_dist(p, &centres[c]))
        .sum();
    (assign, inertia)
}

/// Moves the worst-fitting point of a multi-point cluster into each empty one.
fn repair_empty(points: &[Vec<f64>], centres: &[Vec<f64>], assign: &mut [usize], k: usize) -> bool {
    let mut changed = false;
    loop {
        let mut counts = vec![0usize; k];
        for &a in assign.iter() {
            counts[a] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return changed;
        };
        let mut pick = None;
        let mut pick_d = -1.0;
        for (i, p) in points.iter().enumerate() {
            if counts[assign[i]] < 2 {
                continue;
            }
            let d = sq_dist(p, &centres[assign[i]]);
            if d > pick_d {
                pick_d = d;
                pick = Some(i);
            }
        }
        let i = pick.expect("some cluster has two points when one is empty");
        assign[i] = empty;
        changed = true;
    }
}

/// Adjusted Rand index between two partitions of the same assets.
pub fn adjusted_rand_index(a: &GroupLabels, b: &GroupLabels) -> Result<f64> {
    ari_from_slices(a.assignments(), b.assignments())
}

pub fn ari_from_slices(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dims(format!("{} vs {} labels", a.len(), b.len())));
    }
    let n = a.len();
    let choose2 = |x: usize| (x as f64) * (x as f64 - 1.0) / 2.0;
    let mut table: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut rows: BTreeMap<usize, usize> = BTreeMap::new();
    let mut cols: BTreeMap<usize, usize> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let sa: f64 = rows.values().map(|&c| choose2(c)).sum();
    let sb: f64 = cols.values().map(|&c| choose2(c)).sum();
    let expected = if n > 1 { sa * sb / choose2(n) } else { 0.0 };
    let max_index = 0.5 * (sa + sb);
    let denom = max_index - expected;
    if denom == 0.0 {
        return Ok(1.0);
    }
    Ok((index - expected) / denom)
}

/// `{2, …, min(40, p/4)}`, never empty for `p >= 2`.
pub fn default_k_grid(p: usize) -> Vec<usize> {
    let hi = (p / 4).min(40).max(2).min(p);
    (2..=hi).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvRow {
    pub k: usize,
    pub loss: Option<f64>,
    pub reason: Option<String>,
}

#[derive(Debug, Clone)]
pub struct KSelection {
    pub k_hat: usize,
    pub labels: GroupLabels,
    pub table: Vec<CvRow>,
}

/// Cross-validated Double-POET loss of one labeling:
/// `(1/C) Σ_i tr(S_test,i Σ̂_i⁻¹) + log det Σ̂_i`, with contiguous time folds.
pub fn cv_loss(panel: &ReturnPanel, labels: &GroupLabels, folds: usize) -> Result<f64> {
    let t = panel.n_obs();
    let mut total = 0.0;
    for i in 0..folds {
        let (start, end) = (i * t / folds, (i + 1) * t / folds);
        let test = panel.rows(start, end)?;
        let train = panel.rows_excluding(start, end)?;
        let s_test = sample_covariance(&test)?;
        let s_train = sample_covariance(&train)?;
        let fit = double_poet_from_cov(
            &s_train,
            train.n_obs(),
            labels,
            FactorCount::Auto,
            &LocalFactorCount::Auto,
            &ResidualThreshold::MinPd,
        )?;
        let chol = Cholesky::new(&fit.estimate)?;
        let mut x = s_test.matrix().clone();
        chol.solve_mut(&mut x);
        total += x.trace() + chol.log_det();
    }
    Ok(total / folds as f64)
}

/// Picks the labeling with the smallest cross-validated loss (ties to the
/// smaller `K`). A `K` whose fit fails is disqualified and logged.
pub fn select_num_clusters(
    panel: &ReturnPanel,
    labelings: &BTreeMap<usize, GroupLabels>,
    folds: usize,
) -> Result<KSelection> {
    if labelings.is_empty() {
        return Err(Error::invalid("no candidate labelings"));
    }
    if folds < 2 {
        return Err(Error::invalid("cross-validation needs at least 2 folds"));
    }
    if panel.n_obs() < 2 * folds {
        return Err(Error::invalid(format!(
            "{} observations cannot fill {folds} folds of at least 2 rows",
            panel.n_obs()
        )));
    }
    for (k, l) in labelings {
        if l.len() != panel.n_assets() {
            return Err(Error::dims(format!(
                "labeling for K = {k} covers {} of {} assets",
                l.len(),
                panel.n_assets()
            )));
        }
    }
    if labelings.len() == 1 {
        let (k, l) = labelings.iter().next().expect("one entry");
        return Ok(KSelection {
            k_hat: *k,
            labels: l.clone(),
            table: vec![CvRow {
                k: *k,
                loss: None,
                reason: Some("single candidate".into()),
            }],
        });
    }

    let entries: Vec<(&usize, &GroupLabels)> = labelings.iter().collect();
    let table: Vec<CvRow> = entries
        .par_iter()
        .map(|(k, l)| match cv_loss(panel, l, folds) {
            Ok(loss) if loss.is_finite() => CvRow {
                k: **k,
                loss: Some(loss),
                reason: None,
            },
            Ok(loss) => CvRow {
                k: **k,
                loss: None,
                reason: Some(format!("non-finite loss {loss}")),
            },
            Err(e) => {
                log::warn!("K = {k} disqualified: {e}");
                CvRow {
                    k: **k,
                    loss: None,
                    reason: Some(e.to_string()),
                }
            }
        })
        .collect();

    let best = table
        .iter()
        .filter_map(|r| r.loss.map(|l| (r.k, l)))
        .fold(None, |acc: Option<(usize, f64)>, (k, l)| match acc {
            Some((_, bl)) if bl <= l => acc,
            _ => Some((k, l)),
        });
    let Some((k_hat, _)) = best else {
        return Err(Error::Numerical(
            "every candidate number of clusters was disqualified".into(),
        ));
    };
    Ok(KSelection {
        k_hat,
        labels: labelings[&k_hat].clone(),
        table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::AdjacencySource;

    fn blocks(sizes: &[usize], w_in: f64, w_out: f64) -> WeightedAdjacency {
        block_matrix(sizes, w_in, w_out, false)
    }

    fn block_matrix(sizes: &[usize], w_in: f64, w_out: f64, signed: bool) -> WeightedAdjacency {
        let p: usize = sizes.iter().sum();
        let mut g = Vec::new();
        for (b, &s) in sizes.iter().enumerate() {
            g.extend(std::iter::repeat(b).take(s));
        }
        let m = DMatrix::from_fn(p, p, |i, j| {
            if i == j {
                0.0
            } else if g[i] == g[j] {
                w_in
            } else {
                w_out
            }
        });
        let source = if signed { AdjacencySource::GlassoSigned } else { AdjacencySource::Ifam };
        WeightedAdjacency::new(m, signed, source).unwrap()
    }

    #[test]
    fn separates_two_cliques() {
        let a = blocks(&[3, 3], 1.0, 0.0);
        let l = rsc_cluster(&a, 2, 1).unwrap();
        let truth = GroupLabels::contiguous(2, 3).unwrap();
        assert_eq!(adjusted_rand_index(&l, &truth).unwrap(), 1.0);
    }

    #[test]
    fn permutation_equivariant_on_blocks() {
        let a = blocks(&[4, 5, 3], 1.0, 0.05);
        let perm = [7, 2, 11, 0, 5, 9, 1, 4, 10, 3, 8, 6];
        let base = rsc_cluster(&a, 3, 4).unwrap();
        let moved = rsc_cluster(&a.permuted(&perm), 3, 4).unwrap();
        assert_eq!(base.permuted(&perm).canonical(), moved.canonical());
    }

    #[test]
    fn accepts_signed_adjacency() {
        let mut m = block_matrix(&[3, 3], 0.8, -0.3, true).entries().clone();
        m[(0, 1)] = 0.5;
        m[(1, 0)] = 0.5;
        let a = WeightedAdjacency::new(m, true, AdjacencySource::GlassoSigned).unwrap();
        let emb = RscEmbedding::new(&a).unwrap();
        // degrees from absolute weights: 0.5 + 0.8 + 3·0.3 for assets 0 and 1
        let deg = [2.2, 2.2, 2.5, 2.5, 2.5, 2.5];
        let tau = deg.iter().sum::<f64>() / 6.0;
        let lap = DMatrix::from_fn(6, 6, |i, j| a.get(i, j) / ((deg[i] + tau) * (deg[j] + tau)).sqrt());
        let want = sym_eigen(&SymMatrix::from_lower(lap, MatrixRole::Adjacency).unwrap()).unwrap();
        for (x, y) in emb.eigenvalues().iter().zip(&want.values) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(emb.cluster(2, 0).unwrap().num_groups(), 2);
    }

    #[test]
    fn rsc_errors() {
        let a = blocks(&[2, 2], 1.0, 0.0);
        assert!(rsc_cluster(&a, 5, 0).is_err());
        assert!(rsc_cluster(&a, 1, 0).is_err());
        let z = WeightedAdjacency::new(DMatrix::zeros(4, 4), false, AdjacencySource::Ifam).unwrap();
        assert!(rsc_cluster(&z, 2, 0).is_err());
    }

    #[test]
    fn rsc_is_deterministic() {
        let a = blocks(&[5, 5, 5], 1.0, 0.2);
        assert_eq!(rsc_cluster(&a, 3, 9).unwrap(), rsc_cluster(&a, 3, 9).unwrap());
    }

    #[test]
    fn kmeans_handles_duplicates() {
        let pts = vec![vec![0.0, 0.0]; 5];
        let r = kmeans(&pts, 3, 0, 2).unwrap();
        assert_eq!(r.labels.num_groups(), 3);
        assert_eq!(r.inertia, 0.0);
    }

    #[test]
    fn ari_examples() {
        let a = [0, 0, 1, 1];
        assert_eq!(ari_from_slices(&a, &a).unwrap(), 1.0);
        assert_eq!(ari_from_slices(&a, &[1, 1, 0, 0]).unwrap(), 1.0);
        assert!((ari_from_slices(&a, &[0, 1, 0, 1]).unwrap() + 0.5).abs() < 1e-15);
        assert!(ari_from_slices(&a, &[0, 1]).is_err());
    }

    #[test]
    fn k_grid_defaults() {
        assert_eq!(default_k_grid(200), (2..=40).collect::<Vec<_>>());
        assert_eq!(default_k_grid(20), vec![2, 3, 4, 5]);
        assert_eq!(default_k_grid(3), vec![2]);
    }
}
