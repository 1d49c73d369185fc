//! Acceptance suite: one PASS/FAIL line per criterion on stdout, supporting
//! tables on stderr.
//!
//! `IFAM_ACCEPTANCE=quick` skips the Monte Carlo criteria (4 to 7).
//! `IFAM_ACCEPTANCE_STRICT=1` turns any FAIL into a non-zero exit.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use ifam_core::linalg::{spd_inverse, MatrixRole, SymMatrix};
use ifam_core::portfolio::{gmv_weights, kkt_residual, min_variance_solve, min_variance_weights};
use ifam_core::precision::{glasso_solve, simplified_covariance, simplified_inverse_oracle, smw_reconstruct, GlassoSettings};
use ifam_core::{GroupLabels, Method, StreamKey};
use ifam_lab::experiment::{run_experiment, DensitySummaryRow, ExperimentResults};
use ifam_lab::{ExperimentConfig, Mode, Overrides};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

struct Line {
    id: usize,
    title: &'static str,
    pass: Option<bool>,
    detail: String,
    seconds: f64,
    limit: f64,
}

impl Line {
    fn print(&self) {
        let verdict = match self.pass {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "SKIP",
        };
        println!(
            "criterion {} {verdict} {}: {} [{:.1}s, limit {:.0}s]",
            self.id, self.title, self.detail, self.seconds, self.limit
        );
    }
}

fn timed<F: FnOnce() -> (bool, String)>(id: usize, title: &'static str, limit: f64, f: F) -> Line {
    let start = Instant::now();
    let (ok, detail) = f();
    let seconds = start.elapsed().as_secs_f64();
    Line {
        id,
        title,
        pass: Some(ok && seconds <= limit),
        detail,
        seconds,
        limit,
    }
}

fn random_spd(rng: &mut impl Rng, p: usize, ridge: f64) -> SymMatrix {
    let a = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
    SymMatrix::from_lower(&a * a.transpose() + DMatrix::identity(p, p) * ridge, MatrixRole::Covariance).unwrap()
}

fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

fn criterion_1() -> (bool, String) {
    const TOL: f64 = 1e-9;
    let mut rng = StreamKey::new(1, 0).stream("acceptance-oracle");
    let mut worst = 0.0_f64;
    for _ in 0..200 {
        let mut sizes = Vec::new();
        let k = rng.random_range(1..=4);
        for _ in 0..k {
            sizes.push(rng.random_range(1..=3));
        }
        let p: usize = sizes.iter().sum();
        let assign: Vec<usize> = sizes.iter().enumerate().flat_map(|(g, &s)| std::iter::repeat(g).take(s)).collect();
        let labels = GroupLabels::new(assign, k).unwrap();
        let b_c: Vec<f64> = (0..p).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b_g: Vec<f64> = (0..p).map(|_| rng.random_range(-2.0..2.0)).collect();
        let sigma_c2 = rng.random_range(0.1..5.0);
        let sigma_g2: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..3.0)).collect();
        let omega: Vec<f64> = (0..p).map(|_| rng.random_range(0.2..20.0)).collect();
        let sigma = simplified_covariance(&b_c, &b_g, &labels, sigma_c2, &sigma_g2, &omega).unwrap();
        let dense = spd_inverse(&sigma).unwrap();
        let closed = simplified_inverse_oracle(&b_c, &b_g, &labels, sigma_c2, &sigma_g2, &omega).unwrap();
        worst = worst.max(max_abs_diff(dense.matrix(), closed.matrix()));
    }
    (worst <= TOL, format!("200 instances, p <= 12, max |diff| {worst:.2e} <= {TOL:.0e}"))
}

fn kkt_violation(cov: &SymMatrix, omega: &SymMatrix, rho: f64) -> f64 {
    let w = spd_inverse(omega).unwrap();
    let p = cov.dim();
    let mut worst = 0.0_f64;
    for i in 0..p {
        for j in 0..p {
            let g = cov.get(i, j) - w.get(i, j);
            let o = omega.get(i, j);
            let v = if i == j {
                (g + rho).abs()
            } else if o == 0.0 {
                g.abs() - rho
            } else {
                (g + rho * o.signum()).abs()
            };
            worst = worst.max(v);
        }
    }
    worst
}

fn criterion_2() -> (bool, String) {
    const TOL: f64 = 1e-6;
    const KKT_TOL: f64 = 1e-5;
    let mut rng = StreamKey::new(2, 0).stream("acceptance-glasso");
    let mut zero = 0.0_f64;
    for _ in 0..50 {
        let p = rng.random_range(2..=20);
        let cov = random_spd(&mut rng, p, 0.3);
        let inv = spd_inverse(&cov).unwrap();
        let om = glasso_solve(&cov, &GlassoSettings::new(0.0)).unwrap();
        zero = zero.max(max_abs_diff(om.matrix(), inv.matrix()));
        // ρ = 0 is answered by a direct inverse; a vanishing penalty runs the sweeps
        let om = glasso_solve(&cov, &GlassoSettings::new(1e-9)).unwrap();
        zero = zero.max(max_abs_diff(om.matrix(), inv.matrix()));
    }
    let mut kkt = 0.0_f64;
    let mut solves = 0;
    for _ in 0..100 {
        let p = rng.random_range(3..=20);
        let cov = random_spd(&mut rng, p, 0.5);
        let off = (0..p).flat_map(|i| (0..i).map(move |j| (i, j))).map(|(i, j)| cov.get(i, j).abs()).fold(0.0, f64::max);
        let rho = off * rng.random_range(0.02..0.95);
        let om = glasso_solve(&cov, &GlassoSettings::new(rho)).unwrap();
        kkt = kkt.max(kkt_violation(&cov, &om, rho));
        solves += 1;
    }
    let mut dominant = 0.0_f64;
    for _ in 0..50 {
        let p = rng.random_range(2..=20);
        let cov = random_spd(&mut rng, p, 1.0);
        let off = (0..p).flat_map(|i| (0..i).map(move |j| (i, j))).map(|(i, j)| cov.get(i, j).abs()).fold(0.0, f64::max);
        let rho = off * 1.01;
        let om = glasso_solve(&cov, &GlassoSettings::new(rho)).unwrap();
        for i in 0..p {
            for j in 0..p {
                let want = if i == j { 1.0 / (cov.get(i, i) + rho) } else { 0.0 };
                dominant = dominant.max((om.get(i, j) - want).abs());
            }
        }
    }
    (
        zero <= TOL && kkt <= KKT_TOL && dominant <= TOL,
        format!(
            "zero and 1e-9 penalty {zero:.2e} <= {TOL:.0e} (50 instances); KKT {kkt:.2e} <= {KKT_TOL:.0e} ({solves} solves); \
             dominant penalty {dominant:.2e} <= {TOL:.0e} (50 solves)"
        ),
    )
}

fn criterion_3() -> (bool, String) {
    const TOL: f64 = 1e-9;
    let mut rng = StreamKey::new(3, 0).stream("acceptance-smw");
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let p = rng.random_range(4..=20);
        let r = rng.random_range(1..=3);
        let sigma_e = random_spd(&mut rng, p, 0.5);
        let raw = DMatrix::from_fn(p, r, |_, _| rng.random_range(-1.0..1.0));
        let u = raw.qr().q().columns(0, r).into_owned();
        let v: Vec<f64> = (0..r).map(|_| rng.random_range(1.0..50.0)).collect();
        let spike = &u * DMatrix::from_diagonal(&DVector::from_vec(v.clone())) * u.transpose();
        let sigma = SymMatrix::from_lower(sigma_e.matrix() + spike, MatrixRole::Covariance).unwrap();
        let got = smw_reconstruct(&spd_inverse(&sigma_e).unwrap(), &v, &u).unwrap();
        worst = worst.max(max_abs_diff(got.matrix(), spd_inverse(&sigma).unwrap().matrix()));
    }
    (worst <= TOL, format!("100 spiked instances, p <= 20, max |diff| {worst:.2e} <= {TOL:.0e}"))
}

fn criterion_8() -> (bool, String) {
    const FEAS_TOL: f64 = 1e-8;
    const KKT_TOL: f64 = 1e-7;
    const GMV_TOL: f64 = 1e-6;
    let mut rng = StreamKey::new(8, 0).stream("acceptance-portfolio");
    let mut feas = 0.0_f64;
    let mut kkt = 0.0_f64;
    let mut binding = 0;
    for _ in 0..1000 {
        let p = rng.random_range(2..=30);
        let beta: Vec<f64> = (0..p).map(|_| rng.random_range(0.2..1.8)).collect();
        let a = DMatrix::from_fn(p, p, |_, _| rng.random_range(-0.5..0.5));
        let d: Vec<f64> = (0..p).map(|_| rng.random_range(0.05..0.5)).collect();
        let m = DMatrix::from_fn(p, p, |i, j| beta[i] * beta[j]) + &a * a.transpose() / p as f64
            + DMatrix::from_diagonal(&DVector::from_vec(d));
        let cov = SymMatrix::from_lower(m, MatrixRole::Covariance).unwrap();
        let c0 = rng.random_range(1.0..4.0);
        let sol = min_variance_solve(&cov, c0).unwrap();
        let w = sol.weights.weights();
        feas = feas.max((w.iter().sum::<f64>() - 1.0).abs()).max(sol.weights.l1_norm() - c0);
        kkt = kkt.max(kkt_residual(&cov, &sol).unwrap());
        binding += usize::from(sol.lambda > 0.0);
    }
    let mut gmv = 0.0_f64;
    for _ in 0..100 {
        let p = rng.random_range(2..=30);
        let cov = random_spd(&mut rng, p, 0.2);
        let (g, _) = gmv_weights(&cov).unwrap();
        let l1: f64 = g.iter().map(|v| v.abs()).sum();
        let w = min_variance_weights(&cov, 2.0 * l1 + 1.0).unwrap();
        for (a, b) in w.weights().iter().zip(&g) {
            gmv = gmv.max((a - b).abs());
        }
    }
    (
        feas <= FEAS_TOL && kkt <= KKT_TOL && gmv <= GMV_TOL,
        format!(
            "1000 solves ({binding} with binding bound): feasibility {feas:.2e} <= {FEAS_TOL:.0e}, \
             KKT {kkt:.2e} <= {KKT_TOL:.0e}; large-c0 vs GMV {gmv:.2e} <= {GMV_TOL:.0e} (100 solves)"
        ),
    )
}

fn experiment_config(json: &str) -> ExperimentConfig {
    ExperimentConfig::from_json(json)
        .unwrap()
        .resolve(Mode::Experiment, Overrides::default())
        .unwrap()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// IFAM within density at a between density of `b`, linear between grid
/// points; `None` past IFAM's largest between density.
fn within_at(curve: &[(f64, f64)], b: f64) -> Option<f64> {
    let last = curve.last()?;
    if b > last.0 + 1e-15 {
        return None;
    }
    let k = curve.partition_point(|&(x, _)| x < b);
    if k == 0 || (curve[k].0 - b).abs() <= 1e-15 {
        return Some(curve[k].1);
    }
    let (x0, y0) = curve[k - 1];
    let (x1, y1) = curve[k];
    Some(y0 + (y1 - y0) * (b - x0) / (x1 - x0))
}

/// (between, within) points sorted by between, keeping the best within per
/// between level.
fn roc(rows: &[&DensitySummaryRow]) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.between_mean_of_max, r.within_mean_of_min)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    pts.dedup_by(|a, b| a.0 == b.0);
    pts
}

fn criterion_4(summary: &[DensitySummaryRow], t: usize) -> (bool, String) {
    const WITHIN_MIN: f64 = 0.05;
    const BETWEEN_MAX: f64 = 0.02;
    let at = |m: &str| -> Vec<&DensitySummaryRow> { summary.iter().filter(|r| r.t == t && r.method == m).collect() };
    let ifam = at("ifam");
    let separating: Vec<f64> = ifam
        .iter()
        .filter(|r| r.within_mean_of_min >= WITHIN_MIN && r.between_mean_of_max <= BETWEEN_MAX)
        .map(|r| r.tau)
        .collect();
    let curve = roc(&ifam);
    let ifam_max_between = curve.last().map_or(0.0, |p| p.0);
    let mut worst = f64::INFINITY;
    let mut worst_at = String::new();
    let mut compared = 0;
    let mut methods: Vec<String> = summary
        .iter()
        .filter(|r| r.t == t && r.method.starts_with("cov"))
        .map(|r| r.method.clone())
        .collect();
    methods.sort();
    methods.dedup();
    for m in &methods {
        for r in at(m) {
            let Some(w) = within_at(&curve, r.between_mean_of_max) else { continue };
            compared += 1;
            let gap = w - r.within_mean_of_min;
            if gap < worst {
                worst = gap;
                worst_at = format!("{m} tau={} between={:.4}", r.tau, r.between_mean_of_max);
            }
        }
    }
    eprintln!("criterion 4: IFAM separating taus {separating:?}; IFAM max between {ifam_max_between:.4}");
    eprintln!("criterion 4: {compared} matched points over {} COV curves, worst IFAM-COV gap {worst:.4} at {worst_at}", methods.len());
    (
        !separating.is_empty() && worst >= 0.0,
        format!(
            "T={t}: {} taus with within >= {WITHIN_MIN} and between <= {BETWEEN_MAX}; \
             IFAM-COV within gap at matched between, min {worst:.4} >= 0 over {compared} points (COV r=1..10 and auto)",
            separating.len()
        ),
    )
}

fn criterion_5(res: &ExperimentResults) -> (bool, String) {
    let mut by: BTreeMap<(usize, Method), Vec<f64>> = BTreeMap::new();
    for r in &res.ari {
        by.entry((r.t, r.method)).or_default().push(r.ari);
    }
    let m = |t: usize, method: Method| by.get(&(t, method)).map_or(f64::NAN, |v| mean(v));
    let mut ok = true;
    let mut parts = Vec::new();
    for t in [250, 1000] {
        let (i, c, g) = (m(t, Method::Ifam), m(t, Method::Cov), m(t, Method::Glasso));
        ok &= i > c && i > g;
        parts.push(format!("T={t} ifam {i:.4} cov {c:.4} glasso {g:.4}"));
        for method in Method::ALL {
            let ks: Vec<usize> = res.ari.iter().filter(|r| r.t == t && r.method == method).map(|r| r.k_hat).collect();
            eprintln!("criterion 5: T={t} {method} k_hat {ks:?}");
        }
    }
    ok &= m(1000, Method::Ifam) > m(250, Method::Ifam);
    (ok, format!("mean ARI {}; need ifam > cov, glasso at each T and ifam(1000) > ifam(250)", parts.join("; ")))
}

fn criterion_7(res: &ExperimentResults, t: usize) -> (bool, String) {
    const BAND: f64 = 0.02;
    let mut by: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for r in res.risk.iter().filter(|r| r.t == t) {
        by.entry((r.labels.clone(), format!("{}", r.c0))).or_default().push(r.expected_risk);
    }
    let mut ok = true;
    let mut parts = Vec::new();
    for c0 in ["1", "2", "3", "4"] {
        let m = |l: &str| by.get(&(l.to_string(), c0.to_string())).map_or(f64::NAN, |v| mean(v));
        let (i, c, g) = (m("ifam"), m("cov"), m("glasso"));
        ok &= i <= c * (1.0 + BAND) && i <= g * (1.0 + BAND);
        parts.push(format!("c0={c0} ifam/cov {:.4} ifam/glasso {:.4}", i / c, i / g));
        eprintln!(
            "criterion 7: c0={c0} ifam {i:.6e} cov {c:.6e} glasso {g:.6e} true {:.6e} permuted {:.6e}",
            m("true"),
            m("permuted")
        );
    }
    (ok, format!("T={t}, ratios {} <= {}", parts.join(", "), 1.0 + BAND))
}

fn criterion_6() -> (bool, String) {
    let cfg = experiment_config(
        r#"{"dgp": {"num_groups": 5, "group_size": 20, "T": 1000}, "seed": 6, "replications": 20,
            "t_grid": [250, 500, 1000], "methods": ["ifam"], "families": ["matrix_error"],
            "k_grid": [2, 3, 4, 5, 6, 7, 8]}"#,
    );
    let res = run_experiment(&cfg).unwrap();
    let mut by: BTreeMap<(usize, String), Vec<f64>> = BTreeMap::new();
    for r in &res.matrix_error {
        by.entry((r.t, r.labels.clone())).or_default().push(r.relative_frobenius);
    }
    let m = |t: usize, l: &str| by.get(&(t, l.to_string())).map_or(f64::NAN, |v| mean(v));
    for l in ["ifam", "true", "permuted"] {
        eprintln!(
            "criterion 6: {l} relative Frobenius T=250 {:.4} T=500 {:.4} T=1000 {:.4}",
            m(250, l),
            m(500, l),
            m(1000, l)
        );
    }
    let (a, b, c, p) = (m(250, "ifam"), m(500, "ifam"), m(1000, "ifam"), m(1000, "permuted"));
    (
        a > b && b > c && c < p && res.failures.is_empty(),
        format!("ifam labels {a:.4} > {b:.4} > {c:.4} (T=250, 500, 1000); permuted at T=1000 {p:.4} > {c:.4}"),
    )
}

fn bin() -> std::path::PathBuf {
    std::path::PathBuf::from(env!("CARGO_BIN_EXE_ifam-lab"))
}

fn ifam_lab(args: &[&str], threads: &str) -> Result<(), String> {
    let out = Command::new(bin())
        .args(args)
        .env("IFAM_THREADS", threads)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

/// Data files (all but the manifest) of two output directories, compared byte for byte.
fn same_outputs(a: &Path, b: &Path) -> Result<usize, String> {
    let mut names: Vec<_> = std::fs::read_dir(a)
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().file_name())
        .filter(|n| n != "manifest.json")
        .collect();
    names.sort();
    for n in &names {
        let x = std::fs::read(a.join(n)).map_err(|e| e.to_string())?;
        let y = std::fs::read(b.join(n)).map_err(|e| format!("{n:?}: {e}"))?;
        if x != y {
            return Err(format!("{n:?} differs"));
        }
    }
    let read_hash = |d: &Path| -> String {
        let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("manifest.json")).unwrap()).unwrap();
        m["config_sha256"].as_str().unwrap_or("").to_string()
    };
    if read_hash(a).is_empty() {
        return Err("manifest without config hash".into());
    }
    Ok(names.len())
}

fn criterion_9() -> (bool, String) {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let write = |name: &str, text: &str| {
        std::fs::write(d.join(name), text).unwrap();
        s(&d.join(name))
    };
    let sim = write("sim.json", r#"{"dgp": {"num_groups": 3, "group_size": 8, "T": 160}, "seed": 90}"#);
    let clu = write("cluster.json", r#"{"k_grid": [2, 3, 4, 5]}"#);
    let est = write("estimate.json", r#"{"k_grid": [2, 3, 4], "c0_grid": [1, 2]}"#);
    let bt = write(
        "backtest.json",
        r#"{"ifam_window": 120, "poet_window": 60, "refit_every": 10, "k_grid": [2, 3, 4], "c0_grid": [1, 2],
            "methods": ["ifam", "cov", "glasso"]}"#,
    );
    let exp = write(
        "experiment.json",
        r#"{"dgp": {"num_groups": 3, "group_size": 6, "T": 150}, "seed": 91, "replications": 3,
            "t_grid": [100, 150], "tau_grid": [0, 0.1, 0.3], "k_grid": [2, 3, 4], "c0_grid": [1, 2], "cov_r_max": 3}"#,
    );
    let run = || -> Result<usize, String> {
        let mut files = 0;
        let pair = |tag: &str, args: Vec<String>| -> Result<usize, String> {
            let a = d.join(format!("{tag}-a"));
            let b = d.join(format!("{tag}-b"));
            let mut x: Vec<String> = args.clone();
            x.extend(["--out".into(), s(&a)]);
            let mut y = args;
            y.extend(["--out".into(), s(&b)]);
            ifam_lab(&x.iter().map(String::as_str).collect::<Vec<_>>(), "1")?;
            ifam_lab(&y.iter().map(String::as_str).collect::<Vec<_>>(), "3")?;
            same_outputs(&a, &b).map_err(|e| format!("{tag}: {e}"))
        };
        files += pair("simulate", vec!["simulate".into(), "--config".into(), sim.clone()])?;
        let returns = s(&d.join("simulate-a/returns.csv"));
        let truth = s(&d.join("simulate-a/truth_labels.csv"));
        for m in ["ifam", "cov", "glasso"] {
            files += pair(
                &format!("cluster-{m}"),
                vec!["cluster", "--config", &clu, "--input", &returns, "--truth", &truth, "--method", m]
                    .into_iter()
                    .map(String::from)
                    .collect(),
            )?;
        }
        files += pair(
            "estimate",
            vec!["estimate", "--config", &est, "--input", &returns].into_iter().map(String::from).collect(),
        )?;
        files += pair(
            "backtest",
            vec!["backtest", "--config", &bt, "--input", &returns].into_iter().map(String::from).collect(),
        )?;
        files += pair("experiment", vec!["experiment".into(), "--config".into(), exp.clone()])?;
        Ok(files)
    };
    match run() {
        Ok(n) => (
            true,
            format!("simulate, cluster x3 methods, estimate, backtest, experiment rerun with 1 and 3 threads: {n} data files byte-identical"),
        ),
        Err(e) => (false, e),
    }
}

fn main() {
    // libtest-style flags from `cargo test` are accepted and ignored
    let quick = std::env::var("IFAM_ACCEPTANCE").is_ok_and(|v| v == "quick");
    let strict = std::env::var("IFAM_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut lines = vec![
        timed(1, "closed-form inverse oracle", 5.0, criterion_1),
        timed(2, "graphical lasso correctness", 30.0, criterion_2),
        timed(3, "low-rank reconstruction of the precision", 5.0, criterion_3),
    ];
    lines.iter().for_each(Line::print);

    if quick {
        for (id, title, limit) in [
            (4, "edge densities, IFAM vs COV", 900.0),
            (5, "ARI ordering", 1800.0),
            (6, "matrix error in T and against permuted labels", 1200.0),
            (7, "expected portfolio risk ordering", 1200.0),
        ] {
            let l = Line {
                id,
                title,
                pass: None,
                detail: "skipped (IFAM_ACCEPTANCE=quick)".into(),
                seconds: 0.0,
                limit,
            };
            l.print();
            lines.push(l);
        }
    } else {
        // criteria 4, 5 and 7 share one Monte Carlo run; each is charged its full time
        let start = Instant::now();
        let cfg = experiment_config(
            r#"{"dgp": {"num_groups": 10, "group_size": 20, "T": 1000}, "seed": 4, "replications": 20,
                "t_grid": [250, 1000], "k_grid": [5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15],
                "c0_grid": [1, 2, 3, 4], "cov_r_max": 10}"#,
        );
        let res = run_experiment(&cfg).unwrap();
        let shared = start.elapsed().as_secs_f64();
        eprintln!("shared Monte Carlo run: {shared:.1}s, {} failed cells", res.failures.len());
        for f in &res.failures {
            eprintln!("  failed T={} replication {}: {}", f.t, f.replication, f.message);
        }
        let failures_ok = res.check_failures().is_ok();
        let summary = res.density_summary(&cfg.tau_grid()).unwrap();
        let shared_line = |id, title, limit: f64, (ok, detail): (bool, String)| Line {
            id,
            title,
            pass: Some(ok && failures_ok && shared <= limit),
            detail,
            seconds: shared,
            limit,
        };
        for l in [
            shared_line(4, "edge densities, IFAM vs COV", 900.0, criterion_4(&summary, 1000)),
            shared_line(5, "ARI ordering", 1800.0, criterion_5(&res)),
            shared_line(7, "expected portfolio risk ordering", 1200.0, criterion_7(&res, 1000)),
        ] {
            l.print();
            lines.push(l);
        }
        let l = timed(6, "matrix error in T and against permuted labels", 1200.0, criterion_6);
        l.print();
        lines.push(l);
    }
    for l in [
        timed(8, "minimum-variance solver", 60.0, criterion_8),
        timed(9, "byte-identical reruns of every command", 600.0, criterion_9),
    ] {
        l.print();
        lines.push(l);
    }
    lines.sort_by_key(|l| l.id);
    let failed: Vec<usize> = lines.iter().filter(|l| l.pass == Some(false)).map(|l| l.id).collect();
    println!(
        "acceptance: {} pass, {} fail {failed:?}, {} skipped",
        lines.iter().filter(|l| l.pass == Some(true)).count(),
        failed.len(),
        lines.iter().filter(|l| l.pass.is_none()).count()
    );
    if strict && !failed.is_empty() {
        std::process::exit(1);
    }
}
