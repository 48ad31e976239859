//! Evaluation: branch-wise mean trajectories and their reconstruction error,
//! distribution distances between predicted and observed populations, and the
//! leave-one-timepoint-out driver.

mod kmeans;

pub use kmeans::{cluster_purity, kmeans, KMeans};

use serde::{Deserialize, Serialize};

use crate::dynamics::TrajectoryBatch;
use crate::error::{Error, Result};
use crate::numerics::rng::{splitmix64, subsample};
use crate::numerics::{dist, median, sq_dist, Matrix, RngState};
use crate::training::{train, TrainConfig};
use crate::transport::{cost_matrix, emd_with_cost};

/// k-means restarts used by [`branch_means`].
pub const KMEANS_RESTARTS: usize = 20;

/// Default subsample cap for [`w1`].
pub const W1_CAP: usize = 1000;

/// Mean trajectory of each endpoint cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchSummary {
    pub k: usize,
    /// One `(steps + 1) x d` path per branch.
    pub mean_paths: Vec<Matrix>,
    /// Branch of every input trajectory.
    pub assignment: Vec<usize>,
}

impl BranchSummary {
    /// Fraction of trajectories assigned to each branch.
    pub fn shares(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.k];
        self.assignment.iter().for_each(|&a| c[a] += 1.0);
        let n = self.assignment.len().max(1) as f64;
        c.iter().map(|v| v / n).collect()
    }
}

/// Clusters trajectories by their endpoints and averages each cluster's paths.
pub fn branch_means(batch: &TrajectoryBatch, k: usize, seed: u64) -> Result<BranchSummary> {
    branch_means_from_paths(&batch.paths, k, seed)
}

/// [`branch_means`] on bare paths, all of the same shape.
pub fn branch_means_from_paths(paths: &[Matrix], k: usize, seed: u64) -> Result<BranchSummary> {
    if k == 0 || k > paths.len() {
        return Err(Error::arg(format!(
            "cannot form {k} branches from {} trajectories",
            paths.len()
        )));
    }
    let shape = paths[0].shape();
    if paths.iter().any(|p| p.shape() != shape || p.rows() == 0) {
        return Err(Error::dim("trajectories differ in length or dimension"));
    }
    let ends: Vec<Vec<f64>> = paths.iter().map(|p| p.row(p.rows() - 1).to_vec()).collect();
    let km = kmeans(
        &Matrix::from_rows(&ends)?,
        k,
        KMEANS_RESTARTS,
        RngState::new(seed),
    )?;
    let mut sums = vec![Matrix::zeros(shape.0, shape.1); k];
    let mut counts = vec![0usize; k];
    for (p, &a) in paths.iter().zip(&km.assignment) {
        counts[a] += 1;
        sums[a]
            .data_mut()
            .iter_mut()
            .zip(p.data())
            .for_each(|(s, v)| *s += v);
    }
    let mean_paths = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| s.scale(1.0 / c.max(1) as f64))
        .collect();
    Ok(BranchSummary {
        k,
        mean_paths,
        assignment: km.assignment,
    })
}

/// Mean and standard deviation over test points of the distance to the
/// nearest vertex of any mean path.
pub fn trajectory_error(test_points: &Matrix, summary: &BranchSummary) -> Result<(f64, f64)> {
    if test_points.rows() == 0 {
        return Err(Error::arg("no test points"));
    }
    if summary
        .mean_paths
        .iter()
        .any(|p| p.cols() != test_points.cols())
    {
        return Err(Error::dim("test points and paths differ in dimension"));
    }
    let errs: Vec<f64> = test_points
        .row_iter()
        .map(|x| {
            summary
                .mean_paths
                .iter()
                .flat_map(|p| p.row_iter())
                .map(|v| sq_dist(x, v))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect();
    let n = errs.len() as f64;
    let mean = errs.iter().sum::<f64>() / n;
    let var = errs.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

fn content_hash(x: &Matrix) -> u64 {
    let mut h = splitmix64(x.rows() as u64 ^ ((x.cols() as u64) << 32));
    for v in x.data() {
        h = splitmix64(h ^ v.to_bits());
    }
    h
}

fn check_pair(x: &Matrix, y: &Matrix) -> Result<()> {
    if x.rows() == 0 || y.rows() == 0 {
        return Err(Error::arg("empty sample"));
    }
    if x.cols() != y.cols() {
        return Err(Error::dim(format!(
            "samples in dimensions {} and {}",
            x.cols(),
            y.cols()
        )));
    }
    Ok(())
}

/// Exact W1 between uniform empirical measures after subsampling each side
/// to at most `cap` points. Each side's subsample depends only on the seed
/// and its own content, and the pair is put in a canonical order before
/// solving, so the value is bitwise symmetric.
pub fn w1(x: &Matrix, y: &Matrix, cap: usize, seed: u64) -> Result<f64> {
    check_pair(x, y)?;
    if cap == 0 {
        return Err(Error::arg("subsample cap must be positive"));
    }
    let root = RngState::new(seed);
    let pick = |m: &Matrix| {
        let h = content_hash(m);
        let idx = subsample(m.rows(), cap, &mut root.derive(h).stream());
        (h, m.select_rows(&idx))
    };
    let (hx, xs) = pick(x);
    let (hy, ys) = pick(y);
    let (a, b) = if hx <= hy { (xs, ys) } else { (ys, xs) };
    w1_weighted(
        &a,
        &vec![1.0 / a.rows() as f64; a.rows()],
        &b,
        &vec![1.0 / b.rows() as f64; b.rows()],
    )
}

/// Exact W1 between weighted point sets; weights are normalized to sum one.
pub fn w1_weighted(x: &Matrix, wx: &[f64], y: &Matrix, wy: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    if wx.len() != x.rows() || wy.len() != y.rows() {
        return Err(Error::dim("one weight per point required"));
    }
    let norm = |w: &[f64]| -> Result<Vec<f64>> {
        let s: f64 = w.iter().sum();
        if w.iter().any(|v| !(*v >= 0.0)) || !(s > 0.0) {
            return Err(Error::arg("weights must be nonnegative with positive sum"));
        }
        Ok(w.iter().map(|v| v / s).collect())
    };
    let c = cost_matrix(x, y, 1)?;
    Ok(emd_with_cost(&norm(wx)?, &norm(wy)?, &c)?.cost)
}

fn mean_kernel(x: &Matrix, y: &Matrix, gamma: f64) -> f64 {
    let mut s = 0.0;
    for a in x.row_iter() {
        for b in y.row_iter() {
            s += (-gamma * sq_dist(a, b)).exp();
        }
    }
    s / (x.rows() * y.rows()) as f64
}

/// Median of all pairwise distances in the pooled sample, or 1 when they all vanish.
pub fn median_bandwidth(x: &Matrix, y: &Matrix) -> f64 {
    let pooled: Vec<&[f64]> = x.row_iter().chain(y.row_iter()).collect();
    let mut d = Vec::with_capacity(pooled.len() * pooled.len() / 2);
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            d.push(dist(pooled[i], pooled[j]));
        }
    }
    match median(&d) {
        Some(m) if m > 0.0 => m,
        _ => 1.0,
    }
}

/// Squared Gaussian-kernel MMD, biased (V-statistic) estimator, kernel
/// `exp(-|a - b|^2 / (2 sigma^2))` with the median bandwidth.
pub fn mmd_gaussian(x: &Matrix, y: &Matrix) -> Result<f64> {
    check_pair(x, y)?;
    let sigma = median_bandwidth(x, y);
    let gamma = 1.0 / (2.0 * sigma * sigma);
    let v = mean_kernel(x, x, gamma) + mean_kernel(y, y, gamma) - 2.0 * mean_kernel(x, y, gamma);
    Ok(v.max(0.0))
}

/// Euclidean distance between sample means.
pub fn mmd_mean(x: &Matrix, y: &Matrix) -> Result<f64> {
    check_pair(x, y)?;
    Ok(dist(&x.column_means(), &y.column_means()))
}

/// One entry of a metric table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub t: usize,
    pub metric: String,
    pub value: f64,
    pub seed: u64,
}

/// `w1`, `mmd_g` and `mmd_m` rows comparing `pred` with `truth` at `t`.
pub fn distribution_metrics(
    pred: &Matrix,
    truth: &Matrix,
    t: usize,
    seed: u64,
) -> Result<Vec<MetricRow>> {
    let row = |metric: &str, value| MetricRow {
        t,
        metric: metric.to_string(),
        value,
        seed,
    };
    Ok(vec![
        row("w1", w1(pred, truth, W1_CAP, seed)?),
        row("mmd_g", mmd_gaussian(pred, truth)?),
        row("mmd_m", mmd_mean(pred, truth)?),
    ])
}

/// For each interior snapshot `t`: train on the others, carry `z[t - 1]`
/// forward over the interval `[time(t - 1), time(t)]`, and score the
/// prediction against the held-out `z[t]`.
pub fn leave_one_out(z: &[Matrix], cfg: &TrainConfig) -> Result<Vec<MetricRow>> {
    let tn = z.len();
    if tn < 3 {
        return Err(Error::arg(format!(
            "leave-one-out needs at least three timepoints, got {tn}"
        )));
    }
    let times: Vec<f64> = match &cfg.times {
        Some(ts) if ts.len() == tn => ts.clone(),
        Some(ts) => {
            return Err(Error::Config(format!(
                "{} snapshot times for {tn} snapshots",
                ts.len()
            )))
        }
        None => (0..tn).map(|t| t as f64).collect(),
    };
    let mut rows = Vec::new();
    for t in 1..tn - 1 {
        let keep: Vec<usize> = (0..tn).filter(|&s| s != t).collect();
        let sub: Vec<Matrix> = keep.iter().map(|&s| z[s].clone()).collect();
        let mut c = cfg.clone();
        c.times = Some(keep.iter().map(|&s| times[s]).collect());
        let out = train(&sub, &c).map_err(|e| match e {
            Error::NotConverged(m) => Error::NotConverged(format!("held-out t = {t}: {m}")),
            Error::NonFinite(m) => Error::NonFinite(format!("held-out t = {t}: {m}")),
            other => other,
        })?;
        let pred = predict_forward(
            &out.model,
            &z[t - 1],
            times[t - 1],
            times[t],
            c.steps_per_unit,
            c.seed,
        )?;
        rows.extend(distribution_metrics(&pred, &z[t], t, cfg.seed)?);
    }
    Ok(rows)
}

/// Endpoints of `z0` integrated from `t0` to `t1`.
pub fn predict_forward(
    model: &crate::dynamics::DynamicsModel,
    z0: &Matrix,
    t0: f64,
    t1: f64,
    steps_per_unit: usize,
    seed: u64,
) -> Result<Matrix> {
    let steps = ((steps_per_unit as f64 * (t1 - t0)).round() as usize).max(1);
    let b =
        crate::dynamics::integrate(model, z0, t0, t1, steps, RngState::new(seed).derive(0x100))?;
    Ok(b.endpoints())
}

/// Metrics of the baseline that predicts `z[t - 1]` unchanged.
pub fn identity_baseline(z: &[Matrix], seed: u64) -> Result<Vec<MetricRow>> {
    if z.len() < 3 {
        return Err(Error::arg("leave-one-out needs at least three timepoints"));
    }
    let mut rows = Vec::new();
    for t in 1..z.len() - 1 {
        rows.extend(distribution_metrics(&z[t - 1], &z[t], t, seed)?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn cloud(n: usize, d: usize, shift: f64, seed: u64) -> Matrix {
        let mut r = RngState::new(seed).stream();
        Matrix::from_vec(
            n,
            d,
            (0..n * d)
                .map(|_| r.random_range(-1.0..1.0) + shift)
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn k_one_is_plain_average() {
        let paths: Vec<Matrix> = (0..5).map(|s| cloud(4, 2, s as f64, s)).collect();
        let b = branch_means_from_paths(&paths, 1, 0).unwrap();
        for i in 0..4 {
            for j in 0..2 {
                let avg = paths.iter().map(|p| p[(i, j)]).sum::<f64>() / 5.0;
                assert!((b.mean_paths[0][(i, j)] - avg).abs() < 1e-12);
            }
        }
        assert!(branch_means_from_paths(&paths, 6, 0).is_err());
    }

    #[test]
    fn separated_endpoints_split_cleanly() {
        let mut paths = Vec::new();
        let mut labels = Vec::new();
        let mut r = RngState::new(1).stream();
        for i in 0..40 {
            let y = if i % 2 == 0 { 5.0 } else { -5.0 };
            let p = Matrix::from_rows(&[
                vec![0.0, 0.0],
                vec![1.0, y / 2.0],
                vec![2.0 + r.random_range(-0.1..0.1), y],
            ])
            .unwrap();
            paths.push(p);
            labels.push(i % 2);
        }
        let b = branch_means_from_paths(&paths, 2, 3).unwrap();
        assert_eq!(cluster_purity(&b.assignment, &labels), 1.0);
        // Reversed order: same mean paths (labels are canonical by center).
        let rev: Vec<Matrix> = paths.iter().rev().cloned().collect();
        let c = branch_means_from_paths(&rev, 2, 3).unwrap();
        for (a, b) in b.mean_paths.iter().zip(&c.mean_paths) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn trajectory_error_matches_double_loop() {
        let line = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![2.0, 0.0]]).unwrap();
        let one = BranchSummary {
            k: 1,
            mean_paths: vec![line.clone()],
            assignment: vec![0],
        };
        let p = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert_eq!(trajectory_error(&p, &one).unwrap(), (0.0, 0.0));
        // Vertex distance, not segment projection.
        let q = Matrix::from_rows(&[vec![0.5, 0.3]]).unwrap();
        assert!((trajectory_error(&q, &one).unwrap().0 - (0.25f64 + 0.09).sqrt()).abs() < 1e-15);

        let pts = cloud(100, 2, 0.0, 4);
        let paths = vec![cloud(11, 2, 0.5, 5), cloud(11, 2, -0.5, 6)];
        let s = BranchSummary {
            k: 2,
            mean_paths: paths.clone(),
            assignment: vec![0, 1],
        };
        let mut errs = Vec::new();
        for i in 0..100 {
            let mut best = f64::INFINITY;
            for p in &paths {
                for v in 0..11 {
                    let d = ((pts[(i, 0)] - p[(v, 0)]).powi(2) + (pts[(i, 1)] - p[(v, 1)]).powi(2))
                        .sqrt();
                    best = best.min(d);
                }
            }
            errs.push(best);
        }
        let mean = errs.iter().sum::<f64>() / 100.0;
        let std = (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / 100.0).sqrt();
        let (m, s2) = trajectory_error(&pts, &s).unwrap();
        assert!((m - mean).abs() < 1e-12 && (s2 - std).abs() < 1e-12);
        assert!(trajectory_error(&Matrix::zeros(0, 2), &s).is_err());
    }

    #[test]
    fn w1_examples() {
        let x = cloud(30, 3, 0.0, 1);
        assert_eq!(w1(&x, &x, W1_CAP, 0).unwrap(), 0.0);
        let a = Matrix::from_rows(&[vec![0.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![2.5]]).unwrap();
        assert!((w1(&a, &b, W1_CAP, 0).unwrap() - 2.5).abs() < 1e-15);
        let y = cloud(50, 3, 0.4, 2);
        assert_eq!(w1(&x, &y, 20, 7).unwrap(), w1(&y, &x, 20, 7).unwrap());
        assert_eq!(
            w1(&x, &y, W1_CAP, 7).unwrap(),
            w1(&y, &x, W1_CAP, 7).unwrap()
        );
    }

    #[test]
    fn mmd_examples() {
        let x = cloud(20, 2, 0.0, 1);
        let y = cloud(25, 2, 3.0, 2);
        assert_eq!(mmd_gaussian(&x, &x).unwrap(), 0.0);
        assert_eq!(mmd_mean(&x, &x).unwrap(), 0.0);
        let a = mmd_gaussian(&x, &y).unwrap();
        let b = mmd_gaussian(&rotate(&x), &rotate(&y)).unwrap();
        assert!((a - b).abs() < 1e-12);
        let v = [0.3, -1.2];
        let mut z = x.clone();
        for i in 0..20 {
            z[(i, 0)] += v[0];
            z[(i, 1)] += v[1];
        }
        assert!((mmd_mean(&x, &z).unwrap() - (0.09f64 + 1.44).sqrt()).abs() < 1e-12);
        let same = Matrix::zeros(3, 2);
        assert_eq!(median_bandwidth(&same, &same), 1.0);
    }

    fn rotate(m: &Matrix) -> Matrix {
        let (c, s) = (0.6, 0.8);
        let mut out = m.clone();
        for i in 0..m.rows() {
            out[(i, 0)] = c * m[(i, 0)] - s * m[(i, 1)] + 4.0;
            out[(i, 1)] = s * m[(i, 0)] + c * m[(i, 1)] - 1.0;
        }
        out
    }

    #[test]
    fn identical_prediction_gives_zero_row() {
        let x = cloud(15, 2, 0.0, 9);
        let rows = distribution_metrics(&x, &x, 2, 0).unwrap();
        assert!(rows.iter().all(|r| r.value == 0.0 && r.t == 2));
        assert_eq!(rows.len(), 3);
    }
}
