use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{sq_dist, Matrix, RngState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeans {
    /// `k x d`, sorted lexicographically so labels do not depend on input order.
    pub centers: Matrix,
    pub assignment: Vec<usize>,
    pub inertia: f64,
}

const MAX_LLOYD: usize = 300;

fn nearest(x: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, m) in centers.iter().enumerate() {
        let d = sq_dist(x, m);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn one_run(x: &Matrix, k: usize, rng: RngState) -> (Vec<Vec<f64>>, f64) {
    let n = x.rows();
    let mut r = rng.stream();
    let mut centers = vec![x.row(r.random_range(0..n)).to_vec()];
    let mut d2: Vec<f64> = x.row_iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = r.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if u < *w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            r.random_range(0..n)
        };
        centers.push(x.row(pick).to_vec());
        for (i, p) in x.row_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &centers[centers.len() - 1]));
        }
    }
    let mut assign = vec![usize::MAX; n];
    for _ in 0..MAX_LLOYD {
        let mut changed = false;
        for (i, p) in x.row_iter().enumerate() {
            let (c, _) = nearest(p, &centers);
            if assign[i] != c {
                assign[i] = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; x.cols()]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in x.row_iter().enumerate() {
            counts[assign[i]] += 1;
            sums[assign[i]].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        for c in 0..k {
            // An emptied cluster keeps its previous center.
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    let inertia = x.row_iter().map(|p| nearest(p, &centers).1).sum();
    (centers, inertia)
}

/// k-means++ seeding followed by Lloyd iterations; the best of `restarts`
/// runs by inertia.
pub fn kmeans(x: &Matrix, k: usize, restarts: usize, rng: RngState) -> Result<KMeans> {
    if k == 0 || k > x.rows() {
        return Err(Error::arg(format!(
            "cannot form {k} clusters from {} points",
            x.rows()
        )));
    }
    x.ensure_finite("k-means input")?;
    let mut best: Option<(Vec<Vec<f64>>, f64)> = None;
    for r in 0..restarts.max(1) {
        let run = one_run(x, k, rng.derive(r as u64));
        if best.as_ref().is_none_or(|b| run.1 < b.1) {
            best = Some(run);
        }
    }
    let (mut centers, inertia) = best.expect("at least one run");
    centers.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let assignment = x.row_iter().map(|p| nearest(p, &centers).0).collect();
    Ok(KMeans {
        centers: Matrix::from_rows(&centers)?,
        assignment,
        inertia,
    })
}

/// Fraction of points whose cluster's majority label matches their own.
pub fn cluster_purity(assignment: &[usize], labels: &[usize]) -> f64 {
    if assignment.is_empty() {
        return 1.0;
    }
    let kc = assignment.iter().max().unwrap() + 1;
    let kl = labels.iter().max().map_or(1, |m| m + 1);
    let mut table = vec![vec![0usize; kl]; kc];
    for (&a, &l) in assignment.iter().zip(labels) {
        table[a][l] += 1;
    }
    let hit: usize = table
        .iter()
        .map(|row| row.iter().max().copied().unwrap_or(0))
        .sum();
    hit as f64 / assignment.len() as f64
}
