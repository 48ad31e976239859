use super::{matrix::sq_dist, Matrix};
use crate::error::{Error, Result};

/// Exhaustive k-nearest-neighbour lists for every row of `points`.
///
/// Neighbours are ordered by distance, ties broken by lower index. A point is
/// never its own neighbour. With `max_dist`, neighbours farther than the cutoff
/// are dropped, so lists may be shorter than `k`.
pub fn knn_query(points: &Matrix, k: usize, max_dist: Option<f64>) -> Result<Vec<Vec<usize>>> {
    let n = points.rows();
    if k >= n {
        return Err(Error::arg(format!(
            "k = {k} must be below the point count {n}"
        )));
    }
    points.ensure_finite("knn points")?;
    let cutoff = max_dist.map(|d| d * d);
    let mut out = Vec::with_capacity(n);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        cand.clear();
        let pi = points.row(i);
        for j in 0..n {
            if j != i {
                cand.push((sq_dist(pi, points.row(j)), j));
            }
        }
        let list = k_smallest(&mut cand, k)
            .iter()
            .filter(|(d, _)| cutoff.is_none_or(|c| *d <= c))
            .map(|&(_, j)| j)
            .collect();
        out.push(list);
    }
    Ok(out)
}

/// The `k` smallest Euclidean distances from `query` to the rows of `data`, ascending.
pub fn k_nearest_distances(query: &[f64], data: &Matrix, k: usize) -> Vec<(f64, usize)> {
    let mut cand: Vec<(f64, usize)> = data
        .row_iter()
        .enumerate()
        .map(|(j, r)| (sq_dist(query, r), j))
        .collect();
    k_smallest(&mut cand, k)
        .iter()
        .map(|&(d, j)| (d.sqrt(), j))
        .collect()
}

fn k_smallest(cand: &mut [(f64, usize)], k: usize) -> &[(f64, usize)] {
    let k = k.min(cand.len());
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < cand.len() && k > 0 {
        cand.select_nth_unstable_by(k - 1, cmp);
    }
    let head = &mut cand[..k];
    head.sort_by(cmp);
    head
}
