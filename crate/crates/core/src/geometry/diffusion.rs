use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{k_nearest_distances, par, sq_dist, Matrix};

/// Offset inside the logarithm of the potential transform.
pub const POTENTIAL_EPS: f64 = 1e-7;

/// Row-stochastic Markov operator built from an adaptive Gaussian kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionOperator {
    pub p: Matrix,
    /// Per-point kernel scale (distance to the k-th neighbour).
    pub bandwidths: Vec<f64>,
    /// Diffusion steps applied by [`DiffusionOperator::powered`].
    pub t: usize,
}

/// Symmetric matrix of potential distances between points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialDistances {
    pub d: Matrix,
}

impl PotentialDistances {
    pub fn len(&self) -> usize {
        self.d.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.d.rows() == 0
    }

    /// Upper-triangle entries, row by row.
    pub fn upper_triangle(&self) -> Vec<f64> {
        let n = self.len();
        let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            out.extend_from_slice(&self.d.row(i)[i + 1..]);
        }
        out
    }
}

/// Builds the diffusion operator on the rows of `x`.
///
/// `K_ij = (exp(-d_ij^2 / s_i^2) + exp(-d_ij^2 / s_j^2)) / 2` with `s_i` the
/// distance from point `i` to its `k`-th nearest neighbour, then normalized
/// row-wise.
pub fn diffusion_operator(x: &Matrix, k: usize, t: usize) -> Result<DiffusionOperator> {
    let n = x.rows();
    if k == 0 || n < k + 1 {
        return Err(Error::arg(format!(
            "diffusion operator needs 1 <= k < n (k = {k}, n = {n})"
        )));
    }
    if t == 0 {
        return Err(Error::arg("diffusion time t must be at least 1"));
    }
    x.ensure_finite("diffusion operator input")?;

    let mut bandwidths = par::map_indexed(n, |i| {
        // The nearest "neighbour" of a point is itself at distance 0.
        let near = k_nearest_distances(x.row(i), x, k + 1);
        near.last().map(|p| p.0).unwrap_or(0.0)
    });
    let min_pos = bandwidths
        .iter()
        .copied()
        .filter(|b| *b > 0.0)
        .fold(f64::INFINITY, f64::min);
    if !min_pos.is_finite() {
        return Err(Error::arg(
            "all points are identical; kernel bandwidth is zero",
        ));
    }
    for b in &mut bandwidths {
        if *b <= 0.0 {
            *b = min_pos;
        }
    }

    let rows: Vec<Vec<f64>> = par::map_indexed(n, |i| {
        let xi = x.row(i);
        let si = bandwidths[i] * bandwidths[i];
        let mut row: Vec<f64> = (0..n)
            .map(|j| {
                let d2 = sq_dist(xi, x.row(j));
                let sj = bandwidths[j] * bandwidths[j];
                0.5 * ((-d2 / si).exp() + (-d2 / sj).exp())
            })
            .collect();
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
        row
    });
    let p = Matrix::from_vec(n, n, rows.concat())?;
    Ok(DiffusionOperator { p, bandwidths, t })
}

impl DiffusionOperator {
    pub fn len(&self) -> usize {
        self.p.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.p.rows() == 0
    }

    /// `P^t` by repeated squaring.
    pub fn powered(&self) -> Result<Matrix> {
        let mut result: Option<Matrix> = None;
        let mut base = self.p.clone();
        let mut e = self.t;
        while e > 0 {
            if e & 1 == 1 {
                result = Some(match result {
                    None => base.clone(),
                    Some(r) => r.matmul(&base)?,
                });
            }
            e >>= 1;
            if e > 0 {
                base = base.matmul(&base)?;
            }
        }
        result.ok_or_else(|| Error::arg("diffusion time t must be at least 1"))
    }
}

/// `D_ij = || log(P^t_i + eps) - log(P^t_j + eps) ||_2`.
pub fn potential_distances(op: &DiffusionOperator) -> Result<PotentialDistances> {
    let pt = op.powered()?;
    let logs = pt.map(|v| (v.max(0.0) + POTENTIAL_EPS).ln());
    let n = logs.rows();
    let rows: Vec<Vec<f64>> = par::map_indexed(n, |i| {
        (0..n)
            .map(|j| {
                if j <= i {
                    0.0
                } else {
                    sq_dist(logs.row(i), logs.row(j)).sqrt()
                }
            })
            .collect()
    });
    let mut d = Matrix::from_vec(n, n, rows.concat())?;
    for i in 0..n {
        for j in 0..i {
            d[(i, j)] = d[(j, i)];
        }
    }
    Ok(PotentialDistances { d })
}
