//! Optimal transport between weighted point clouds: exact EMD, entropic and
//! unbalanced Sinkhorn, and the squared W2 loss with gradients used in
//! training.

mod network_simplex;
mod sinkhorn;

pub use sinkhorn::{
    sinkhorn, sinkhorn_unbalanced, sinkhorn_unbalanced_with_cost, sinkhorn_with_cost,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dist, sq_dist_matrix, Matrix};

/// Batches up to this size are solved exactly in [`w2_loss`].
pub const EXACT_LIMIT: usize = 512;

const MASS_TOL: f64 = 1e-9;

/// Weighted empirical measure: `support` has one point per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    pub support: Matrix,
    pub weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(support: Matrix, weights: Vec<f64>) -> Result<Self> {
        if support.rows() != weights.len() {
            return Err(Error::dim(format!(
                "{} points but {} weights",
                support.rows(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::arg("measure weights must be finite and nonnegative"));
        }
        support.ensure_finite("measure support")?;
        Ok(DiscreteMeasure { support, weights })
    }

    /// Equal weights `1/n` on every row.
    pub fn uniform(support: Matrix) -> Self {
        let n = support.rows();
        let weights = vec![1.0 / n.max(1) as f64; n];
        DiscreteMeasure { support, weights }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.support.cols()
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub(crate) fn check_nonempty(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::arg("empty measure"));
        }
        Ok(())
    }
}

/// Coupling between two measures together with its cost and dual potentials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    pub plan: Matrix,
    pub cost: f64,
    pub dual_f: Vec<f64>,
    pub dual_g: Vec<f64>,
    /// L1 deviation of the row and column sums from the input weights.
    pub marginal_residuals: (f64, f64),
    pub converged: bool,
}

impl TransportPlan {
    pub fn row_sums(&self) -> Vec<f64> {
        self.plan.row_iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.plan.cols()];
        for r in self.plan.row_iter() {
            for (s, x) in out.iter_mut().zip(r) {
                *s += x;
            }
        }
        out
    }

    pub fn total_mass(&self) -> f64 {
        self.plan.data().iter().sum()
    }
}

pub(crate) fn check_balanced(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<()> {
    if mu.dim() != nu.dim() {
        return Err(Error::dim(format!(
            "measures live in dimensions {} and {}",
            mu.dim(),
            nu.dim()
        )));
    }
    let (sa, sb) = (mu.total_mass(), nu.total_mass());
    if (sa - sb).abs() > MASS_TOL {
        return Err(Error::arg(format!("unbalanced masses {sa} and {sb}")));
    }
    Ok(())
}

/// Ground cost `d(x, y)^p` for `p` in {1, 2}.
pub fn cost_matrix(x: &Matrix, y: &Matrix, p: u32) -> Result<Matrix> {
    if x.cols() != y.cols() {
        return Err(Error::dim("point sets have different dimensions"));
    }
    match p {
        2 => Ok(sq_dist_matrix(x, y)),
        1 => {
            let mut c = Matrix::zeros(x.rows(), y.rows());
            for i in 0..x.rows() {
                for j in 0..y.rows() {
                    c[(i, j)] = dist(x.row(i), y.row(j));
                }
            }
            Ok(c)
        }
        _ => Err(Error::arg(format!("emd exponent must be 1 or 2, got {p}"))),
    }
}

/// Exact optimal transport with ground cost `|x - y|^p`. The returned cost is
/// `W_p^p`.
pub fn emd(mu: &DiscreteMeasure, nu: &DiscreteMeasure, p: u32) -> Result<TransportPlan> {
    mu.check_nonempty()?;
    nu.check_nonempty()?;
    check_balanced(mu, nu)?;
    let c = cost_matrix(&mu.support, &nu.support, p)?;
    emd_with_cost(&mu.weights, &nu.weights, &c)
}

/// Exact optimal transport for an explicit cost matrix.
pub fn emd_with_cost(a: &[f64], b: &[f64], c: &Matrix) -> Result<TransportPlan> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::arg("empty measure"));
    }
    let (sa, sb) = (a.iter().sum::<f64>(), b.iter().sum::<f64>());
    if (sa - sb).abs() > MASS_TOL {
        return Err(Error::arg(format!("unbalanced masses {sa} and {sb}")));
    }
    if a.iter().chain(b).any(|w| !(*w >= 0.0)) {
        return Err(Error::arg("weights must be nonnegative"));
    }
    c.ensure_finite("cost matrix")?;
    // Absorb the (tiny) mass mismatch into the largest target weight.
    let mut b = b.to_vec();
    let jmax = (0..b.len()).fold(0, |k, j| if b[j] > b[k] { j } else { k });
    b[jmax] += sa - sb;

    let sol = network_simplex::solve(a, &b, c)?;
    let mut plan = TransportPlan {
        plan: sol.flow,
        cost: sol.cost,
        dual_f: sol.f,
        dual_g: sol.g,
        marginal_residuals: (0.0, 0.0),
        converged: true,
    };
    let rows = plan.row_sums();
    let cols = plan.col_sums();
    plan.marginal_residuals = (
        rows.iter().zip(a).map(|(x, y)| (x - y).abs()).sum(),
        cols.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum(),
    );
    Ok(plan)
}

/// Squared W2 between a weighted prediction and a uniformly weighted target,
/// with gradients for training.
#[derive(Debug, Clone, PartialEq)]
pub struct W2Loss {
    pub cost: f64,
    /// `d cost / d x_i` with the plan held fixed.
    pub grad_points: Matrix,
    /// Centered source potential: gradient with respect to the (normalized)
    /// prediction weights along the simplex.
    pub grad_weights: Vec<f64>,
    pub plan: TransportPlan,
}

/// Squared Wasserstein-2 loss. Prediction weights are normalized to sum to
/// one; the target must carry uniform weights.
pub fn w2_loss(pred: &DiscreteMeasure, target: &DiscreteMeasure) -> Result<W2Loss> {
    pred.check_nonempty()?;
    target.check_nonempty()?;
    if pred.dim() != target.dim() {
        return Err(Error::dim("prediction and target dimensions differ"));
    }
    let m = target.len();
    let sb = target.total_mass();
    if target
        .weights
        .iter()
        .any(|w| (w - sb / m as f64).abs() > MASS_TOL)
    {
        return Err(Error::arg("w2_loss target weights must be uniform"));
    }
    let sa = pred.total_mass();
    if !(sa > 0.0) {
        return Err(Error::arg("prediction carries no mass"));
    }
    let a: Vec<f64> = pred.weights.iter().map(|w| w / sa).collect();
    let b = vec![1.0 / m as f64; m];
    let c = sq_dist_matrix(&pred.support, &target.support);
    c.ensure_finite("w2 cost matrix")?;

    let plan = if pred.len() <= EXACT_LIMIT && m <= EXACT_LIMIT {
        emd_with_cost(&a, &b, &c)?
    } else {
        let mean_c = c.data().iter().sum::<f64>() / c.data().len() as f64;
        let eps = (0.01 * mean_c).max(1e-12);
        sinkhorn_with_cost(&a, &b, &c, eps, 2000, 1e-6)?
    };

    let d = pred.dim();
    let mut grad_points = Matrix::zeros(pred.len(), d);
    for i in 0..pred.len() {
        let xi = pred.support.row(i);
        let row = plan.plan.row(i);
        let gi = grad_points.row_mut(i);
        for (j, &p) in row.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let yj = target.support.row(j);
            for k in 0..d {
                gi[k] += 2.0 * p * (xi[k] - yj[k]);
            }
        }
    }
    let mean_f = plan.dual_f.iter().sum::<f64>() / plan.dual_f.len() as f64;
    let grad_weights = plan.dual_f.iter().map(|f| f - mean_f).collect();
    Ok(W2Loss {
        cost: plan.cost,
        grad_points,
        grad_weights,
        plan,
    })
}
