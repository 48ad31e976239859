use crate::dynamics::TrajectoryBatch;
use crate::error::{Error, Result};
use crate::numerics::{k_nearest_distances, par, Matrix};
use crate::transport::{w2_loss, DiscreteMeasure, W2Loss};

/// Kinetic energy of a rollout: mean over cells of `sum_k h |f(z_k, t_k)|^2`.
pub fn energy_loss(batch: &TrajectoryBatch) -> f64 {
    let n = batch.n_cells();
    if n == 0 {
        return 0.0;
    }
    let h = batch.step();
    let total: f64 = batch
        .drift_evals
        .iter()
        .map(|f| f.data().iter().map(|v| v * v).sum::<f64>())
        .sum();
    h * total / n as f64
}

/// Gradient of [`energy_loss`] with respect to each stored drift value.
pub fn energy_loss_grad(batch: &TrajectoryBatch) -> Vec<Matrix> {
    let n = batch.n_cells().max(1) as f64;
    let h = batch.step();
    batch
        .drift_evals
        .iter()
        .map(|f| f.map(|v| 2.0 * h * v / n))
        .collect()
}

/// Hinge on distances to the data: for every predicted point, the sum over
/// its `k` nearest data points of `max(0, dist - margin)`, averaged over
/// predicted points.
pub fn density_loss(pred: &Matrix, data: &Matrix, k: usize, margin: f64) -> Result<f64> {
    Ok(density_loss_with_grad(pred, data, k, margin)?.0)
}

/// [`density_loss`] and its gradient with respect to `pred`.
pub fn density_loss_with_grad(
    pred: &Matrix,
    data: &Matrix,
    k: usize,
    margin: f64,
) -> Result<(f64, Matrix)> {
    if data.rows() == 0 {
        return Err(Error::arg("density loss needs data points"));
    }
    if k == 0 || k > data.rows() {
        return Err(Error::arg(format!(
            "density loss k = {k} with {} data points",
            data.rows()
        )));
    }
    if pred.cols() != data.cols() {
        return Err(Error::dim("predicted points and data differ in dimension"));
    }
    let n = pred.rows();
    if n == 0 {
        return Ok((0.0, Matrix::zeros(0, data.cols())));
    }
    let d = pred.cols();
    let per_point: Vec<(f64, Vec<f64>)> = par::map_indexed(n, |i| {
        let x = pred.row(i);
        let mut loss = 0.0;
        let mut g = vec![0.0; d];
        for (dist, j) in k_nearest_distances(x, data, k) {
            if dist > margin {
                loss += dist - margin;
                if dist > 0.0 {
                    for (gk, (a, b)) in g.iter_mut().zip(x.iter().zip(data.row(j))) {
                        *gk += (a - b) / dist;
                    }
                }
            }
        }
        (loss, g)
    });
    let mut total = 0.0;
    let mut grad = Matrix::zeros(n, d);
    for (i, (l, g)) in per_point.into_iter().enumerate() {
        total += l;
        grad.row_mut(i)
            .iter_mut()
            .zip(&g)
            .for_each(|(o, v)| *o = v / n as f64);
    }
    Ok((total / n as f64, grad))
}

/// W2 marginal loss with its gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalLoss {
    pub value: f64,
    pub grad_points: Matrix,
    /// Gradient with respect to the raw (unnormalized) masses.
    pub grad_masses: Vec<f64>,
}

/// Squared W2 between predicted points weighted by `masses` (normalized to
/// sum one) and the uniformly weighted `target`.
pub fn marginal_loss(pred: &Matrix, masses: &[f64], target: &Matrix) -> Result<MarginalLoss> {
    if masses.iter().any(|m| !(*m > 0.0) || !m.is_finite()) {
        return Err(Error::arg("growth masses must be positive and finite"));
    }
    let s: f64 = masses.iter().sum();
    let mu = DiscreteMeasure::new(pred.clone(), masses.to_vec())?;
    let nu = DiscreteMeasure::uniform(target.clone());
    let W2Loss {
        cost,
        grad_points,
        grad_weights,
        ..
    } = w2_loss(&mu, &nu)?;
    let avg: f64 = masses
        .iter()
        .zip(&grad_weights)
        .map(|(m, g)| m / s * g)
        .sum();
    let grad_masses = grad_weights.iter().map(|g| (g - avg) / s).collect();
    Ok(MarginalLoss {
        value: cost,
        grad_points,
        grad_masses,
    })
}
