use serde::{Deserialize, Serialize};

use crate::dynamics::{eval_growth, growth_backward, DynamicsModel};
use crate::error::{Error, Result};
use crate::numerics::{par, sq_dist_matrix, Adam, Matrix};
use crate::transport::sinkhorn_unbalanced_with_cost;

/// Unbalanced transport parameters. The cost matrix is divided by its mean
/// before solving, so `eps`, `lambda1` and `lambda2` are relative to the
/// typical squared distance between consecutive snapshots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UotParams {
    pub eps: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for UotParams {
    fn default() -> Self {
        UotParams {
            eps: 0.05,
            lambda1: 1.0,
            lambda2: 10.0,
            max_iter: 5000,
            tol: 1e-7,
        }
    }
}

/// Per-cell growth targets for every source timepoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthTargets {
    /// `targets[t][i]` for cell `i` of snapshot `t`, `t < T - 1`.
    pub targets: Vec<Vec<f64>>,
}

/// Outcome of the growth warm start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthPretrain {
    pub targets: GrowthTargets,
    /// Regression MSE before each epoch, then after the last one.
    pub mse_history: Vec<f64>,
}

/// Source-marginal growth targets: `n_t * pi_1` of the unbalanced plan
/// between snapshots `t` and `t + 1` (uniform transport gives 1 everywhere).
pub fn growth_targets(z: &[Matrix], uot: &UotParams) -> Result<GrowthTargets> {
    if z.len() < 2 {
        return Err(Error::arg("growth targets need at least two timepoints"));
    }
    let mut targets = Vec::with_capacity(z.len() - 1);
    for t in 0..z.len() - 1 {
        let (src, dst) = (&z[t], &z[t + 1]);
        if src.rows() == 0 || dst.rows() == 0 {
            return Err(Error::arg(format!("snapshot {t} or {} is empty", t + 1)));
        }
        let mut c = sq_dist_matrix(src, dst);
        let mean = c.data().iter().sum::<f64>() / c.data().len() as f64;
        if mean > 0.0 {
            c = c.scale(1.0 / mean);
        }
        let a = vec![1.0 / src.rows() as f64; src.rows()];
        let b = vec![1.0 / dst.rows() as f64; dst.rows()];
        let plan = sinkhorn_unbalanced_with_cost(
            &a,
            &b,
            &c,
            uot.eps,
            uot.lambda1,
            uot.lambda2,
            uot.max_iter,
            uot.tol,
        )?;
        if !plan.converged {
            return Err(Error::NotConverged(format!(
                "unbalanced transport between snapshots {t} and {} did not converge in {} iterations",
                t + 1,
                uot.max_iter
            )));
        }
        let n = src.rows() as f64;
        targets.push(plan.row_sums().into_iter().map(|r| n * r).collect());
    }
    Ok(GrowthTargets { targets })
}

fn regression_pass(
    model: &DynamicsModel,
    z: &[Matrix],
    times: &[f64],
    targets: &GrowthTargets,
    grad: Option<&mut Vec<f64>>,
) -> Result<f64> {
    let count: usize = targets.targets.iter().map(|t| t.len()).sum();
    let ng = model.growth.num_params();
    let mut total = 0.0;
    let mut g = vec![0.0; ng];
    for (t, tg) in targets.targets.iter().enumerate() {
        let zt = &z[t];
        let tt = times[t];
        let want_grad = grad.is_some();
        let parts: Vec<Result<(f64, Vec<f64>)>> = {
            let starts: Vec<usize> = (0..tg.len()).step_by(par::CHUNK).collect();
            par::map_indexed(starts.len(), |c| {
                let s = starts[c];
                let mut loss = 0.0;
                let mut gg = if want_grad { vec![0.0; ng] } else { Vec::new() };
                for i in s..(s + par::CHUNK).min(tg.len()) {
                    let h = eval_growth(model, zt.row(i), tt)?;
                    let r = h - tg[i];
                    loss += r * r;
                    if want_grad {
                        growth_backward(model, zt.row(i), tt, 2.0 * r / count as f64, &mut gg)?;
                    }
                }
                Ok((loss, gg))
            })
        };
        for p in parts {
            let (l, gg) = p?;
            total += l;
            g.iter_mut().zip(&gg).for_each(|(a, b)| *a += b);
        }
    }
    if let Some(out) = grad {
        *out = g;
    }
    Ok(total / count as f64)
}

/// Fits the growth head to UOT source-marginal targets by least squares;
/// snapshot `t` is evaluated at `times[t]`.
pub fn pretrain_growth(
    model: &mut DynamicsModel,
    z: &[Matrix],
    times: &[f64],
    uot: &UotParams,
    epochs: usize,
    lr: f64,
) -> Result<GrowthPretrain> {
    if times.len() != z.len() {
        return Err(Error::dim(format!(
            "{} times for {} snapshots",
            times.len(),
            z.len()
        )));
    }
    let targets = growth_targets(z, uot)?;
    let mut opt = Adam::new(model.growth.num_params(), lr);
    let mut mse_history = Vec::with_capacity(epochs + 1);
    let mut grad = Vec::new();
    for epoch in 0..epochs {
        let mse = regression_pass(model, z, times, &targets, Some(&mut grad))?;
        if !mse.is_finite() {
            return Err(Error::non_finite(format!(
                "growth regression loss at epoch {epoch}"
            )));
        }
        mse_history.push(mse);
        opt.step(model.growth.params_mut(), &grad)?;
    }
    mse_history.push(regression_pass(model, z, times, &targets, None)?);
    Ok(GrowthPretrain {
        targets,
        mse_history,
    })
}
