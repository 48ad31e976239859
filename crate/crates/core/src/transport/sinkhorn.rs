//! Entropic solvers: balanced Sinkhorn and KL-relaxed unbalanced Sinkhorn.

use super::{DiscreteMeasure, TransportPlan};
use crate::error::{Error, Result};
use crate::numerics::{sq_dist_matrix, Matrix};

/// Below this ratio `eps / max(C)` the balanced solver switches to log-domain
/// updates with epsilon scaling.
const LOG_DOMAIN_RATIO: f64 = 1e-2;
const SCALING_STAGE_ITERS: usize = 50;

/// Entropic OT between `mu` and `nu` on the squared Euclidean cost.
pub fn sinkhorn(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    eps: f64,
    max_iter: usize,
    tol: f64,
) -> Result<TransportPlan> {
    mu.check_nonempty()?;
    nu.check_nonempty()?;
    super::check_balanced(mu, nu)?;
    let c = sq_dist_matrix(&mu.support, &nu.support);
    sinkhorn_with_cost(&mu.weights, &nu.weights, &c, eps, max_iter, tol)
}

pub fn sinkhorn_with_cost(
    a: &[f64],
    b: &[f64],
    c: &Matrix,
    eps: f64,
    max_iter: usize,
    tol: f64,
) -> Result<TransportPlan> {
    sinkhorn_traced(a, b, c, eps, max_iter, tol, None)
}

/// Balanced Sinkhorn. When `trace` is given, the dual objective after every
/// full iteration at the target `eps` is pushed onto it.
pub(crate) fn sinkhorn_traced(
    a: &[f64],
    b: &[f64],
    c: &Matrix,
    eps: f64,
    max_iter: usize,
    tol: f64,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<TransportPlan> {
    if !(eps > 0.0) {
        return Err(Error::arg("sinkhorn needs eps > 0"));
    }
    if c.shape() != (a.len(), b.len()) {
        return Err(Error::dim("cost matrix does not match the measures"));
    }
    let max_c = c.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if eps >= LOG_DOMAIN_RATIO * max_c && trace.is_none() {
        return sinkhorn_scaling(a, b, c, eps, max_iter, tol);
    }

    let log_a: Vec<f64> = a.iter().map(|v| v.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|v| v.ln()).collect();
    let mut f = vec![0.0; a.len()];
    let mut g = vec![0.0; b.len()];

    // Anneal from the cost scale down to the target regularization.
    let mut stage_eps = max_c.max(eps);
    while stage_eps > eps {
        for _ in 0..SCALING_STAGE_ITERS {
            update_f(&mut f, &g, &log_a, c, stage_eps, 1.0);
            update_g(&f, &mut g, &log_b, c, stage_eps, 1.0);
        }
        stage_eps = (stage_eps * 0.5).max(eps);
        if stage_eps == eps {
            break;
        }
    }

    let mut converged = false;
    let mut row_res = f64::INFINITY;
    for _ in 0..max_iter {
        update_f(&mut f, &g, &log_a, c, eps, 1.0);
        update_g(&f, &mut g, &log_b, c, eps, 1.0);
        row_res = row_residual(&f, &g, a, c, eps);
        if let Some(t) = trace.as_deref_mut() {
            t.push(dual_objective(&f, &g, a, b, c, eps));
        }
        if row_res < tol {
            converged = true;
            break;
        }
    }
    Ok(assemble_plan(&f, &g, a, b, c, eps, converged, row_res))
}

/// Classic `u, v` scaling iteration, used when `eps` is large enough that the
/// Gibbs kernel cannot underflow.
fn sinkhorn_scaling(
    a: &[f64],
    b: &[f64],
    c: &Matrix,
    eps: f64,
    max_iter: usize,
    tol: f64,
) -> Result<TransportPlan> {
    let (n, m) = c.shape();
    let k = c.map(|x| (-x / eps).exp());
    let mut u = vec![1.0; n];
    let mut v = vec![1.0; m];
    let mut converged = false;
    let mut row_res = f64::INFINITY;
    for _ in 0..max_iter {
        for i in 0..n {
            let kv: f64 = k.row(i).iter().zip(&v).map(|(x, y)| x * y).sum();
            u[i] = a[i] / kv;
        }
        let mut ktu = vec![0.0; m];
        for i in 0..n {
            for (t, kij) in ktu.iter_mut().zip(k.row(i)) {
                *t += kij * u[i];
            }
        }
        for j in 0..m {
            v[j] = b[j] / ktu[j];
        }
        if u.iter().chain(&v).any(|x| !x.is_finite()) {
            return Err(Error::non_finite("sinkhorn scaling vectors overflowed"));
        }
        row_res = (0..n)
            .map(|i| {
                let s: f64 = k.row(i).iter().zip(&v).map(|(x, y)| x * y).sum::<f64>() * u[i];
                (s - a[i]).abs()
            })
            .sum();
        if row_res < tol {
            converged = true;
            break;
        }
    }
    let f: Vec<f64> = u.iter().map(|x| eps * x.ln()).collect();
    let g: Vec<f64> = v.iter().map(|x| eps * x.ln()).collect();
    Ok(assemble_plan(&f, &g, a, b, c, eps, converged, row_res))
}

#[inline]
fn log_sum_exp(iter: impl Iterator<Item = f64> + Clone) -> f64 {
    let mx = iter.clone().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    mx + iter.map(|x| (x - mx).exp()).sum::<f64>().ln()
}

/// `f_i = damp * (eps log a_i - eps LSE_j((g_j - C_ij) / eps))`.
fn update_f(f: &mut [f64], g: &[f64], log_a: &[f64], c: &Matrix, eps: f64, damp: f64) {
    for (i, fi) in f.iter_mut().enumerate() {
        let row = c.row(i);
        let lse = log_sum_exp(g.iter().zip(row).map(|(gj, cij)| (gj - cij) / eps));
        *fi = damp * eps * (log_a[i] - lse);
    }
}

fn update_g(f: &[f64], g: &mut [f64], log_b: &[f64], c: &Matrix, eps: f64, damp: f64) {
    for (j, gj) in g.iter_mut().enumerate() {
        let lse = log_sum_exp(f.iter().enumerate().map(|(i, fi)| (fi - c[(i, j)]) / eps));
        *gj = damp * eps * (log_b[j] - lse);
    }
}

fn row_residual(f: &[f64], g: &[f64], a: &[f64], c: &Matrix, eps: f64) -> f64 {
    (0..a.len())
        .map(|i| {
            let s: f64 = g
                .iter()
                .zip(c.row(i))
                .map(|(gj, cij)| ((f[i] + gj - cij) / eps).exp())
                .sum();
            (s - a[i]).abs()
        })
        .sum()
}

fn dual_objective(f: &[f64], g: &[f64], a: &[f64], b: &[f64], c: &Matrix, eps: f64) -> f64 {
    let lin: f64 = a.iter().zip(f).map(|(x, y)| x * y).sum::<f64>()
        + b.iter().zip(g).map(|(x, y)| x * y).sum::<f64>();
    let mut mass = 0.0;
    for i in 0..a.len() {
        for (j, gj) in g.iter().enumerate() {
            mass += ((f[i] + gj - c[(i, j)]) / eps).exp();
        }
    }
    lin - eps * mass
}

#[allow(clippy::too_many_arguments)]
fn assemble_plan(
    f: &[f64],
    g: &[f64],
    a: &[f64],
    b: &[f64],
    c: &Matrix,
    eps: f64,
    converged: bool,
    row_res: f64,
) -> TransportPlan {
    let (n, m) = c.shape();
    let mut plan = Matrix::zeros(n, m);
    let mut cost = 0.0;
    for i in 0..n {
        for j in 0..m {
            let p = ((f[i] + g[j] - c[(i, j)]) / eps).exp();
            plan[(i, j)] = p;
            cost += p * c[(i, j)];
        }
    }
    let col_res = column_residual(&plan, b);
    let row_res = if row_res.is_finite() {
        row_res
    } else {
        row_residual_plan(&plan, a)
    };
    TransportPlan {
        plan,
        cost,
        dual_f: f.to_vec(),
        dual_g: g.to_vec(),
        marginal_residuals: (row_res, col_res),
        converged,
    }
}

fn row_residual_plan(plan: &Matrix, a: &[f64]) -> f64 {
    plan.row_iter()
        .zip(a)
        .map(|(r, ai)| (r.iter().sum::<f64>() - ai).abs())
        .sum()
}

fn column_residual(plan: &Matrix, b: &[f64]) -> f64 {
    let mut cols = vec![0.0; b.len()];
    for r in plan.row_iter() {
        for (s, x) in cols.iter_mut().zip(r) {
            *s += x;
        }
    }
    cols.iter().zip(b).map(|(s, bj)| (s - bj).abs()).sum()
}

/// Unbalanced entropic OT with KL-relaxed marginals:
///
/// `min <C, P> + eps KL(P | a x b) + lambda1 KL(P 1 | a) + lambda2 KL(P^T 1 | b)`
///
/// on the squared Euclidean cost, solved in the log domain with the damped
/// scaling updates (exponents `lambda / (lambda + eps)`). Convergence is
/// declared when neither potential moves by more than `tol`.
pub fn sinkhorn_unbalanced(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    eps: f64,
    lambda1: f64,
    lambda2: f64,
    max_iter: usize,
    tol: f64,
) -> Result<TransportPlan> {
    mu.check_nonempty()?;
    nu.check_nonempty()?;
    let c = sq_dist_matrix(&mu.support, &nu.support);
    sinkhorn_unbalanced_with_cost(
        &mu.weights,
        &nu.weights,
        &c,
        eps,
        lambda1,
        lambda2,
        max_iter,
        tol,
    )
}

#[allow(clippy::too_many_arguments)]
pub fn sinkhorn_unbalanced_with_cost(
    a: &[f64],
    b: &[f64],
    c: &Matrix,
    eps: f64,
    lambda1: f64,
    lambda2: f64,
    max_iter: usize,
    tol: f64,
) -> Result<TransportPlan> {
    if !(eps > 0.0 && lambda1 > 0.0 && lambda2 > 0.0) {
        return Err(Error::arg(
            "unbalanced sinkhorn needs eps, lambda1, lambda2 > 0",
        ));
    }
    if c.shape() != (a.len(), b.len()) {
        return Err(Error::dim("cost matrix does not match the measures"));
    }
    let (n, m) = c.shape();
    let log_a: Vec<f64> = a.iter().map(|v| v.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|v| v.ln()).collect();
    let fi1 = lambda1 / (lambda1 + eps);
    let fi2 = lambda2 / (lambda2 + eps);
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut converged = false;
    let mut moved = f64::INFINITY;
    for _ in 0..max_iter {
        let (f_old, g_old) = (f.clone(), g.clone());
        for (i, fi) in f.iter_mut().enumerate() {
            let row = c.row(i);
            let lse = log_sum_exp(
                g.iter()
                    .zip(row)
                    .zip(&log_b)
                    .map(|((gj, cij), lb)| (gj - cij) / eps + lb),
            );
            *fi = -fi1 * eps * lse;
        }
        for (j, gj) in g.iter_mut().enumerate() {
            let lse = log_sum_exp(
                f.iter()
                    .zip(&log_a)
                    .enumerate()
                    .map(|(i, (fi, la))| (fi - c[(i, j)]) / eps + la),
            );
            *gj = -fi2 * eps * lse;
        }
        // The entropic term is invariant under (f + t, g - t); maximizing the
        // two marginal terms over t has a closed form and removes the slow
        // drift mode when lambda >> eps.
        let la = log_sum_exp(f.iter().zip(&log_a).map(|(fi, l)| l - fi / lambda1));
        let lb = log_sum_exp(g.iter().zip(&log_b).map(|(gj, l)| l - gj / lambda2));
        let t = (la - lb) / (1.0 / lambda1 + 1.0 / lambda2);
        if t.is_finite() {
            f.iter_mut().for_each(|x| *x += t);
            g.iter_mut().for_each(|x| *x -= t);
        }
        if f.iter().chain(&g).any(|x| !x.is_finite()) {
            return Err(Error::non_finite("unbalanced sinkhorn potentials diverged"));
        }
        moved = f
            .iter()
            .zip(&f_old)
            .chain(g.iter().zip(&g_old))
            .fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()));
        if moved < tol {
            converged = true;
            break;
        }
    }
    let mut plan = Matrix::zeros(n, m);
    let mut cost = 0.0;
    for i in 0..n {
        for j in 0..m {
            let p = (log_a[i] + log_b[j] + (f[i] + g[j] - c[(i, j)]) / eps).exp();
            plan[(i, j)] = p;
            cost += p * c[(i, j)];
        }
    }
    let row_res = row_residual_plan(&plan, a);
    let col_res = column_residual(&plan, b);
    let _ = moved;
    Ok(TransportPlan {
        plan,
        cost,
        dual_f: f,
        dual_g: g,
        marginal_residuals: (row_res, col_res),
        converged,
    })
}
