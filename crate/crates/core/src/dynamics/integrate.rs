use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DynamicsModel, Scheme, SolverMode};
use crate::error::{Error, Result};
use crate::numerics::{par, Matrix, RngState};

/// Latent paths of a batch of cells on a uniform time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryBatch {
    /// One `(n_steps + 1) x d` matrix per cell.
    pub paths: Vec<Matrix>,
    pub times: Vec<f64>,
    pub masses: Vec<f64>,
    /// Raw drift `f(z_k, t_k)` at every step, `n_steps x d` per cell.
    pub drift_evals: Vec<Matrix>,
    /// Standard normal draws used by each step (SDE rollouts only).
    pub noise: Option<Vec<Matrix>>,
    pub mode: SolverMode,
    pub scheme: Scheme,
}

impl TrajectoryBatch {
    pub fn n_cells(&self) -> usize {
        self.paths.len()
    }

    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn step(&self) -> f64 {
        (self.times[self.n_steps()] - self.times[0]) / self.n_steps() as f64
    }

    pub fn dim(&self) -> usize {
        self.paths.first().map_or(0, |p| p.cols())
    }

    /// Final states, one row per cell.
    pub fn endpoints(&self) -> Matrix {
        self.states_at(self.n_steps())
    }

    pub fn states_at(&self, k: usize) -> Matrix {
        let d = self.dim();
        let data = self.paths.iter().flat_map(|p| p.row(k).to_vec()).collect();
        Matrix::from_vec(self.n_cells(), d, data).expect("paths share one shape")
    }
}

/// Gradients flowing into a rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct PathUpstream {
    /// `d loss / d z_k`, `(n_steps + 1) x d` per cell.
    pub paths: Vec<Matrix>,
    /// Optional `d loss / d f(z_k, t_k)`, `n_steps x d` per cell.
    pub drift_evals: Option<Vec<Matrix>>,
}

impl PathUpstream {
    pub fn zeros(batch: &TrajectoryBatch) -> Self {
        let (s, d) = (batch.n_steps(), batch.dim());
        PathUpstream {
            paths: vec![Matrix::zeros(s + 1, d); batch.n_cells()],
            drift_evals: None,
        }
    }

    /// Upstream gradient on the final states only.
    pub fn endpoint(batch: &TrajectoryBatch, grad: &Matrix) -> Result<Self> {
        if grad.shape() != (batch.n_cells(), batch.dim()) {
            return Err(Error::dim("endpoint gradient does not match the batch"));
        }
        let mut up = PathUpstream::zeros(batch);
        let s = batch.n_steps();
        for (i, p) in up.paths.iter_mut().enumerate() {
            p.row_mut(s).copy_from_slice(grad.row(i));
        }
        Ok(up)
    }
}

/// Parameter gradients of a rollout, plus the gradient with respect to the
/// initial states.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub drift: Vec<f64>,
    pub diffusion: Vec<f64>,
    pub growth: Vec<f64>,
    pub z0: Matrix,
}

impl ModelGrads {
    pub fn zeros(m: &DynamicsModel, n_cells: usize) -> Self {
        ModelGrads {
            drift: vec![0.0; m.drift.num_params()],
            diffusion: vec![0.0; m.diffusion.num_params()],
            growth: vec![0.0; m.growth.num_params()],
            z0: Matrix::zeros(n_cells, m.dim()),
        }
    }

    pub fn add_assign(&mut self, other: &ModelGrads) {
        let pairs = [
            (&mut self.drift, &other.drift),
            (&mut self.diffusion, &other.diffusion),
            (&mut self.growth, &other.growth),
        ];
        for (a, b) in pairs {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    /// Concatenation in drift, diffusion, growth order.
    pub fn flat(&self) -> Vec<f64> {
        [&self.drift[..], &self.diffusion[..], &self.growth[..]].concat()
    }
}

/// Rolls every row of `z0` forward from `t0` to `t1` in `n_steps` uniform steps.
///
/// The drift is refined with an exponential moving average
/// `v_k = gamma v_{k-1} + (1 - gamma) f(z_k, t_k)`, `v_{-1} = f(z_0, t_0)`,
/// and the step uses `(1 - beta) f + beta v`. ODE rollouts use the model's
/// scheme (RK4 holds `v_k` fixed inside the step); SDE rollouts use
/// Euler-Maruyama with noise from `rng.derive(cell index)`.
pub fn integrate(
    m: &DynamicsModel,
    z0: &Matrix,
    t0: f64,
    t1: f64,
    n_steps: usize,
    rng: RngState,
) -> Result<TrajectoryBatch> {
    if n_steps == 0 {
        return Err(Error::arg("integration needs at least one step"));
    }
    if !(t1 > t0) || !t0.is_finite() || !t1.is_finite() {
        return Err(Error::arg(format!("invalid time interval [{t0}, {t1}]")));
    }
    if z0.cols() != m.dim() {
        return Err(Error::dim(format!(
            "initial states have {} columns, model dimension is {}",
            z0.cols(),
            m.dim()
        )));
    }
    z0.ensure_finite("initial states")?;
    let h = (t1 - t0) / n_steps as f64;
    let times: Vec<f64> = (0..=n_steps).map(|k| t0 + k as f64 * h).collect();

    let cells: Vec<Result<(Matrix, Matrix, Option<Matrix>)>> = par::map_indexed(z0.rows(), |i| {
        rollout_cell(m, z0.row(i), &times, rng.derive(i as u64))
    });
    let mut paths = Vec::with_capacity(z0.rows());
    let mut drift_evals = Vec::with_capacity(z0.rows());
    let mut noise = Vec::new();
    for c in cells {
        let (p, f, xi) = c?;
        paths.push(p);
        drift_evals.push(f);
        if let Some(x) = xi {
            noise.push(x);
        }
    }
    Ok(TrajectoryBatch {
        paths,
        times,
        masses: vec![1.0; z0.rows()],
        drift_evals,
        noise: (m.mode == SolverMode::Sde).then_some(noise),
        mode: m.mode,
        scheme: m.scheme,
    })
}

fn rollout_cell(
    m: &DynamicsModel,
    z0: &[f64],
    times: &[f64],
    rng: RngState,
) -> Result<(Matrix, Matrix, Option<Matrix>)> {
    let d = z0.len();
    let n = times.len() - 1;
    let h = times[1] - times[0];
    let (beta, gamma) = (m.momentum_beta, m.momentum_gamma);
    let mut path = Matrix::zeros(n + 1, d);
    let mut fe = Matrix::zeros(n, d);
    let sde = m.mode == SolverMode::Sde;
    let mut xi = sde.then(|| Matrix::zeros(n, d));
    let mut stream = sde.then(|| rng.stream());
    path.row_mut(0).copy_from_slice(z0);
    let mut z = z0.to_vec();
    let mut v: Vec<f64> = Vec::new();
    for k in 0..n {
        let t = times[k];
        let f = super::eval_drift(m, &z, t)?;
        if k == 0 {
            v = f.clone();
        } else {
            v.iter_mut()
                .zip(&f)
                .for_each(|(vi, fi)| *vi = gamma * *vi + (1.0 - gamma) * fi);
        }
        fe.row_mut(k).copy_from_slice(&f);
        let blend = |fi: &[f64]| -> Vec<f64> {
            fi.iter()
                .zip(&v)
                .map(|(a, b)| (1.0 - beta) * a + beta * b)
                .collect()
        };
        let k1 = blend(&f);
        if let (Some(xi), Some(stream)) = (xi.as_mut(), stream.as_mut()) {
            let sigma = super::eval_diffusion(m, &z, t)?;
            let sh = h.sqrt();
            let row = xi.row_mut(k);
            for j in 0..d {
                let e: f64 = StandardNormal.sample(stream);
                row[j] = e;
                z[j] += h * k1[j] + sh * sigma[j] * e;
            }
        } else if m.scheme == Scheme::Rk4 {
            let y2: Vec<f64> = z.iter().zip(&k1).map(|(a, b)| a + 0.5 * h * b).collect();
            let k2 = blend(&super::eval_drift(m, &y2, t + 0.5 * h)?);
            let y3: Vec<f64> = z.iter().zip(&k2).map(|(a, b)| a + 0.5 * h * b).collect();
            let k3 = blend(&super::eval_drift(m, &y3, t + 0.5 * h)?);
            let y4: Vec<f64> = z.iter().zip(&k3).map(|(a, b)| a + h * b).collect();
            let k4 = blend(&super::eval_drift(m, &y4, t + h)?);
            for j in 0..d {
                z[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
        } else {
            for j in 0..d {
                z[j] += h * k1[j];
            }
        }
        if z.iter().any(|x| !x.is_finite()) {
            return Err(Error::non_finite(format!(
                "state became non-finite at step {}",
                k + 1
            )));
        }
        path.row_mut(k + 1).copy_from_slice(&z);
    }
    Ok((path, fe, xi))
}

/// Exact reverse-mode gradients of the discrete rollout in `batch`.
///
/// Recorded states and noise draws are reused, so SDE gradients are the
/// pathwise ones for the same Brownian increments. The growth entry of the
/// result is always zero; growth does not act inside a rollout.
pub fn backprop_integrate(
    m: &DynamicsModel,
    batch: &TrajectoryBatch,
    upstream: &PathUpstream,
) -> Result<ModelGrads> {
    let n_cells = batch.n_cells();
    if upstream.paths.len() != n_cells {
        return Err(Error::dim("upstream gradients do not match the batch"));
    }
    if batch.drift_evals.len() != n_cells {
        return Err(Error::arg("batch is missing recorded drift evaluations"));
    }
    if batch.mode == SolverMode::Sde && batch.noise.as_ref().is_none_or(|x| x.len() != n_cells) {
        return Err(Error::arg("sde batch is missing recorded noise"));
    }
    if batch.dim() != m.dim() && n_cells > 0 {
        return Err(Error::dim("batch dimension does not match the model"));
    }
    let (nd, ns) = (m.drift.num_params(), m.diffusion.num_params());
    let chunk = par::CHUNK;
    let starts: Vec<usize> = (0..n_cells).step_by(chunk).collect();
    let partials: Vec<Result<(Vec<f64>, Vec<Vec<f64>>)>> = starts
        .par_iter()
        .map(|&s| {
            let mut g = vec![0.0; nd + ns];
            let mut z0s = Vec::new();
            for i in s..(s + chunk).min(n_cells) {
                let (gd, gs) = g.split_at_mut(nd);
                z0s.push(backprop_cell(m, batch, upstream, i, gd, gs)?);
            }
            Ok((g, z0s))
        })
        .collect();
    let mut out = ModelGrads::zeros(m, n_cells);
    let mut row = 0;
    for p in partials {
        let (g, z0s) = p?;
        out.drift
            .iter_mut()
            .zip(&g[..nd])
            .for_each(|(a, b)| *a += b);
        out.diffusion
            .iter_mut()
            .zip(&g[nd..])
            .for_each(|(a, b)| *a += b);
        for z in z0s {
            out.z0.row_mut(row).copy_from_slice(&z);
            row += 1;
        }
    }
    Ok(out)
}

fn check_shape(mat: &Matrix, rows: usize, cols: usize, what: &str) -> Result<()> {
    if mat.shape() != (rows, cols) {
        return Err(Error::dim(format!(
            "{what} has shape {:?}, expected ({rows}, {cols})",
            mat.shape()
        )));
    }
    Ok(())
}

/// Backprop of `g . f(z, t)` through the drift; returns `d / dz`.
fn drift_vjp(
    m: &DynamicsModel,
    z: &[f64],
    t: f64,
    g: &[f64],
    grad: &mut [f64],
) -> Result<Vec<f64>> {
    m.drift_backward(z, t, g, grad)
}

fn backprop_cell(
    m: &DynamicsModel,
    batch: &TrajectoryBatch,
    upstream: &PathUpstream,
    i: usize,
    gdrift: &mut [f64],
    gdiff: &mut [f64],
) -> Result<Vec<f64>> {
    let n = batch.n_steps();
    let d = batch.dim();
    let h = batch.step();
    let (beta, gamma) = (m.momentum_beta, m.momentum_gamma);
    let path = &batch.paths[i];
    let fe = &batch.drift_evals[i];
    check_shape(path, n + 1, d, "path")?;
    check_shape(fe, n, d, "drift record")?;
    check_shape(&upstream.paths[i], n + 1, d, "path gradient")?;
    let up_f = upstream.drift_evals.as_ref().map(|u| &u[i]);
    if let Some(u) = up_f {
        check_shape(u, n, d, "drift gradient")?;
    }

    // Moving averages are recomputed from the recorded drift values.
    let mut vs = Matrix::zeros(n, d);
    for k in 0..n {
        for j in 0..d {
            vs[(k, j)] = if k == 0 {
                fe[(0, j)]
            } else {
                gamma * vs[(k - 1, j)] + (1.0 - gamma) * fe[(k, j)]
            };
        }
    }

    let mut zbar: Vec<f64> = upstream.paths[i].row(n).to_vec();
    let mut vbar_next = vec![0.0; d];
    for k in (0..n).rev() {
        let t = batch.times[k];
        let zk = path.row(k);
        let vk = vs.row(k);
        // zbar holds d/dz_{k+1}; it also flows straight through to z_k.
        let znext_bar = zbar.clone();
        let mut vbar = vec![0.0; d];
        let mut fbar = vec![0.0; d];
        match (batch.mode, batch.scheme) {
            (SolverMode::Sde, _) => {
                let xi = &batch.noise.as_ref().expect("checked above")[i];
                let sh = h.sqrt();
                let sbar: Vec<f64> = (0..d).map(|j| sh * xi[(k, j)] * znext_bar[j]).collect();
                let gx = m.diffusion_backward(zk, t, &sbar, gdiff)?;
                (0..d).for_each(|j| zbar[j] += gx[j]);
                for j in 0..d {
                    let abar = h * znext_bar[j];
                    fbar[j] += (1.0 - beta) * abar;
                    vbar[j] += beta * abar;
                }
            }
            (SolverMode::Ode, Scheme::Euler) => {
                for j in 0..d {
                    let abar = h * znext_bar[j];
                    fbar[j] += (1.0 - beta) * abar;
                    vbar[j] += beta * abar;
                }
            }
            (SolverMode::Ode, Scheme::Rk4) => {
                let blend = |fi: &[f64]| -> Vec<f64> {
                    fi.iter()
                        .zip(vk)
                        .map(|(a, b)| (1.0 - beta) * a + beta * b)
                        .collect()
                };
                let k1 = blend(fe.row(k));
                let y2: Vec<f64> = zk.iter().zip(&k1).map(|(a, b)| a + 0.5 * h * b).collect();
                let k2 = blend(&super::eval_drift(m, &y2, t + 0.5 * h)?);
                let y3: Vec<f64> = zk.iter().zip(&k2).map(|(a, b)| a + 0.5 * h * b).collect();
                let k3 = blend(&super::eval_drift(m, &y3, t + 0.5 * h)?);
                let y4: Vec<f64> = zk.iter().zip(&k3).map(|(a, b)| a + h * b).collect();

                let mut k1b: Vec<f64> = znext_bar.iter().map(|g| h / 6.0 * g).collect();
                let mut k2b: Vec<f64> = znext_bar.iter().map(|g| h / 3.0 * g).collect();
                let mut k3b: Vec<f64> = k2b.clone();
                let k4b: Vec<f64> = k1b.clone();

                let stage = |kb: &[f64],
                             y: &[f64],
                             ts: f64,
                             vbar: &mut [f64],
                             grad: &mut [f64]|
                 -> Result<Vec<f64>> {
                    let g: Vec<f64> = kb.iter().map(|x| (1.0 - beta) * x).collect();
                    kb.iter()
                        .zip(vbar.iter_mut())
                        .for_each(|(x, vb)| *vb += beta * x);
                    drift_vjp(m, y, ts, &g, grad)
                };
                let y4b = stage(&k4b, &y4, t + h, &mut vbar, gdrift)?;
                for j in 0..d {
                    zbar[j] += y4b[j];
                    k3b[j] += h * y4b[j];
                }
                let y3b = stage(&k3b, &y3, t + 0.5 * h, &mut vbar, gdrift)?;
                for j in 0..d {
                    zbar[j] += y3b[j];
                    k2b[j] += 0.5 * h * y3b[j];
                }
                let y2b = stage(&k2b, &y2, t + 0.5 * h, &mut vbar, gdrift)?;
                for j in 0..d {
                    zbar[j] += y2b[j];
                    k1b[j] += 0.5 * h * y2b[j];
                }
                for j in 0..d {
                    fbar[j] += (1.0 - beta) * k1b[j];
                    vbar[j] += beta * k1b[j];
                }
            }
        }
        // v_{k+1} = gamma v_k + ..., and v_k = gamma v_{k-1} + (1 - gamma) f_k
        // with v_{-1} = f_0.
        for j in 0..d {
            vbar[j] += gamma * vbar_next[j];
            fbar[j] += (1.0 - gamma) * vbar[j];
            if k == 0 {
                fbar[j] += gamma * vbar[j];
            }
            if let Some(u) = up_f {
                fbar[j] += u[(k, j)];
            }
        }
        if fbar.iter().any(|x| *x != 0.0) {
            let gz = drift_vjp(m, zk, t, &fbar, gdrift)?;
            (0..d).for_each(|j| zbar[j] += gz[j]);
        }
        vbar_next = vbar;
        let up_k = upstream.paths[i].row(k);
        (0..d).for_each(|j| zbar[j] += up_k[j]);
    }
    Ok(zbar)
}
