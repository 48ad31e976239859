//! The training objective (marginal, energy and density terms) and the local
//! and global training loops.

mod growth;
mod losses;

pub use growth::{growth_targets, pretrain_growth, GrowthPretrain, GrowthTargets, UotParams};
pub use losses::{
    density_loss, density_loss_with_grad, energy_loss, energy_loss_grad, marginal_loss,
    MarginalLoss,
};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    backprop_integrate, eval_growth, growth_backward, integrate, DynamicsConfig, DynamicsModel,
    ModelGrads, PathUpstream, StateScale, TrajectoryBatch,
};
use crate::error::{Error, Result};
use crate::numerics::rng::{permutation, subsample};
use crate::numerics::{dist, median, Adam, Matrix, RngState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// Every segment starts from observed cells of its source snapshot.
    Local,
    /// One rollout from the first snapshot through all later ones.
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_m: f64,
    pub lambda_e: f64,
    pub lambda_d: f64,
    pub k_density: usize,
    /// Density hinge margin; defaults to a tenth of the median pairwise
    /// latent distance.
    pub h_margin: Option<f64>,
    pub batch_size: usize,
    pub iterations: usize,
    pub lr: f64,
    /// Growth head learning rate as a fraction of `lr`.
    pub growth_lr_scale: f64,
    pub seed: u64,
    pub mode: TrainMode,
    pub growth_enabled: bool,
    pub steps_per_unit: usize,
    pub uot: UotParams,
    /// Epochs of growth warm start (only with growth enabled).
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub dynamics: DynamicsConfig,
    /// Time of each snapshot; `0, 1, ..., T-1` when absent.
    pub times: Option<Vec<f64>>,
    /// Feed the networks centred, unit-scale states (see `StateScale`).
    pub normalize_states: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_m: 1.0,
            lambda_e: 0.01,
            lambda_d: 0.1,
            k_density: 5,
            h_margin: None,
            batch_size: 128,
            iterations: 1000,
            lr: 1e-3,
            growth_lr_scale: 0.1,
            seed: 0,
            mode: TrainMode::Local,
            growth_enabled: false,
            steps_per_unit: 10,
            uot: UotParams::default(),
            pretrain_epochs: 300,
            pretrain_lr: 1e-2,
            dynamics: DynamicsConfig::default(),
            normalize_states: true,
            times: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let lambdas = [self.lambda_m, self.lambda_e, self.lambda_d];
        if lambdas.iter().any(|l| !(*l >= 0.0)) || lambdas.iter().all(|l| *l == 0.0) {
            return Err(Error::Config(
                "loss weights must be nonnegative with at least one positive".into(),
            ));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if self.k_density == 0 || self.steps_per_unit == 0 {
            return Err(Error::Config(
                "k_density and steps_per_unit must be positive".into(),
            ));
        }
        if !(self.lr > 0.0) || !(self.growth_lr_scale > 0.0) || !(self.pretrain_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if let Some(ts) = &self.times {
            if ts.iter().any(|t| !t.is_finite()) || ts.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::Config(
                    "snapshot times must be finite and strictly increasing".into(),
                ));
            }
        }
        if let Some(h) = self.h_margin {
            if !(h >= 0.0) {
                return Err(Error::Config("h_margin must be nonnegative".into()));
            }
        }
        Ok(())
    }
}

/// Loss terms of one iteration, already weighted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub total: f64,
    pub marginal: f64,
    pub energy: f64,
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutput {
    pub model: DynamicsModel,
    pub history: Vec<LossRecord>,
    pub h_margin: f64,
    pub growth_pretrain: Option<GrowthPretrain>,
}

impl TrainOutput {
    pub fn loss_history(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.total).collect()
    }
}

/// Median pairwise distance over the pooled snapshots, on at most 1000
/// subsampled points.
pub fn median_pairwise_distance(z: &[Matrix], rng: RngState) -> f64 {
    let pooled: Vec<&[f64]> = z.iter().flat_map(|m| m.row_iter()).collect();
    let idx = subsample(pooled.len(), 1000, &mut rng.stream());
    let mut d = Vec::with_capacity(idx.len() * idx.len() / 2);
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            d.push(dist(pooled[i], pooled[j]));
        }
    }
    median(&d).unwrap_or(0.0)
}

/// Draws per-snapshot mini-batches without replacement within each pass
/// over a snapshot.
struct Sampler {
    sizes: Vec<usize>,
    batch: usize,
    rng: RngState,
    perms: HashMap<(usize, usize), Vec<usize>>,
}

impl Sampler {
    fn new(sizes: Vec<usize>, batch: usize, rng: RngState) -> Self {
        Sampler {
            sizes,
            batch,
            rng,
            perms: HashMap::new(),
        }
    }

    fn batches(&mut self, it: usize) -> Vec<Vec<usize>> {
        (0..self.sizes.len())
            .map(|t| {
                let n = self.sizes[t];
                if self.batch >= n {
                    return (0..n).collect();
                }
                (it * self.batch..(it + 1) * self.batch)
                    .map(|p| {
                        let (epoch, r) = (p / n, p % n);
                        let rng = self.rng;
                        self.perms.entry((t, epoch)).or_insert_with(|| {
                            permutation(n, &mut rng.derive_path(&[t as u64, epoch as u64]).stream())
                        })[r]
                    })
                    .collect()
            })
            .collect()
    }

    fn forget_before(&mut self, it: usize) {
        let (batch, sizes) = (self.batch, self.sizes.clone());
        self.perms
            .retain(|(t, e), _| (e + 1) * sizes[*t] > it * batch);
    }
}

/// Settings shared by every evaluation of the objective.
#[derive(Debug, Clone)]
pub struct ObjectiveSettings {
    pub lambda_m: f64,
    pub lambda_e: f64,
    pub lambda_d: f64,
    pub k_density: usize,
    pub h_margin: f64,
    pub steps_per_unit: usize,
    pub mode: TrainMode,
    pub growth_enabled: bool,
    /// Snapshot times; index `t` when absent.
    pub times: Option<Vec<f64>>,
}

impl ObjectiveSettings {
    pub fn time_of(&self, t: usize) -> f64 {
        self.times.as_ref().map_or(t as f64, |ts| ts[t])
    }

    /// Solver steps for the segment leaving snapshot `t`.
    pub fn segment_steps(&self, t: usize) -> usize {
        let span = self.time_of(t + 1) - self.time_of(t);
        ((self.steps_per_unit as f64 * span).round() as usize).max(1)
    }

    pub fn from_config(cfg: &TrainConfig, h_margin: f64) -> Self {
        ObjectiveSettings {
            lambda_m: cfg.lambda_m,
            lambda_e: cfg.lambda_e,
            lambda_d: cfg.lambda_d,
            k_density: cfg.k_density,
            h_margin,
            steps_per_unit: cfg.steps_per_unit,
            mode: cfg.mode,
            growth_enabled: cfg.growth_enabled,
            times: cfg.times.clone(),
        }
    }
}

/// Per-segment forward data kept for the backward pass.
struct Segment {
    t: usize,
    start: Matrix,
    traj: TrajectoryBatch,
    growth: Vec<f64>,
    mass_in: Vec<f64>,
    end_grad: Matrix,
    mass_grad: Vec<f64>,
    drift_grad: Vec<Matrix>,
}

/// Value and gradients of the training objective on one set of batches.
///
/// `z[t]` are the full snapshots, `batches[t]` the row indices drawn from
/// each.
pub fn objective(
    model: &DynamicsModel,
    z: &[Matrix],
    batches: &[Vec<usize>],
    s: &ObjectiveSettings,
    rng: RngState,
) -> Result<(LossRecord, ModelGrads)> {
    let tn = z.len();
    if tn < 2 || batches.len() != tn {
        return Err(Error::arg(
            "objective needs at least two snapshots and one batch per snapshot",
        ));
    }
    if s.times.as_ref().is_some_and(|ts| ts.len() != tn) {
        return Err(Error::dim("one time per snapshot required"));
    }
    let k_density = |t: usize| s.k_density.min(z[t].rows());
    let mut rec = LossRecord {
        total: 0.0,
        marginal: 0.0,
        energy: 0.0,
        density: 0.0,
    };
    let mut segments: Vec<Segment> = Vec::with_capacity(tn - 1);
    let mut carry: Option<(Matrix, Vec<f64>)> = None;
    for t in 0..tn - 1 {
        let (start, mass_in) = match (s.mode, carry.take()) {
            (TrainMode::Global, Some(c)) => c,
            _ => {
                let st = z[t].select_rows(&batches[t]);
                let n = st.rows();
                (st, vec![1.0; n])
            }
        };
        let growth: Vec<f64> = if s.growth_enabled {
            start
                .row_iter()
                .map(|r| eval_growth(model, r, s.time_of(t)))
                .collect::<Result<_>>()?
        } else {
            vec![1.0; start.rows()]
        };
        let masses: Vec<f64> = mass_in.iter().zip(&growth).map(|(a, b)| a * b).collect();
        let traj = integrate(
            model,
            &start,
            s.time_of(t),
            s.time_of(t + 1),
            s.segment_steps(t),
            rng.derive(t as u64),
        )?;
        let end = traj.endpoints();
        let target = z[t + 1].select_rows(&batches[t + 1]);

        let mut end_grad = Matrix::zeros(end.rows(), end.cols());
        let mut mass_grad = vec![0.0; end.rows()];
        if s.lambda_m > 0.0 {
            let ml = marginal_loss(&end, &masses, &target)?;
            rec.marginal += s.lambda_m * ml.value;
            end_grad
                .data_mut()
                .iter_mut()
                .zip(ml.grad_points.data())
                .for_each(|(a, b)| *a += s.lambda_m * b);
            mass_grad
                .iter_mut()
                .zip(&ml.grad_masses)
                .for_each(|(a, b)| *a += s.lambda_m * b);
        }
        if s.lambda_d > 0.0 {
            let (d, g) = density_loss_with_grad(&end, &z[t + 1], k_density(t + 1), s.h_margin)?;
            rec.density += s.lambda_d * d;
            end_grad
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .for_each(|(a, b)| *a += s.lambda_d * b);
        }
        let drift_grad = if s.lambda_e > 0.0 {
            rec.energy += s.lambda_e * energy_loss(&traj);
            energy_loss_grad(&traj)
                .into_iter()
                .map(|g| g.scale(s.lambda_e))
                .collect()
        } else {
            Vec::new()
        };
        if s.mode == TrainMode::Global {
            carry = Some((end, masses));
        }
        segments.push(Segment {
            t,
            start,
            traj,
            growth,
            mass_in,
            end_grad,
            mass_grad,
            drift_grad,
        });
    }
    rec.total = rec.marginal + rec.energy + rec.density;

    let mut grads = ModelGrads::zeros(model, 0);
    // Gradients with respect to the next segment's start states and masses.
    let mut carry_z: Option<Matrix> = None;
    let mut carry_m: Option<Vec<f64>> = None;
    for seg in segments.iter().rev() {
        let mut end_grad = seg.end_grad.clone();
        let mut mass_grad = seg.mass_grad.clone();
        if let Some(cz) = carry_z.take() {
            end_grad
                .data_mut()
                .iter_mut()
                .zip(cz.data())
                .for_each(|(a, b)| *a += b);
        }
        if let Some(cm) = carry_m.take() {
            mass_grad.iter_mut().zip(&cm).for_each(|(a, b)| *a += b);
        }
        let mut up = PathUpstream::endpoint(&seg.traj, &end_grad)?;
        if !seg.drift_grad.is_empty() {
            up.drift_evals = Some(seg.drift_grad.clone());
        }
        let g = backprop_integrate(model, &seg.traj, &up)?;
        grads.add_assign(&g);
        let mut start_grad = g.z0;
        if s.growth_enabled {
            for i in 0..seg.start.rows() {
                let hbar = mass_grad[i] * seg.mass_in[i];
                if hbar != 0.0 {
                    let gz = growth_backward(
                        model,
                        seg.start.row(i),
                        s.time_of(seg.t),
                        hbar,
                        &mut grads.growth,
                    )?;
                    start_grad
                        .row_mut(i)
                        .iter_mut()
                        .zip(&gz)
                        .for_each(|(a, b)| *a += b);
                }
            }
        }
        if s.mode == TrainMode::Global {
            carry_m = Some(
                mass_grad
                    .iter()
                    .zip(&seg.growth)
                    .map(|(a, b)| a * b)
                    .collect(),
            );
            carry_z = Some(start_grad);
        }
    }
    Ok((rec, grads))
}

/// Trains a dynamics model on latent snapshots `z[0..T]`, placed at
/// `cfg.times` or at `0..T`.
pub fn train(z: &[Matrix], cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    if z.len() < 2 {
        return Err(Error::arg(format!(
            "training needs at least two timepoints, got {}",
            z.len()
        )));
    }
    let d = z[0].cols();
    for (t, zt) in z.iter().enumerate() {
        if zt.cols() != d {
            return Err(Error::dim(format!(
                "snapshot {t} has {} columns, expected {d}",
                zt.cols()
            )));
        }
        if zt.rows() < 2 {
            return Err(Error::arg(format!("snapshot {t} has fewer than two cells")));
        }
        zt.ensure_finite("latent snapshot")?;
    }
    let times: Vec<f64> = match &cfg.times {
        Some(ts) if ts.len() != z.len() => {
            return Err(Error::Config(format!(
                "{} snapshot times for {} snapshots",
                ts.len(),
                z.len()
            )))
        }
        Some(ts) => ts.clone(),
        None => (0..z.len()).map(|t| t as f64).collect(),
    };
    let root = RngState::new(cfg.seed);
    let mut model = DynamicsModel::new(d, &cfg.dynamics, root.derive(1))?;
    if cfg.normalize_states {
        model.set_state_scale(StateScale::fit(z)?)?;
    }
    let h_margin = cfg
        .h_margin
        .unwrap_or_else(|| 0.1 * median_pairwise_distance(z, root.derive(2)));

    let growth_pretrain = if cfg.growth_enabled && cfg.pretrain_epochs > 0 {
        Some(pretrain_growth(
            &mut model,
            z,
            &times,
            &cfg.uot,
            cfg.pretrain_epochs,
            cfg.pretrain_lr,
        )?)
    } else {
        None
    };

    let settings = ObjectiveSettings::from_config(cfg, h_margin);
    let batch = z
        .iter()
        .map(|m| m.rows())
        .min()
        .unwrap()
        .min(cfg.batch_size);
    let mut sampler = Sampler::new(z.iter().map(|m| m.rows()).collect(), batch, root.derive(3));
    let nd = model.drift.num_params();
    let mut opt_main = Adam::new(nd + model.diffusion.num_params(), cfg.lr);
    let mut opt_growth = Adam::new(model.growth.num_params(), cfg.lr * cfg.growth_lr_scale);
    let mut history = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let batches = sampler.batches(it);
        sampler.forget_before(it);
        let (rec, grads) = objective(
            &model,
            z,
            &batches,
            &settings,
            root.derive_path(&[4, it as u64]),
        )
        .map_err(|e| match e {
            Error::NonFinite(msg) => Error::NonFinite(format!("iteration {it}: {msg}")),
            other => other,
        })?;
        if !rec.total.is_finite() {
            return Err(Error::non_finite(format!(
                "training loss at iteration {it} is {}",
                rec.total
            )));
        }
        let mut params = [model.drift.params(), model.diffusion.params()].concat();
        let g = [&grads.drift[..], &grads.diffusion[..]].concat();
        opt_main
            .step(&mut params, &g)
            .map_err(|e| Error::non_finite(format!("iteration {it}: {e}")))?;
        model.drift.set_params(&params[..nd])?;
        model.diffusion.set_params(&params[nd..])?;
        if cfg.growth_enabled {
            opt_growth.step(model.growth.params_mut(), &grads.growth)?;
        }
        history.push(rec);
    }
    Ok(TrainOutput {
        model,
        history,
        h_margin,
        growth_pretrain,
    })
}

/// Rolls `z0` forward from `t0` over `units` unit intervals, accumulating
/// growth masses once per interval when `with_growth` is set.
pub fn simulate(
    model: &DynamicsModel,
    z0: &Matrix,
    t0: f64,
    units: usize,
    steps_per_unit: usize,
    with_growth: bool,
    rng: RngState,
) -> Result<TrajectoryBatch> {
    if units == 0 {
        return Err(Error::arg("simulation needs at least one unit interval"));
    }
    let mut masses = vec![1.0; z0.rows()];
    let mut start = z0.clone();
    let mut out: Option<TrajectoryBatch> = None;
    for u in 0..units {
        let t = t0 + u as f64;
        if with_growth {
            for (i, m) in masses.iter_mut().enumerate() {
                *m *= eval_growth(model, start.row(i), t)?;
            }
        }
        let seg = integrate(
            model,
            &start,
            t,
            t + 1.0,
            steps_per_unit,
            rng.derive(u as u64),
        )?;
        start = seg.endpoints();
        out = Some(match out {
            None => seg,
            Some(mut acc) => {
                for (p, q) in acc.paths.iter_mut().zip(&seg.paths) {
                    let tail =
                        Matrix::from_vec(q.rows() - 1, q.cols(), q.data()[q.cols()..].to_vec())?;
                    *p = Matrix::vstack(&[p, &tail])?;
                }
                for (p, q) in acc.drift_evals.iter_mut().zip(&seg.drift_evals) {
                    *p = Matrix::vstack(&[p, q])?;
                }
                if let (Some(a), Some(b)) = (acc.noise.as_mut(), seg.noise.as_ref()) {
                    for (p, q) in a.iter_mut().zip(b) {
                        *p = Matrix::vstack(&[p, q])?;
                    }
                }
                acc.times.extend_from_slice(&seg.times[1..]);
                acc
            }
        });
    }
    let mut batch = out.expect("units >= 1");
    batch.masses = masses;
    Ok(batch)
}
