//! Drift, diffusion and growth networks, and fixed-step ODE / SDE rollouts
//! with exact gradients through the unrolled solver.

mod integrate;

pub use integrate::{backprop_integrate, integrate, ModelGrads, PathUpstream, TrajectoryBatch};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{softplus_inv, Activation, ForwardCache, Matrix, Mlp, RngState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverMode {
    /// Deterministic; the diffusion head is gated off.
    Ode,
    /// Euler-Maruyama with diagonal noise.
    Sde,
}

/// Step rule for ODE rollouts. SDE rollouts always use Euler-Maruyama.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Euler,
    Rk4,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Blend between the raw drift (0) and its moving average (1).
    pub momentum_beta: f64,
    /// Decay of the drift moving average.
    pub momentum_gamma: f64,
    pub mode: SolverMode,
    pub scheme: Scheme,
    /// Initial diffusion level: the diffusion head's output bias is set to
    /// `softplus_inv(diffusion_init)`.
    pub diffusion_init: f64,
    /// Initial growth rate, likewise through the growth head's output bias.
    pub growth_init: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        DynamicsConfig {
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            momentum_beta: 0.0,
            momentum_gamma: 0.9,
            mode: SolverMode::Ode,
            scheme: Scheme::Euler,
            diffusion_init: 0.1,
            growth_init: 1.0,
        }
    }
}

/// Affine map applied to states before they reach the networks:
/// `u = (z - center) / scale`. Drift and diffusion outputs are multiplied
/// back by `scale`, so the networks work on unit-scale values whatever the
/// units of the latent space. The default is the identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateScale {
    pub center: Vec<f64>,
    pub scale: f64,
}

impl StateScale {
    pub fn identity(dim: usize) -> Self {
        StateScale {
            center: vec![0.0; dim],
            scale: 1.0,
        }
    }

    /// Pooled mean and root-mean-square deviation of all rows of `z`.
    pub fn fit(z: &[Matrix]) -> Result<Self> {
        let dim = z
            .first()
            .map(|m| m.cols())
            .ok_or_else(|| Error::arg("no snapshots to fit a state scale"))?;
        let n: usize = z.iter().map(|m| m.rows()).sum();
        if n == 0 {
            return Err(Error::arg("no cells to fit a state scale"));
        }
        let mut center = vec![0.0; dim];
        for m in z {
            for r in m.row_iter() {
                center
                    .iter_mut()
                    .zip(r)
                    .for_each(|(c, v)| *c += v / n as f64);
            }
        }
        let ss: f64 = z
            .iter()
            .flat_map(|m| m.row_iter())
            .map(|r| crate::numerics::sq_dist(r, &center))
            .sum();
        let scale = (ss / (n * dim) as f64).sqrt();
        if !scale.is_finite() || !center.iter().all(|c| c.is_finite()) {
            return Err(Error::non_finite("state scale"));
        }
        Ok(StateScale {
            center,
            scale: if scale > 0.0 { scale } else { 1.0 },
        })
    }
}

/// Trainable dynamics. Every network takes `[u, t]` as input, with `u` the
/// normalized state (see [`StateScale`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsModel {
    pub drift: Mlp,
    pub diffusion: Mlp,
    pub growth: Mlp,
    /// Absent in older checkpoints, which then load with the identity.
    #[serde(default)]
    pub state_scale: Option<StateScale>,
    pub momentum_beta: f64,
    pub momentum_gamma: f64,
    pub mode: SolverMode,
    pub scheme: Scheme,
}

impl DynamicsModel {
    /// Networks with all weights and biases zero.
    pub fn zeroed(dim: usize, hidden: &[usize], activation: Activation) -> Result<Self> {
        if dim == 0 {
            return Err(Error::arg("latent dimension must be positive"));
        }
        Ok(DynamicsModel {
            drift: Mlp::with_hidden(dim + 1, hidden, dim, activation, Activation::Identity)?,
            diffusion: Mlp::with_hidden(dim + 1, hidden, dim, activation, Activation::Softplus)?,
            growth: Mlp::with_hidden(dim + 1, hidden, 1, activation, Activation::Softplus)?,
            state_scale: None,
            momentum_beta: 0.0,
            momentum_gamma: 0.9,
            mode: SolverMode::Ode,
            scheme: Scheme::Euler,
        })
    }

    /// Glorot-initialised networks with output biases set from `cfg`.
    pub fn new(dim: usize, cfg: &DynamicsConfig, rng: RngState) -> Result<Self> {
        if !(0.0..=1.0).contains(&cfg.momentum_beta) || !(0.0..1.0).contains(&cfg.momentum_gamma) {
            return Err(Error::Config(
                "momentum_beta must lie in [0, 1] and momentum_gamma in [0, 1)".into(),
            ));
        }
        if !(cfg.diffusion_init > 0.0 && cfg.growth_init > 0.0) {
            return Err(Error::Config(
                "diffusion_init and growth_init must be positive".into(),
            ));
        }
        let mut m = DynamicsModel::zeroed(dim, &cfg.hidden, cfg.activation)?;
        m.drift.init_glorot(rng.derive(1));
        m.diffusion.init_glorot(rng.derive(2));
        m.growth.init_glorot(rng.derive(3));
        // Start the drift small and the positive heads nearly flat at their targets.
        for net in [&mut m.drift, &mut m.diffusion, &mut m.growth] {
            let last = net.num_layers() - 1;
            net.layer_mut(last).0.iter_mut().for_each(|w| *w *= 0.1);
        }
        set_output_bias(&mut m.diffusion, softplus_inv(cfg.diffusion_init));
        set_output_bias(&mut m.growth, softplus_inv(cfg.growth_init));
        m.momentum_beta = cfg.momentum_beta;
        m.momentum_gamma = cfg.momentum_gamma;
        m.mode = cfg.mode;
        m.scheme = cfg.scheme;
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.drift.output_dim()
    }

    fn input(&self, z: &[f64], t: f64) -> Result<Vec<f64>> {
        if z.len() != self.dim() {
            return Err(Error::dim(format!(
                "state has length {}, model dimension is {}",
                z.len(),
                self.dim()
            )));
        }
        if !t.is_finite() {
            return Err(Error::non_finite("time input"));
        }
        let mut x = Vec::with_capacity(z.len() + 1);
        match &self.state_scale {
            Some(s) => x.extend(z.iter().zip(&s.center).map(|(v, c)| (v - c) / s.scale)),
            None => x.extend_from_slice(z),
        }
        x.push(t);
        Ok(x)
    }

    /// Multiplier applied to drift and diffusion outputs.
    pub fn output_scale(&self) -> f64 {
        self.state_scale.as_ref().map_or(1.0, |s| s.scale)
    }

    /// Sets the state normalization (see [`StateScale`]).
    pub fn set_state_scale(&mut self, s: StateScale) -> Result<()> {
        if s.center.len() != self.dim() || !(s.scale > 0.0) {
            return Err(Error::dim("state scale does not match the model"));
        }
        self.state_scale = Some(s);
        Ok(())
    }

    /// Backprop of `g . net(z, t) * scale` for the drift or diffusion head;
    /// accumulates parameter gradients into `grad` and returns `d / dz`.
    fn head_backward(
        &self,
        net: &Mlp,
        z: &[f64],
        t: f64,
        g: &[f64],
        grad: &mut [f64],
    ) -> Result<Vec<f64>> {
        let s = self.output_scale();
        let cache: ForwardCache = net.forward_cached(&self.input(z, t)?)?;
        let gs: Vec<f64> = g.iter().map(|v| v * s).collect();
        let mut gx = net.backward(&cache, &gs, grad)?;
        gx.truncate(z.len());
        gx.iter_mut().for_each(|v| *v /= s);
        Ok(gx)
    }

    pub(crate) fn drift_backward(
        &self,
        z: &[f64],
        t: f64,
        g: &[f64],
        grad: &mut [f64],
    ) -> Result<Vec<f64>> {
        self.head_backward(&self.drift, z, t, g, grad)
    }

    pub(crate) fn diffusion_backward(
        &self,
        z: &[f64],
        t: f64,
        g: &[f64],
        grad: &mut [f64],
    ) -> Result<Vec<f64>> {
        self.head_backward(&self.diffusion, z, t, g, grad)
    }
}

fn set_output_bias(m: &mut Mlp, value: f64) {
    let last = m.num_layers() - 1;
    m.layer_mut(last).1.iter_mut().for_each(|b| *b = value);
}

pub fn eval_drift(m: &DynamicsModel, z: &[f64], t: f64) -> Result<Vec<f64>> {
    let s = m.output_scale();
    Ok(m.drift
        .forward(&m.input(z, t)?)?
        .into_iter()
        .map(|v| v * s)
        .collect())
}

pub fn eval_diffusion(m: &DynamicsModel, z: &[f64], t: f64) -> Result<Vec<f64>> {
    let s = m.output_scale();
    Ok(m.diffusion
        .forward(&m.input(z, t)?)?
        .into_iter()
        .map(|v| v * s)
        .collect())
}

pub fn eval_growth(m: &DynamicsModel, z: &[f64], t: f64) -> Result<f64> {
    Ok(m.growth.forward(&m.input(z, t)?)?[0])
}

/// Gradient of `upstream * h(z, t)` with respect to the growth parameters
/// (accumulated into `grad`) and to `z`.
pub fn growth_backward(
    m: &DynamicsModel,
    z: &[f64],
    t: f64,
    upstream: f64,
    grad: &mut [f64],
) -> Result<Vec<f64>> {
    let cache = m.growth.forward_cached(&m.input(z, t)?)?;
    let mut gx = m.growth.backward(&cache, &[upstream], grad)?;
    gx.truncate(m.dim());
    let s = m.output_scale();
    gx.iter_mut().for_each(|v| *v /= s);
    Ok(gx)
}
