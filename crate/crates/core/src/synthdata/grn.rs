use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{RngState, Stream};

/// Signed Hill interaction `regulator -> target`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HillEdge {
    pub regulator: usize,
    pub target: usize,
    pub weight: f64,
    pub k: f64,
    pub n: f64,
}

/// Gene regulatory network plus the cell-state programs that drive it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrnSpec {
    pub genes: usize,
    pub edges: Vec<HillEdge>,
    pub basal: Vec<f64>,
    pub decay: Vec<f64>,
    /// Gene indices of the master regulators.
    pub masters: Vec<usize>,
    /// `programs[state][m]`: target level of `masters[m]` in that state.
    pub programs: Vec<Vec<f64>>,
    /// Directed `(from, to)` state transitions.
    pub transitions: Vec<(usize, usize)>,
    pub noise_scale: f64,
    /// Simulated time spent on one state transition.
    pub edge_time: f64,
}

impl GrnSpec {
    pub fn validate(&self) -> Result<()> {
        let g = self.genes;
        if g == 0 {
            return Err(Error::Config("network has no genes".into()));
        }
        if self.basal.len() != g || self.decay.len() != g {
            return Err(Error::Config(format!(
                "{g} genes but {} basal rates and {} decay rates",
                self.basal.len(),
                self.decay.len()
            )));
        }
        if self.basal.iter().any(|b| !(*b >= 0.0) || !b.is_finite()) {
            return Err(Error::Config(
                "basal rates must be finite and nonnegative".into(),
            ));
        }
        if self.decay.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
            return Err(Error::Config("decay rates must be positive".into()));
        }
        let mut is_master = vec![false; g];
        for &m in &self.masters {
            if m >= g || is_master[m] {
                return Err(Error::Config(format!(
                    "master regulator {m} is out of range or repeated"
                )));
            }
            is_master[m] = true;
        }
        for e in &self.edges {
            if e.regulator >= g || e.target >= g {
                return Err(Error::Config(format!(
                    "edge {} -> {} out of range",
                    e.regulator, e.target
                )));
            }
            if is_master[e.target] {
                return Err(Error::Config(format!(
                    "master regulator {} has an incoming edge",
                    e.target
                )));
            }
            if !(e.k > 0.0) || !(e.n >= 1.0) || !e.weight.is_finite() {
                return Err(Error::Config(format!(
                    "edge {} -> {} needs K > 0, n >= 1 and a finite weight",
                    e.regulator, e.target
                )));
            }
        }
        if self.programs.is_empty() {
            return Err(Error::Config("no cell-state programs".into()));
        }
        for (s, p) in self.programs.iter().enumerate() {
            if p.len() != self.masters.len() || p.iter().any(|v| !(*v >= 0.0)) {
                return Err(Error::Config(format!(
                    "program of state {s} needs {} nonnegative levels",
                    self.masters.len()
                )));
            }
        }
        let ns = self.programs.len();
        if let Some(&(a, b)) = self.transitions.iter().find(|(a, b)| *a >= ns || *b >= ns) {
            return Err(Error::Config(format!(
                "transition {a} -> {b} references a missing state"
            )));
        }
        if !(self.noise_scale >= 0.0) || !(self.edge_time > 0.0) {
            return Err(Error::Config(
                "noise_scale must be >= 0 and edge_time > 0".into(),
            ));
        }
        Ok(())
    }

    /// Basal vector with master regulators driven to `levels` at steady state.
    pub fn driven_basal(&self, levels: &[f64]) -> Vec<f64> {
        let mut b = self.basal.clone();
        for (&m, &l) in self.masters.iter().zip(levels) {
            b[m] = self.decay[m] * l;
        }
        b
    }

    /// Random layered wiring: every non-master gene gets one master regulator
    /// and, half the time, a second regulator among the genes before it.
    pub fn layered(
        genes: usize,
        n_masters: usize,
        programs: Vec<Vec<f64>>,
        transitions: Vec<(usize, usize)>,
        wiring_seed: u64,
    ) -> Result<GrnSpec> {
        if n_masters == 0 || n_masters > genes {
            return Err(Error::Config(format!(
                "{n_masters} master regulators for {genes} genes"
            )));
        }
        let mut r = RngState::new(wiring_seed).stream();
        let mut edges = Vec::new();
        for target in n_masters..genes {
            let mut regs = vec![r.random_range(0..n_masters)];
            if r.random_bool(0.5) {
                let second = r.random_range(0..target);
                if second != regs[0] {
                    regs.push(second);
                }
            }
            for regulator in regs {
                let weight = if r.random_bool(0.75) {
                    r.random_range(1.0..3.0)
                } else {
                    -r.random_range(0.5..2.0)
                };
                edges.push(HillEdge {
                    regulator,
                    target,
                    weight,
                    k: r.random_range(1.0..3.0),
                    n: 2.0,
                });
            }
        }
        let mut basal = vec![0.1; genes];
        basal[..n_masters].iter_mut().for_each(|b| *b = 0.0);
        let decay = (0..genes).map(|_| r.random_range(0.8..1.2)).collect();
        let spec = GrnSpec {
            genes,
            edges,
            basal,
            decay,
            masters: (0..n_masters).collect(),
            programs,
            transitions,
            noise_scale: 0.1,
            edge_time: 6.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// One progenitor state with transitions to three fates, 100 genes.
    pub fn trifurcation() -> GrnSpec {
        let lo = 0.3;
        let mut programs = vec![vec![lo; 9]; 4];
        programs[0][..3].copy_from_slice(&[3.0, 3.0, 3.0]);
        for fate in 0..3 {
            let p = &mut programs[fate + 1];
            p[0] = 1.0;
            p[3 + 2 * fate] = 4.0;
            p[4 + 2 * fate] = 4.0;
        }
        GrnSpec::layered(100, 9, programs, vec![(0, 1), (0, 2), (0, 3)], 7)
            .expect("built-in network is valid")
    }

    /// Three-state cycle followed by a split into two fates, 1000 genes.
    pub fn s_shape() -> GrnSpec {
        let lo = 0.3;
        let mut programs = vec![vec![lo; 12]; 5];
        for (s, prog) in programs.iter_mut().enumerate() {
            let hi: &[usize] = match s {
                0 => &[0, 1],
                1 => &[2, 3],
                2 => &[4, 5],
                3 => &[6, 7, 8],
                _ => &[9, 10, 11],
            };
            hi.iter().for_each(|&m| prog[m] = 4.0);
        }
        let transitions = vec![(0, 1), (1, 2), (2, 0), (0, 3), (0, 4)];
        GrnSpec::layered(1000, 12, programs, transitions, 11).expect("built-in network is valid")
    }
}

fn hill(x: f64, k: f64, n: f64) -> f64 {
    let xn = x.max(0.0).powf(n);
    xn / (k.powf(n) + xn)
}

/// Deterministic part of the dynamics under `basal`.
pub fn grn_drift(spec: &GrnSpec, basal: &[f64], x: &[f64]) -> Vec<f64> {
    let mut d: Vec<f64> = (0..spec.genes)
        .map(|i| basal[i] - spec.decay[i] * x[i])
        .collect();
    for e in &spec.edges {
        d[e.target] += e.weight * hill(x[e.regulator], e.k, e.n);
    }
    d
}

/// One Euler-Maruyama step with the network's own basal rates.
pub fn grn_step(spec: &GrnSpec, x: &[f64], dt: f64, rng: &mut Stream) -> Result<Vec<f64>> {
    grn_step_with_basal(spec, &spec.basal, x, dt, rng)
}

/// One Euler-Maruyama step with noise std `noise_scale * sqrt(x) * sqrt(dt)`,
/// clamped at zero.
pub fn grn_step_with_basal(
    spec: &GrnSpec,
    basal: &[f64],
    x: &[f64],
    dt: f64,
    rng: &mut Stream,
) -> Result<Vec<f64>> {
    if x.len() != spec.genes || basal.len() != spec.genes {
        return Err(Error::dim(format!(
            "state of {} genes, network has {}",
            x.len(),
            spec.genes
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::arg("dt must be positive"));
    }
    let d = grn_drift(spec, basal, x);
    let sq = dt.sqrt();
    let mut out = Vec::with_capacity(spec.genes);
    for i in 0..spec.genes {
        let mut v = x[i] + dt * d[i];
        if spec.noise_scale > 0.0 {
            let xi: f64 = rng.sample(StandardNormal);
            v += spec.noise_scale * x[i].max(0.0).sqrt() * sq * xi;
        }
        if !v.is_finite() {
            return Err(Error::non_finite(format!("gene {i} after a network step")));
        }
        out.push(v.max(0.0));
    }
    Ok(out)
}
