//! Benchmark data: a stochastic Hill-kinetics network simulator driven along
//! a graph of cell states, a technical noise model, and small 2-D mixtures
//! with known branching and growth.

mod grn;
mod toys;

pub use grn::{grn_drift, grn_step, grn_step_with_basal, GrnSpec, HillEdge};
pub use toys::{toy_sets, ToyKind};

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{par, rng::subsample, Matrix, RngState};

/// Simulated cells with ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    /// Cells x features.
    pub expression: Matrix,
    /// Snapshot index of each cell, `0..n_timepoints`.
    pub timepoints: Vec<usize>,
    /// Ground-truth branch or lineage of each cell.
    pub branches: Vec<usize>,
    /// Ground-truth continuous time of each cell.
    pub times: Vec<f64>,
    /// Per-cell mass multiplier between its snapshot and the next, when known.
    pub growth_truth: Option<Vec<f64>>,
    pub n_timepoints: usize,
}

impl SyntheticDataset {
    pub fn n_cells(&self) -> usize {
        self.expression.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_cells();
        if self.timepoints.len() != n || self.branches.len() != n || self.times.len() != n {
            return Err(Error::dim("label vectors do not match the cell count"));
        }
        if self.timepoints.iter().any(|&t| t >= self.n_timepoints) {
            return Err(Error::arg("timepoint label out of range"));
        }
        if let Some(g) = &self.growth_truth {
            if g.len() != n {
                return Err(Error::dim("growth truth does not match the cell count"));
            }
        }
        self.expression.ensure_finite("expression")
    }

    /// Row indices of each snapshot, in order.
    pub fn snapshot_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_timepoints];
        for (i, &t) in self.timepoints.iter().enumerate() {
            out[t].push(i);
        }
        out
    }

    pub fn snapshots(&self) -> Vec<Matrix> {
        self.snapshot_indices()
            .iter()
            .map(|idx| self.expression.select_rows(idx))
            .collect()
    }

    /// Keeps the given rows.
    pub fn subset(&self, idx: &[usize]) -> SyntheticDataset {
        SyntheticDataset {
            expression: self.expression.select_rows(idx),
            timepoints: idx.iter().map(|&i| self.timepoints[i]).collect(),
            branches: idx.iter().map(|&i| self.branches[i]).collect(),
            times: idx.iter().map(|&i| self.times[i]).collect(),
            growth_truth: self
                .growth_truth
                .as_ref()
                .map(|g| idx.iter().map(|&i| g[i]).collect()),
            n_timepoints: self.n_timepoints,
        }
    }
}

/// Sampling settings for [`simulate_lineages`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LineageOptions {
    /// Total cells, split evenly across root-to-leaf paths.
    pub n_cells: usize,
    /// Integration steps per state transition.
    pub steps: usize,
    /// Pseudotime is cut into this many equal snapshot bins.
    pub n_timepoints: usize,
}

impl Default for LineageOptions {
    fn default() -> Self {
        LineageOptions {
            n_cells: 500,
            steps: 100,
            n_timepoints: 5,
        }
    }
}

/// Root-to-leaf state paths of an acyclic transition graph.
pub fn state_paths(spec: &GrnSpec) -> Result<Vec<Vec<usize>>> {
    let ns = spec.programs.len();
    let mut out_edges = vec![Vec::new(); ns];
    let mut indeg = vec![0usize; ns];
    for &(a, b) in &spec.transitions {
        out_edges[a].push(b);
        indeg[b] += 1;
    }
    // Kahn's algorithm doubles as the cycle check.
    let mut queue: Vec<usize> = (0..ns).filter(|&s| indeg[s] == 0).collect();
    let mut deg = indeg.clone();
    let mut seen = 0;
    while let Some(s) = queue.pop() {
        seen += 1;
        for &t in &out_edges[s] {
            deg[t] -= 1;
            if deg[t] == 0 {
                queue.push(t);
            }
        }
    }
    if seen != ns {
        return Err(Error::Config(
            "state graph has a cycle; pass explicit paths".into(),
        ));
    }
    let mut paths = Vec::new();
    let mut stack: Vec<Vec<usize>> = (0..ns)
        .filter(|&s| indeg[s] == 0)
        .map(|s| vec![s])
        .collect();
    stack.reverse();
    while let Some(p) = stack.pop() {
        let last = *p.last().expect("paths are nonempty");
        if out_edges[last].is_empty() {
            paths.push(p);
        } else {
            for &t in out_edges[last].iter().rev() {
                let mut q = p.clone();
                q.push(t);
                stack.push(q);
            }
        }
    }
    Ok(paths)
}

/// Cells sampled along every root-to-leaf path of the state graph.
pub fn simulate_lineages(
    spec: &GrnSpec,
    opts: &LineageOptions,
    rng: RngState,
) -> Result<SyntheticDataset> {
    spec.validate()?;
    let paths = state_paths(spec)?;
    simulate_paths(spec, &paths, opts, rng)
}

fn master_levels(spec: &GrnSpec, path: &[usize], tau: f64) -> Vec<f64> {
    if path.len() == 1 {
        return spec.programs[path[0]].clone();
    }
    let e = (tau.floor() as usize).min(path.len() - 2);
    let frac = tau - e as f64;
    spec.programs[path[e]]
        .iter()
        .zip(&spec.programs[path[e + 1]])
        .map(|(a, b)| (1.0 - frac) * a + frac * b)
        .collect()
}

/// Noise-free steady state of a state program.
fn settle(spec: &GrnSpec, state: usize, steps: usize) -> Result<Vec<f64>> {
    let basal = spec.driven_basal(&spec.programs[state]);
    let mut x: Vec<f64> = basal.iter().zip(&spec.decay).map(|(b, l)| b / l).collect();
    let quiet = GrnSpec {
        noise_scale: 0.0,
        ..spec.clone()
    };
    let dt = spec.edge_time / steps as f64;
    let mut r = RngState::new(0).stream();
    for _ in 0..10 * steps {
        x = grn_step_with_basal(&quiet, &basal, &x, dt, &mut r)?;
    }
    Ok(x)
}

/// Like [`simulate_lineages`] with explicit state sequences, which may revisit
/// states. Cell `c` follows path `c % paths.len()` from the settled start
/// state, with master regulators interpolated linearly between consecutive
/// programs, and stops at a uniform pseudotime.
pub fn simulate_paths(
    spec: &GrnSpec,
    paths: &[Vec<usize>],
    opts: &LineageOptions,
    rng: RngState,
) -> Result<SyntheticDataset> {
    spec.validate()?;
    if paths.is_empty() || paths.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(
            "need at least one nonempty state path".into(),
        ));
    }
    let ns = spec.programs.len();
    for p in paths {
        if p.iter().any(|&s| s >= ns) {
            return Err(Error::Config(
                "state path references a missing state".into(),
            ));
        }
        for w in p.windows(2) {
            if !spec.transitions.contains(&(w[0], w[1])) {
                return Err(Error::Config(format!("no transition {} -> {}", w[0], w[1])));
            }
        }
    }
    if opts.steps == 0 || opts.n_timepoints == 0 || opts.n_cells == 0 {
        return Err(Error::Config(
            "n_cells, steps and n_timepoints must be positive".into(),
        ));
    }
    let mut starts: Vec<(usize, Vec<f64>)> = Vec::new();
    for p in paths {
        if !starts.iter().any(|(s, _)| *s == p[0]) {
            starts.push((p[0], settle(spec, p[0], opts.steps)?));
        }
    }
    let dt = spec.edge_time / opts.steps as f64;
    let cells: Vec<Result<(Vec<f64>, f64)>> = par::map_indexed(opts.n_cells, |c| {
        let p = &paths[c % paths.len()];
        let edges = (p.len() - 1).max(1);
        let mut r = rng.derive(c as u64).stream();
        let u: f64 = r.random();
        let k = ((u * (edges * opts.steps) as f64).floor() as usize).min(edges * opts.steps);
        let mut x = starts
            .iter()
            .find(|(s, _)| *s == p[0])
            .expect("start settled")
            .1
            .clone();
        for step in 0..k {
            let tau = step as f64 / opts.steps as f64;
            let basal = spec.driven_basal(&master_levels(spec, p, tau));
            x = grn_step_with_basal(spec, &basal, &x, dt, &mut r)?;
        }
        Ok((x, k as f64 / (edges * opts.steps) as f64))
    });
    let mut data = Vec::with_capacity(opts.n_cells * spec.genes);
    let mut times = Vec::with_capacity(opts.n_cells);
    for c in cells {
        let (x, t) = c?;
        data.extend(x);
        times.push(t);
    }
    let nt = opts.n_timepoints;
    let timepoints = times
        .iter()
        .map(|t| ((t * nt as f64).floor() as usize).min(nt - 1))
        .collect();
    Ok(SyntheticDataset {
        expression: Matrix::from_vec(opts.n_cells, spec.genes, data)?,
        timepoints,
        branches: (0..opts.n_cells).map(|c| c % paths.len()).collect(),
        times,
        growth_truth: None,
        n_timepoints: nt,
    })
}

/// Library size, dropout and optional Poisson sampling.
pub fn technical_noise(
    expr: &Matrix,
    library_range: (f64, f64),
    dropout_p: f64,
    poisson: bool,
    rng: RngState,
) -> Result<Matrix> {
    if !(0.0..=1.0).contains(&dropout_p) {
        return Err(Error::arg(format!(
            "dropout probability {dropout_p} outside [0, 1]"
        )));
    }
    let (lo, hi) = library_range;
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(Error::arg(format!(
            "library range ({lo}, {hi}) must satisfy 0 < lo <= hi"
        )));
    }
    let rows: Vec<Vec<f64>> = par::map_indexed(expr.rows(), |i| {
        let mut r = rng.derive(i as u64).stream();
        let factor = if hi > lo {
            (lo.ln() + r.random::<f64>() * (hi / lo).ln()).exp()
        } else {
            lo
        };
        expr.row(i)
            .iter()
            .map(|&x| {
                let drop = r.random::<f64>() < dropout_p;
                let mean = (x * factor).max(0.0);
                let v = if poisson && mean > 0.0 {
                    Poisson::new(mean).map(|d| d.sample(&mut r)).unwrap_or(mean)
                } else {
                    mean
                };
                if drop {
                    0.0
                } else {
                    v
                }
            })
            .collect()
    });
    Matrix::from_vec(expr.rows(), expr.cols(), rows.concat())
}

/// 500 cells, 100 genes, five pseudotime snapshots, three fates.
pub fn trifurcation(seed: u64) -> Result<SyntheticDataset> {
    simulate_lineages(
        &GrnSpec::trifurcation(),
        &LineageOptions::default(),
        RngState::new(seed),
    )
}

/// Sizes for [`s_shape`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SShapeOptions {
    pub simulated_cells: usize,
    pub kept_cells: usize,
    pub steps: usize,
    pub n_timepoints: usize,
}

impl Default for SShapeOptions {
    fn default() -> Self {
        SShapeOptions {
            simulated_cells: 990,
            kept_cells: 315,
            steps: 40,
            n_timepoints: 5,
        }
    }
}

/// A full turn of a three-state cycle, then a split into two fates;
/// 1000 genes, subsampled after simulation.
pub fn s_shape(opts: &SShapeOptions, rng: RngState) -> Result<SyntheticDataset> {
    let spec = GrnSpec::s_shape();
    let paths = vec![vec![0, 1, 2, 0, 3], vec![0, 1, 2, 0, 4]];
    let lin = LineageOptions {
        n_cells: opts.simulated_cells,
        steps: opts.steps,
        n_timepoints: opts.n_timepoints,
    };
    let full = simulate_paths(&spec, &paths, &lin, rng.derive(0))?;
    let keep = subsample(full.n_cells(), opts.kept_cells, &mut rng.derive(1).stream());
    Ok(full.subset(&keep))
}
