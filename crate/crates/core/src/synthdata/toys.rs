use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::SyntheticDataset;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToyKind {
    Branching,
    Dying,
    Growing,
    Arc,
}

impl std::str::FromStr for ToyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "branching" => Ok(ToyKind::Branching),
            "dying" => Ok(ToyKind::Dying),
            "growing" => Ok(ToyKind::Growing),
            "arc" => Ok(ToyKind::Arc),
            _ => Err(Error::Config(format!("unknown toy set {s:?}"))),
        }
    }
}

/// Branch sizes per snapshot and the per-cell spread.
fn layout(kind: ToyKind, n: usize, t_count: usize) -> (Vec<Vec<usize>>, f64) {
    let last = (t_count - 1) as f64;
    let counts = (0..t_count)
        .map(|t| {
            let s = t as f64 / last;
            match kind {
                ToyKind::Arc | ToyKind::Branching => vec![n],
                ToyKind::Dying => vec![n / 2, ((n / 2) as f64 * (1.0 - 0.8 * s)).round() as usize],
                ToyKind::Growing => vec![
                    (0.25 * n as f64 * 9f64.powf(s)).round() as usize,
                    (0.75 * n as f64).round() as usize,
                ],
            }
        })
        .collect();
    let sd = match kind {
        ToyKind::Arc => 0.1,
        ToyKind::Branching => 0.15,
        _ => 0.2,
    };
    (counts, sd)
}

fn branch_mean(kind: ToyKind, branch: usize, s: f64) -> [f64; 2] {
    match kind {
        ToyKind::Arc => {
            let a = std::f64::consts::PI * (1.0 - s);
            [2.0 * a.cos(), 2.0 * a.sin()]
        }
        ToyKind::Branching => {
            let sign = if branch == 0 { 1.0 } else { -1.0 };
            [3.0 * s, sign * 2.0 * s]
        }
        ToyKind::Dying | ToyKind::Growing => {
            let sign = if branch == 0 { 1.0 } else { -1.0 };
            [3.0 * s, sign * 1.5]
        }
    }
}

/// 2-D Gaussian-mixture snapshots with `n` cells at the first timepoint.
///
/// * `arc`: one cluster moving along a half circle of radius 2.
/// * `branching`: one cluster splitting into two diverging halves.
/// * `dying`: two parallel branches; branch 1 loses 80% of its cells.
/// * `growing`: branch 0 goes from a quarter to three quarters of the cells.
///
/// `growth_truth` is the branch's size ratio between a snapshot and the next
/// (the last snapshot repeats the final ratio).
pub fn toy_sets(
    kind: ToyKind,
    n: usize,
    t_count: usize,
    rng: RngState,
) -> Result<SyntheticDataset> {
    if t_count < 2 {
        return Err(Error::arg("toy sets need at least two timepoints"));
    }
    if n < 2 {
        return Err(Error::arg("toy sets need at least two cells per snapshot"));
    }
    let (counts, sd) = layout(kind, n, t_count);
    let normal = Normal::new(0.0, sd).expect("positive spread");
    let last = (t_count - 1) as f64;
    let ratio = |t: usize, b: usize| {
        let (a, c) = if t + 1 < t_count {
            (t, t + 1)
        } else {
            (t - 1, t)
        };
        let from = counts[a][b].max(1) as f64;
        counts[c][b] as f64 / from
    };
    let mut data = Vec::new();
    let mut timepoints = Vec::new();
    let mut branches = Vec::new();
    let mut times = Vec::new();
    let mut growth = Vec::new();
    for (t, sizes) in counts.iter().enumerate() {
        let s = t as f64 / last;
        let total: usize = sizes.iter().sum();
        for i in 0..total {
            let mut r = rng.derive_path(&[t as u64, i as u64]).stream();
            let (branch, group) = match kind {
                ToyKind::Branching => (i % 2, 0),
                ToyKind::Arc => (0, 0),
                _ => {
                    let b = usize::from(i >= sizes[0]);
                    (b, b)
                }
            };
            let m = branch_mean(kind, branch, s);
            data.push(m[0] + normal.sample(&mut r));
            data.push(m[1] + normal.sample(&mut r));
            timepoints.push(t);
            branches.push(branch);
            times.push(t as f64);
            growth.push(ratio(t, group));
        }
    }
    let rows = timepoints.len();
    Ok(SyntheticDataset {
        expression: Matrix::from_vec(rows, 2, data)?,
        timepoints,
        branches,
        times,
        growth_truth: Some(growth),
        n_timepoints: t_count,
    })
}
