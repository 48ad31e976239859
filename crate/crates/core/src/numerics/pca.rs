use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

/// Principal component projection fitted by eigendecomposition of the covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `d x input_dim`, orthonormal rows.
    pub components: Matrix,
    /// Variances along each component, nonincreasing.
    pub explained_variance: Vec<f64>,
}

/// Fits the top-`d` principal components of `x`.
///
/// Each component is signed so that its largest-magnitude entry is positive
/// (lowest index wins ties), which makes the fit reproducible across runs.
pub fn pca_fit(x: &Matrix, d: usize) -> Result<PcaModel> {
    let (n, p) = x.shape();
    if n < 2 {
        return Err(Error::arg("pca needs at least two rows"));
    }
    if d == 0 || d > n.min(p) {
        return Err(Error::arg(format!(
            "pca dimension {d} out of range 1..={}",
            n.min(p)
        )));
    }
    x.ensure_finite("pca input")?;

    let mean = x.column_means();
    let mut cov = DMatrix::<f64>::zeros(p, p);
    let mut centered = vec![0.0; p];
    for r in x.row_iter() {
        for j in 0..p {
            centered[j] = r[j] - mean[j];
        }
        for a in 0..p {
            let ca = centered[a];
            if ca == 0.0 {
                continue;
            }
            for b in a..p {
                cov[(a, b)] += ca * centered[b];
            }
        }
    }
    let denom = (n - 1) as f64;
    for a in 0..p {
        for b in a..p {
            let v = cov[(a, b)] / denom;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .total_cmp(&eig.eigenvalues[i])
            .then(i.cmp(&j))
    });

    let mut components = Matrix::zeros(d, p);
    let mut explained_variance = Vec::with_capacity(d);
    for (k, &idx) in order.iter().take(d).enumerate() {
        let col = eig.eigenvectors.column(idx);
        let mut pivot = 0;
        for j in 1..p {
            if col[j].abs() > col[pivot].abs() {
                pivot = j;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        let row = components.row_mut(k);
        for j in 0..p {
            row[j] = sign * col[j];
        }
        explained_variance.push(eig.eigenvalues[idx].max(0.0));
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance,
    })
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.components.rows()
    }

    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.input_dim() {
            return Err(Error::dim(format!(
                "pca expects {} columns, got {}",
                self.input_dim(),
                x.cols()
            )));
        }
        let d = self.output_dim();
        let mut out = Matrix::zeros(x.rows(), d);
        for i in 0..x.rows() {
            let r = x.row(i);
            for k in 0..d {
                let c = self.components.row(k);
                out[(i, k)] = r
                    .iter()
                    .zip(&self.mean)
                    .zip(c)
                    .map(|((v, m), w)| (v - m) * w)
                    .sum();
            }
        }
        Ok(out)
    }

    pub fn inverse_transform(&self, z: &Matrix) -> Result<Matrix> {
        if z.cols() != self.output_dim() {
            return Err(Error::dim(format!(
                "pca inverse expects {} columns, got {}",
                self.output_dim(),
                z.cols()
            )));
        }
        let mut out = z.matmul(&self.components)?;
        for i in 0..out.rows() {
            for (v, m) in out.row_mut(i).iter_mut().zip(&self.mean) {
                *v += m;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_points_on_x_axis() {
        let x = Matrix::from_rows(&[vec![0.0, 0.0], vec![2.0, 0.0]]).unwrap();
        let m = pca_fit(&x, 1).unwrap();
        assert_eq!(m.mean, vec![1.0, 0.0]);
        assert!((m.components[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(m.components[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn full_basis_round_trip() {
        let x = Matrix::from_rows(&[
            vec![1.0, 2.0, 0.5],
            vec![-1.0, 0.3, 2.0],
            vec![0.4, -2.0, 1.0],
            vec![3.0, 1.0, -1.0],
        ])
        .unwrap();
        let m = pca_fit(&x, 3).unwrap();
        let back = m.inverse_transform(&m.transform(&x).unwrap()).unwrap();
        for (a, b) in back.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn rejects_bad_dimension() {
        let x = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!(pca_fit(&x, 0).is_err());
        assert!(pca_fit(&x, 3).is_err());
        let one = Matrix::from_rows(&[vec![0.0, 1.0]]).unwrap();
        assert!(pca_fit(&one, 1).is_err());
        let bad = Matrix::from_rows(&[vec![f64::NAN, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!(matches!(pca_fit(&bad, 1), Err(Error::NonFinite(_))));
    }

    #[test]
    fn sign_convention_largest_entry_positive() {
        let x = Matrix::from_rows(&[vec![0.0, 0.0], vec![-1.0, -3.0], vec![1.0, 3.2]]).unwrap();
        let m = pca_fit(&x, 1).unwrap();
        let c = m.components.row(0);
        let big = if c[0].abs() > c[1].abs() { c[0] } else { c[1] };
        assert!(big > 0.0);
    }
}
