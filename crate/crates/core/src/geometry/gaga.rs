use serde::{Deserialize, Serialize};

use super::PotentialDistances;
use crate::error::{Error, Result};
use crate::numerics::rng::permutation;
use crate::numerics::{median, par, Activation, Adam, Matrix, Mlp, RngState};

/// Batches up to this many points use every pair for the geometric loss.
pub const FULL_BATCH_LIMIT: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GagaConfig {
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    /// Points per mini-batch when the data exceed [`FULL_BATCH_LIMIT`].
    pub batch_size: usize,
    pub lr: f64,
    pub lambda_geo: f64,
    pub lambda_rec: f64,
    pub seed: u64,
}

impl Default for GagaConfig {
    fn default() -> Self {
        GagaConfig {
            latent_dim: 2,
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            epochs: 1000,
            batch_size: 256,
            lr: 3e-3,
            lambda_geo: 1.0,
            lambda_rec: 1.0,
            seed: 0,
        }
    }
}

/// Encoder / decoder pair whose latent distances track potential distances.
///
/// Inputs are standardized per column before the encoder, and the encoder
/// output is multiplied by `latent_scale` (the median target distance) so the
/// networks work on unit-scale values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoAutoencoder {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub lambda_geo: f64,
    pub lambda_rec: f64,
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub latent_scale: f64,
    /// Training loss per epoch.
    pub loss_history: Vec<f64>,
}

impl GeoAutoencoder {
    pub fn ambient_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.input_mean)
            .zip(&self.input_scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn encode_point(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.ambient_dim() {
            return Err(Error::dim(format!(
                "encoder expects {} features, got {}",
                self.ambient_dim(),
                x.len()
            )));
        }
        let u = self.encoder.forward(&self.standardize(x))?;
        Ok(u.into_iter().map(|v| v * self.latent_scale).collect())
    }

    pub fn decode_point(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.latent_dim() {
            return Err(Error::dim(format!(
                "decoder expects {} latent coordinates, got {}",
                self.latent_dim(),
                z.len()
            )));
        }
        let u: Vec<f64> = z.iter().map(|v| v / self.latent_scale).collect();
        let y = self.decoder.forward(&u)?;
        Ok(y.iter()
            .zip(&self.input_mean)
            .zip(&self.input_scale)
            .map(|((v, m), s)| v * s + m)
            .collect())
    }
}

pub fn encode(ae: &GeoAutoencoder, x: &Matrix) -> Result<Matrix> {
    map_rows(x, ae.latent_dim(), |r| ae.encode_point(r))
}

pub fn decode(ae: &GeoAutoencoder, z: &Matrix) -> Result<Matrix> {
    map_rows(z, ae.ambient_dim(), |r| ae.decode_point(r))
}

fn map_rows(
    x: &Matrix,
    out_dim: usize,
    f: impl Fn(&[f64]) -> Result<Vec<f64>> + Sync,
) -> Result<Matrix> {
    let rows: Vec<Result<Vec<f64>>> = par::map_indexed(x.rows(), |i| f(x.row(i)));
    let mut data = Vec::with_capacity(x.rows() * out_dim);
    for r in rows {
        data.extend(r?);
    }
    Matrix::from_vec(x.rows(), out_dim, data)
}

/// Trains the autoencoder on `x` against target distances `d_target`.
///
/// Loss: `lambda_geo * mean_pairs (|z_i - z_j| - D_ij)^2 + lambda_rec * mse`,
/// the reconstruction error measured on standardized features.
pub fn train_gaga(
    x: &Matrix,
    d_target: &PotentialDistances,
    cfg: &GagaConfig,
) -> Result<GeoAutoencoder> {
    let (n, p) = x.shape();
    if d_target.len() != n {
        return Err(Error::dim(format!(
            "{n} points but {} target distances",
            d_target.len()
        )));
    }
    if n < 2 {
        return Err(Error::arg("autoencoder training needs at least two points"));
    }
    if cfg.latent_dim == 0 || cfg.epochs == 0 || cfg.batch_size < 2 {
        return Err(Error::Config(
            "latent_dim, epochs must be positive and batch_size >= 2".into(),
        ));
    }
    if !(cfg.lr > 0.0) || cfg.lambda_geo < 0.0 || cfg.lambda_rec < 0.0 {
        return Err(Error::Config(
            "lr must be positive and loss weights nonnegative".into(),
        ));
    }
    x.ensure_finite("autoencoder input")?;

    let input_mean = x.column_means();
    let input_scale: Vec<f64> = x
        .column_stds()
        .into_iter()
        .map(|s| if s > 1e-12 { s } else { 1.0 })
        .collect();
    let latent_scale = median(&d_target.upper_triangle())
        .filter(|m| *m > 0.0)
        .unwrap_or(1.0);

    let root = RngState::new(cfg.seed);
    let mut encoder = Mlp::with_hidden(
        p,
        &cfg.hidden,
        cfg.latent_dim,
        cfg.activation,
        Activation::Identity,
    )?;
    encoder.init_glorot(root.derive(1));
    let mut rev_hidden = cfg.hidden.clone();
    rev_hidden.reverse();
    let mut decoder = Mlp::with_hidden(
        cfg.latent_dim,
        &rev_hidden,
        p,
        cfg.activation,
        Activation::Identity,
    )?;
    decoder.init_glorot(root.derive(2));

    let mut ae = GeoAutoencoder {
        encoder,
        decoder,
        lambda_geo: cfg.lambda_geo,
        lambda_rec: cfg.lambda_rec,
        input_mean,
        input_scale,
        latent_scale,
        loss_history: Vec::with_capacity(cfg.epochs),
    };
    let xs = Matrix::from_vec(n, p, x.row_iter().flat_map(|r| ae.standardize(r)).collect())?;

    let mut opt_e = Adam::new(ae.encoder.num_params(), cfg.lr);
    let mut opt_d = Adam::new(ae.decoder.num_params(), cfg.lr);
    for epoch in 0..cfg.epochs {
        let batches: Vec<Vec<usize>> = if n <= FULL_BATCH_LIMIT {
            vec![(0..n).collect()]
        } else {
            let perm = permutation(n, &mut root.derive_path(&[3, epoch as u64]).stream());
            perm.chunks(cfg.batch_size)
                .filter(|c| c.len() >= 2)
                .map(|c| c.to_vec())
                .collect()
        };
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for batch in &batches {
            let (loss, ge, gd) = batch_gradient(&ae, &xs, d_target, batch)?;
            if !loss.is_finite() {
                return Err(Error::non_finite(format!(
                    "autoencoder loss at epoch {epoch} is {loss}"
                )));
            }
            opt_e.step(ae.encoder.params_mut(), &ge)?;
            opt_d.step(ae.decoder.params_mut(), &gd)?;
            epoch_loss += loss * batch.len() as f64;
            seen += batch.len();
        }
        ae.loss_history.push(epoch_loss / seen as f64);
    }
    Ok(ae)
}

/// Loss and parameter gradients (encoder, decoder) on one batch of points.
fn batch_gradient(
    ae: &GeoAutoencoder,
    xs: &Matrix,
    d_target: &PotentialDistances,
    batch: &[usize],
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let b = batch.len();
    let p = xs.cols();
    let s = ae.latent_scale;
    let caches = par::map_indexed(b, |k| -> Result<_> {
        let ce = ae.encoder.forward_cached(xs.row(batch[k]))?;
        let cd = ae.decoder.forward_cached(ce.output())?;
        Ok((ce, cd))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let latent = ae.latent_dim();
    let z: Vec<Vec<f64>> = caches
        .iter()
        .map(|(ce, _)| ce.output().iter().map(|v| v * s).collect())
        .collect();
    let mut grad_z = vec![vec![0.0; latent]; b];
    let pairs = (b * (b - 1) / 2) as f64;
    let mut geo = 0.0;
    if ae.lambda_geo > 0.0 {
        for i in 0..b {
            for j in i + 1..b {
                let diff: Vec<f64> = z[i].iter().zip(&z[j]).map(|(a, c)| a - c).collect();
                let rho = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
                let r = rho - d_target.d[(batch[i], batch[j])];
                geo += r * r;
                if rho > 1e-12 {
                    let coef = ae.lambda_geo * 2.0 * r / (rho * pairs);
                    for k in 0..latent {
                        grad_z[i][k] += coef * diff[k];
                        grad_z[j][k] -= coef * diff[k];
                    }
                }
            }
        }
    }
    let rec_norm = (b * p) as f64;
    let mut rec = 0.0;
    for (k, (_, cd)) in caches.iter().enumerate() {
        let xk = xs.row(batch[k]);
        rec += cd
            .output()
            .iter()
            .zip(xk)
            .map(|(a, c)| (a - c) * (a - c))
            .sum::<f64>();
    }
    let loss = ae.lambda_geo * geo / pairs + ae.lambda_rec * rec / rec_norm;

    let ne = ae.encoder.num_params();
    let nd = ae.decoder.num_params();
    let grads = par::chunked_sum(b, par::CHUNK, ne + nd, |range| {
        let mut g = vec![0.0; ne + nd];
        let (ge, gd) = g.split_at_mut(ne);
        for k in range {
            let (ce, cd) = &caches[k];
            let xk = xs.row(batch[k]);
            let up_rec: Vec<f64> = cd
                .output()
                .iter()
                .zip(xk)
                .map(|(a, c)| ae.lambda_rec * 2.0 * (a - c) / rec_norm)
                .collect();
            let gu = ae
                .decoder
                .backward(cd, &up_rec, gd)
                .expect("decoder shapes are fixed");
            let up: Vec<f64> = grad_z[k]
                .iter()
                .zip(&gu)
                .map(|(gz, g)| gz * s + g)
                .collect();
            ae.encoder
                .backward(ce, &up, ge)
                .expect("encoder shapes are fixed");
        }
        g
    });
    let (ge, gd) = grads.split_at(ne);
    Ok((loss, ge.to_vec(), gd.to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{diffusion_operator, potential_distances};
    use crate::numerics::{dist, pearson};

    fn circle(n: usize, noise: f64, seed: u64) -> Matrix {
        use rand::Rng;
        let mut r = RngState::new(seed).stream();
        let mut data = Vec::new();
        for i in 0..n {
            let a = i as f64 / n as f64 * std::f64::consts::TAU;
            data.push(a.cos() + noise * r.random_range(-1.0..1.0));
            data.push(a.sin() + noise * r.random_range(-1.0..1.0));
        }
        Matrix::from_vec(n, 2, data).unwrap()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let x = circle(8, 0.05, 1);
        let d = potential_distances(&diffusion_operator(&x, 2, 2).unwrap()).unwrap();
        let cfg = GagaConfig {
            hidden: vec![5],
            epochs: 1,
            ..Default::default()
        };
        let ae = train_gaga(&x, &d, &cfg).unwrap();
        let xs =
            Matrix::from_vec(8, 2, x.row_iter().flat_map(|r| ae.standardize(r)).collect()).unwrap();
        let batch: Vec<usize> = (0..8).collect();
        let (_, ge, gd) = batch_gradient(&ae, &xs, &d, &batch).unwrap();
        let h = 1e-6;
        for k in [0, 3, ae.encoder.num_params() - 1] {
            let mut a = ae.clone();
            a.encoder.params_mut()[k] += h;
            let lp = batch_gradient(&a, &xs, &d, &batch).unwrap().0;
            a.encoder.params_mut()[k] -= 2.0 * h;
            let lm = batch_gradient(&a, &xs, &d, &batch).unwrap().0;
            let fd = (lp - lm) / (2.0 * h);
            assert!(
                (fd - ge[k]).abs() < 1e-6 * (1.0 + fd.abs()),
                "enc {k}: {fd} vs {}",
                ge[k]
            );
        }
        for k in [0, 7, ae.decoder.num_params() - 1] {
            let mut a = ae.clone();
            a.decoder.params_mut()[k] += h;
            let lp = batch_gradient(&a, &xs, &d, &batch).unwrap().0;
            a.decoder.params_mut()[k] -= 2.0 * h;
            let lm = batch_gradient(&a, &xs, &d, &batch).unwrap().0;
            let fd = (lp - lm) / (2.0 * h);
            assert!(
                (fd - gd[k]).abs() < 1e-6 * (1.0 + fd.abs()),
                "dec {k}: {fd} vs {}",
                gd[k]
            );
        }
    }

    #[test]
    fn reconstruction_only_decreases() {
        let x = circle(50, 0.1, 2);
        let d = potential_distances(&diffusion_operator(&x, 5, 4).unwrap()).unwrap();
        let cfg = GagaConfig {
            lambda_geo: 0.0,
            epochs: 10,
            hidden: vec![16],
            ..Default::default()
        };
        let ae = train_gaga(&x, &d, &cfg).unwrap();
        for w in ae.loss_history.windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn circle_latents_track_potential_distances() {
        let x = circle(100, 0.05, 3);
        let d = potential_distances(&diffusion_operator(&x, 5, 8).unwrap()).unwrap();
        let cfg = GagaConfig {
            hidden: vec![32, 32],
            epochs: 600,
            seed: 7,
            ..Default::default()
        };
        let ae = train_gaga(&x, &d, &cfg).unwrap();
        assert!(ae.loss_history.last().unwrap() <= &ae.loss_history[0]);
        let z = encode(&ae, &x).unwrap();
        let mut lat = Vec::new();
        for i in 0..100 {
            for j in i + 1..100 {
                lat.push(dist(z.row(i), z.row(j)));
            }
        }
        let r = pearson(&lat, &d.upper_triangle());
        assert!(r >= 0.9, "pearson {r}");
        let back = decode(&ae, &z).unwrap();
        let mut diff = back.clone();
        diff.data_mut()
            .iter_mut()
            .zip(x.data())
            .for_each(|(a, b)| *a -= b);
        let rel = diff.frobenius_norm() / x.frobenius_norm();
        assert!(rel < 0.15, "relative reconstruction error {rel}");
    }

    #[test]
    fn encode_is_deterministic_and_checks_shapes() {
        let x = circle(10, 0.0, 4);
        let mut x2 = x.clone();
        x2.row_mut(1).copy_from_slice(&x.row(0).to_vec());
        let d = potential_distances(&diffusion_operator(&x2, 2, 2).unwrap()).unwrap();
        let ae = train_gaga(
            &x2,
            &d,
            &GagaConfig {
                epochs: 5,
                ..Default::default()
            },
        )
        .unwrap();
        let z1 = encode(&ae, &x2).unwrap();
        let z2 = encode(&ae, &x2).unwrap();
        assert_eq!(z1, z2);
        assert_eq!(z1.row(0), z1.row(1));
        assert_eq!(decode(&ae, &z1).unwrap().shape(), (10, 2));
        assert!(encode(&ae, &Matrix::zeros(3, 5)).is_err());
        assert!(decode(&ae, &Matrix::zeros(3, 5)).is_err());
    }
}
