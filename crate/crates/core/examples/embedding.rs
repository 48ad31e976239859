//! Geometry-preserving latent embedding of a branching point cloud lifted
//! into 30 noisy dimensions.

use cellflow::geometry::{fit_embedding, EmbeddingConfig, GagaConfig};
use cellflow::numerics::pearson;
use cellflow::synthdata::{toy_sets, ToyKind};
use cellflow::{Matrix, RngState};
use rand_distr::{Distribution, Normal};

fn main() -> cellflow::Result<()> {
    let root = RngState::new(5);
    let ds = toy_sets(ToyKind::Branching, 60, 5, root.derive(1))?;
    let (n, dim) = (ds.n_cells(), 30);

    // Random linear lift plus a little noise, shifted positive for log1p.
    let mut s = root.derive(2).stream();
    let lift = Matrix::from_vec(
        2,
        dim,
        (0..2 * dim)
            .map(|_| Normal::new(0.0, 1.0).unwrap().sample(&mut s))
            .collect(),
    )?;
    let mut x = ds.expression.matmul(&lift)?;
    let noise = Normal::new(0.0, 0.05).unwrap();
    x.data_mut()
        .iter_mut()
        .for_each(|v| *v += noise.sample(&mut s) + 20.0);

    let cfg = EmbeddingConfig {
        log1p: false,
        pca_dim: 10,
        autoencoder: GagaConfig {
            epochs: 400,
            hidden: vec![32, 32],
            ..GagaConfig::default()
        },
        ..EmbeddingConfig::default()
    };
    let e = fit_embedding(&x, &cfg)?;

    let mut latent_d = Vec::new();
    let target = e.target.upper_triangle();
    for i in 0..n {
        for j in i + 1..n {
            latent_d.push(cellflow::numerics::dist(e.latent.row(i), e.latent.row(j)));
        }
    }
    println!("cells = {n}, latent dim = {}", e.latent.cols());
    println!(
        "pearson(latent distance, potential distance) = {:.4}",
        pearson(&latent_d, &target)
    );
    Ok(())
}
