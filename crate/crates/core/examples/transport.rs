//! Exact, entropic and unbalanced transport between two small point clouds.

use cellflow::transport::{emd, sinkhorn, sinkhorn_unbalanced, w2_loss, DiscreteMeasure};
use cellflow::{Matrix, RngState};
use rand_distr::{Distribution, StandardNormal};

fn cloud(n: usize, shift: f64, rng: RngState) -> Matrix {
    let mut s = rng.stream();
    let data = (0..n * 2)
        .map(|i| { let v: f64 = StandardNormal.sample(&mut s); v } + if i % 2 == 0 { shift } else { 0.0 })
        .collect();
    Matrix::from_vec(n, 2, data).unwrap()
}

fn main() -> cellflow::Result<()> {
    let root = RngState::new(1);
    let mu = DiscreteMeasure::uniform(cloud(40, 0.0, root.derive(1)));
    let nu = DiscreteMeasure::uniform(cloud(30, 3.0, root.derive(2)));

    let exact = emd(&mu, &nu, 2)?;
    println!("W2^2 (exact)     = {:.6}", exact.cost);

    for rel in [1e-1, 1e-2, 1e-3] {
        let eps = rel * exact.cost;
        let p = sinkhorn(&mu, &nu, eps, 10_000, 1e-9)?;
        println!(
            "sinkhorn eps={eps:<10.4e} cost = {:.6}  converged = {}",
            p.cost, p.converged
        );
    }

    // Halve the target mass: the relaxed solver transports less than one unit.
    let half = DiscreteMeasure::new(
        nu.support.clone(),
        nu.weights.iter().map(|w| w * 0.5).collect(),
    )?;
    let u = sinkhorn_unbalanced(&mu, &half, 0.5, 1.0, 1.0, 5000, 1e-9)?;
    println!("unbalanced transported mass = {:.4}", u.total_mass());

    let loss = w2_loss(&mu, &nu)?;
    println!(
        "w2_loss = {:.6}, |grad| = {:.4}",
        loss.cost,
        loss.grad_points.frobenius_norm()
    );
    Ok(())
}
