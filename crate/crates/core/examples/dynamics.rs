//! ODE and SDE rollouts of a freshly initialised dynamics model, and exact
//! gradients of an endpoint loss through the solver.

use cellflow::dynamics::{
    backprop_integrate, integrate, DynamicsConfig, DynamicsModel, PathUpstream, Scheme, SolverMode,
};
use cellflow::{Matrix, RngState};

fn main() -> cellflow::Result<()> {
    let z0 = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, -0.5], vec![-0.5, 1.0]])?;
    for (mode, scheme) in [
        (SolverMode::Ode, Scheme::Euler),
        (SolverMode::Ode, Scheme::Rk4),
        (SolverMode::Sde, Scheme::Euler),
    ] {
        let cfg = DynamicsConfig {
            mode,
            scheme,
            hidden: vec![16, 16],
            ..DynamicsConfig::default()
        };
        let m = DynamicsModel::new(2, &cfg, RngState::new(3))?;
        let batch = integrate(&m, &z0, 0.0, 1.0, 20, RngState::new(4))?;
        let end = batch.endpoints();

        // Loss = 0.5 |z_T|^2, so the upstream gradient is z_T itself.
        let grads = backprop_integrate(&m, &batch, &PathUpstream::endpoint(&batch, &end)?)?;
        let gnorm = grads.drift.iter().map(|g| g * g).sum::<f64>().sqrt();
        println!(
            "{mode:?}/{scheme:?}: first endpoint = {:?}, |dL/d drift| = {gnorm:.4e}",
            end.row(0)
        );
    }
    Ok(())
}
