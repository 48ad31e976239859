//! Distribution metrics, branch summaries and trajectory error for a model
//! trained on the branching toy.

use cellflow::eval::{branch_means, distribution_metrics, trajectory_error};
use cellflow::synthdata::{toy_sets, ToyKind};
use cellflow::training::{simulate, train, TrainConfig};
use cellflow::RngState;

fn main() -> cellflow::Result<()> {
    let ds = toy_sets(ToyKind::Branching, 80, 4, RngState::new(4))?;
    let z = ds.snapshots();
    let cfg = TrainConfig {
        iterations: 200,
        lr: 5e-3,
        batch_size: 64,
        seed: 4,
        ..TrainConfig::default()
    };
    let out = train(&z, &cfg)?;

    let batch = simulate(
        &out.model,
        &z[0],
        0.0,
        z.len() - 1,
        cfg.steps_per_unit,
        false,
        RngState::new(9),
    )?;
    let summary = branch_means(&batch, 2, 0)?;
    println!("branch shares = {:?}", summary.shares());
    let (mean, std) = trajectory_error(&ds.expression, &summary)?;
    println!("trajectory error = {mean:.4} +/- {std:.4}");

    let last = z.len() - 1;
    for r in distribution_metrics(&batch.endpoints(), &z[last], last, 0)? {
        println!("model    t={} {:<6} {:.4}", r.t, r.metric, r.value);
    }
    for r in distribution_metrics(&z[last - 1], &z[last], last, 0)? {
        println!("identity t={} {:<6} {:.4}", r.t, r.metric, r.value);
    }
    Ok(())
}
