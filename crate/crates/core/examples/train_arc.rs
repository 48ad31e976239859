//! Trains drift dynamics on four snapshots of a half-circle and reports how
//! far the predicted marginals are from the data.

use cellflow::eval::{predict_forward, w1, W1_CAP};
use cellflow::synthdata::{toy_sets, ToyKind};
use cellflow::training::{train, TrainConfig};
use cellflow::RngState;

fn main() -> cellflow::Result<()> {
    let ds = toy_sets(ToyKind::Arc, 100, 4, RngState::new(2))?;
    let z = ds.snapshots();
    let cfg = TrainConfig {
        iterations: 300,
        lr: 5e-3,
        batch_size: 64,
        seed: 2,
        ..TrainConfig::default()
    };
    let out = train(&z, &cfg)?;
    let h = out.loss_history();
    println!("loss: first = {:.4}, last = {:.4}", h[0], h[h.len() - 1]);
    for t in 1..z.len() {
        let pred = predict_forward(
            &out.model,
            &z[t - 1],
            (t - 1) as f64,
            t as f64,
            cfg.steps_per_unit,
            0,
        )?;
        println!(
            "t={t}: W1(pred, data) = {:.4}   W1(previous, data) = {:.4}",
            w1(&pred, &z[t], W1_CAP, 0)?,
            w1(&z[t - 1], &z[t], W1_CAP, 0)?
        );
    }
    Ok(())
}
