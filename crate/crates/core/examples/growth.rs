//! Growth rates from unbalanced transport on populations where one branch
//! expands or shrinks, compared with the simulated ground truth.

use cellflow::numerics::pearson;
use cellflow::synthdata::{toy_sets, ToyKind};
use cellflow::training::{growth_targets, UotParams};
use cellflow::RngState;

fn main() -> cellflow::Result<()> {
    for kind in [ToyKind::Growing, ToyKind::Dying] {
        let ds = toy_sets(kind, 200, 4, RngState::new(8))?;
        let z = ds.snapshots();
        let truth = ds
            .growth_truth
            .clone()
            .expect("toy sets carry growth truth");
        let targets = growth_targets(&z, &UotParams::default())?;
        for (t, idx) in ds.snapshot_indices().iter().enumerate().take(z.len() - 1) {
            let g: Vec<f64> = idx.iter().map(|&i| truth[i]).collect();
            let r = pearson(&targets.targets[t], &g);
            println!(
                "{kind:?} snapshot {t}: {} cells, pearson(uot target, truth) = {r:.3}",
                idx.len()
            );
        }
    }
    Ok(())
}
