//! Neighbourhood features for cells scattered on a plane, and their joint
//! embedding with an expression latent.

use cellflow::spatial::{
    assemble_spatial_features, build_cell_graph, joint_embed, SpatialConfig, SpatialDataset,
};
use cellflow::{Matrix, RngState};
use rand::Rng;

fn main() -> cellflow::Result<()> {
    let (n, genes) = (120, 8);
    let mut s = RngState::new(11).stream();
    let locations = Matrix::from_vec(
        n,
        2,
        (0..2 * n).map(|_| s.random_range(0.0..10.0)).collect(),
    )?;
    // Cell type follows the x coordinate; expression follows the type.
    let cell_types: Vec<usize> = (0..n).map(|i| (locations[(i, 0)] / 3.4) as usize).collect();
    let expression = Matrix::from_vec(
        n,
        genes,
        (0..n * genes)
            .map(|k| (cell_types[k / genes] * (k % genes)) as f64 * 0.3 + s.random_range(0.0..0.5))
            .collect(),
    )?;
    let ds = SpatialDataset {
        expression,
        locations,
        cell_types,
        lr_pairs: vec![(0, 1), (2, 3)],
    };

    let graph = build_cell_graph(&ds.locations, 5, None, 2)?;
    let sizes: Vec<usize> = graph.neighborhoods.iter().map(Vec::len).collect();
    println!(
        "mean 2-hop neighbourhood size = {:.1}",
        sizes.iter().sum::<usize>() as f64 / n as f64
    );

    let f = assemble_spatial_features(
        &ds,
        &SpatialConfig {
            hops: 2,
            output_dim: 4,
            ..SpatialConfig::default()
        },
    )?;
    for (name, span) in &f.block_spans {
        println!("block {name:<14} columns {span:?}");
    }
    let gene_latent = ds.expression.select_rows(&(0..n).collect::<Vec<_>>());
    let joint = joint_embed(&gene_latent, &f.s, 0.5)?;
    println!("joint embedding: {} x {}", joint.rows(), joint.cols());
    Ok(())
}
