//! The full command pipeline, driven from code, writing into a temporary
//! directory.

use cellflow::cli::{
    cmd_embed, cmd_evaluate, cmd_infer, cmd_plot, cmd_simulate, cmd_train, Layout, PipelineConfig,
};

const CONFIG: &str = r#"{
  "seed": 7,
  "data": { "source": "toy", "toy": "arc", "toy_cells": 80, "timepoints": 4 },
  "geometry": { "method": "identity" },
  "dynamics": { "hidden": [32, 32] },
  "training": { "iterations": 200, "lr": 0.005, "batch_size": 64 },
  "eval": { "branches": 1 }
}"#;

fn main() -> cellflow::Result<()> {
    let cfg = PipelineConfig::from_json(CONFIG, None)?;
    let dir = tempfile::tempdir()?;
    let out = Layout::new(dir.path());
    for stage in [
        cmd_simulate,
        cmd_embed,
        cmd_train,
        cmd_infer,
        cmd_evaluate,
        cmd_plot,
    ] {
        for f in stage(&cfg, &out)? {
            println!("wrote {}", f.file_name().unwrap().to_string_lossy());
        }
    }
    print!("{}", std::fs::read_to_string(out.metrics())?);
    Ok(())
}
