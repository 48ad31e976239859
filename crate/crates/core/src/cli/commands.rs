use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{DataSource, EmbedMethod, PipelineConfig};
use super::io::{
    read_checkpoint, read_labels, read_matrix, read_trajectories, write_checkpoint, write_csv,
    write_labels, write_matrix, write_text, write_trajectories, LabelRow, TrajectoryRecord,
};
use super::plot::{loss_svg, scatter_svg};
use crate::dynamics::{eval_growth, DynamicsModel};
use crate::error::{Error, Result};
use crate::eval::{
    branch_means, branch_means_from_paths, distribution_metrics, leave_one_out, predict_forward,
    trajectory_error,
};
use crate::geometry::{fit_embedding, EmbeddingConfig, EmbeddingModel};
use crate::numerics::{Matrix, RngState};
use crate::spatial::{assemble_spatial_features, joint_embed, SpatialDataset};
use crate::synthdata::{
    s_shape, simulate_lineages, technical_noise, toy_sets, GrnSpec, SyntheticDataset,
};
use crate::training::{simulate, train, TrainMode};

/// File names inside the output directory.
pub struct Layout {
    pub dir: PathBuf,
}

impl Layout {
    pub fn new(dir: impl Into<PathBuf>) -> Layout {
        Layout { dir: dir.into() }
    }

    fn file(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn expression(&self) -> PathBuf {
        self.file("expression.csv")
    }
    pub fn labels(&self) -> PathBuf {
        self.file("labels.csv")
    }
    pub fn manifest(&self) -> PathBuf {
        self.file("manifest.json")
    }
    pub fn latent(&self) -> PathBuf {
        self.file("latent.csv")
    }
    pub fn autoencoder(&self) -> PathBuf {
        self.file("autoencoder.json")
    }
    pub fn spatial(&self) -> PathBuf {
        self.file("spatial.csv")
    }
    pub fn spatial_features(&self) -> PathBuf {
        self.file("spatial_features.csv")
    }
    pub fn joint_latent(&self) -> PathBuf {
        self.file("joint_latent.csv")
    }
    pub fn model(&self) -> PathBuf {
        self.file("model.json")
    }
    pub fn loss_history(&self) -> PathBuf {
        self.file("loss_history.csv")
    }
    pub fn trajectories(&self) -> PathBuf {
        self.file("trajectories.jsonl")
    }
    pub fn metrics(&self) -> PathBuf {
        self.file("metrics.csv")
    }
    pub fn plot(&self) -> PathBuf {
        self.file("plot.svg")
    }
    pub fn loss_plot(&self) -> PathBuf {
        self.file("loss.svg")
    }
    pub fn echo(&self, stage: &str) -> PathBuf {
        self.file(&format!("config.{stage}.json"))
    }
}

fn start(cfg: &PipelineConfig, out: &Layout, stage: &str) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(&out.dir)?;
    Ok(vec![write_text(&out.echo(stage), &cfg.echo()?)?])
}

/// Simulates the configured dataset: expression, labels and a manifest.
pub fn cmd_simulate(cfg: &PipelineConfig, out: &Layout) -> Result<Vec<PathBuf>> {
    let mut written = start(cfg, out, "simulate")?;
    let root = RngState::new(cfg.seed);
    let d = &cfg.data;
    let (mut ds, network): (SyntheticDataset, Option<GrnSpec>) = match d.source {
        DataSource::Toy => (
            toy_sets(d.toy, d.toy_cells, d.timepoints, root.derive(1))?,
            None,
        ),
        DataSource::Trifurcation => {
            let spec = GrnSpec::trifurcation();
            (
                simulate_lineages(&spec, &d.lineage, root.derive(1))?,
                Some(spec),
            )
        }
        DataSource::Grn => {
            let spec = d
                .grn
                .clone()
                .ok_or_else(|| Error::Config("data.grn is required".into()))?;
            (
                simulate_lineages(&spec, &d.lineage, root.derive(1))?,
                Some(spec),
            )
        }
        DataSource::SShape => (
            s_shape(&d.s_shape, root.derive(1))?,
            Some(GrnSpec::s_shape()),
        ),
    };
    if let Some(tn) = &d.technical_noise {
        ds.expression = technical_noise(
            &ds.expression,
            (tn.library_range[0], tn.library_range[1]),
            tn.dropout,
            tn.poisson,
            root.derive(2),
        )?;
    }
    let prefix = if d.source == DataSource::Toy {
        "x"
    } else {
        "g"
    };
    write_matrix(&out.expression(), &ds.expression, prefix)?;
    written.push(out.expression());
    let rows: Vec<LabelRow> = (0..ds.n_cells())
        .map(|i| LabelRow {
            cell_id: i,
            timepoint: ds.timepoints[i],
            branch: ds.branches[i],
            time: ds.times[i],
            growth: ds.growth_truth.as_ref().map(|g| g[i]),
        })
        .collect();
    write_labels(&out.labels(), &rows)?;
    written.push(out.labels());
    let sizes: Vec<usize> = ds.snapshot_indices().iter().map(Vec::len).collect();
    let manifest = json!({
        "source": d.source,
        "seed": cfg.seed,
        "n_cells": ds.n_cells(),
        "n_features": ds.expression.cols(),
        "n_timepoints": ds.n_timepoints,
        "snapshot_sizes": sizes,
        "toy": if d.source == DataSource::Toy { Some(d.toy) } else { None },
        "network": network,
    });
    written.push(write_text(
        &out.manifest(),
        &(serde_json::to_string_pretty(&manifest)? + "\n"),
    )?);
    Ok(written)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
enum EmbeddingCheckpoint {
    Gaga { model: Box<EmbeddingModel> },
    Identity,
}

fn input_or(path: &Option<PathBuf>, default: PathBuf) -> PathBuf {
    path.clone().unwrap_or(default)
}

/// Embeds expression into the latent space and saves the fitted embedding.
pub fn cmd_embed(cfg: &PipelineConfig, out: &Layout) -> Result<Vec<PathBuf>> {
    let mut written = start(cfg, out, "embed")?;
    let (_, x) = read_matrix(&input_or(&cfg.data.expression, out.expression()))?;
    let g = &cfg.geometry;
    let (latent, ckpt) = match g.method {
        EmbedMethod::Identity => (x, EmbeddingCheckpoint::Identity),
        EmbedMethod::Gaga => {
            let ec = EmbeddingConfig {
                log1p: g.log1p,
                pca_dim: g.pca_dim,
                knn: g.knn,
                diffusion_t: g.diffusion_t,
                autoencoder: g.autoencoder.clone(),
            };
            let e = fit_embedding(&x, &ec)?;
            (
                e.latent,
                EmbeddingCheckpoint::Gaga {
                    model: Box::new(e.model),
                },
            )
        }
    };
    write_matrix(&out.latent(), &latent, "z")?;
    written.push(out.latent());
    write_checkpoint(&out.autoencoder(), "autoencoder", &ckpt)?;
    written.push(out.autoencoder());
    Ok(written)
}

/// Spatial neighbourhood features, plus the joint embedding when a latent exists.
pub fn cmd_features(cfg: &PipelineConfig, out: &Layout) -> Result<Vec<PathBuf>> {
    let mut written = start(cfg, out, "features")?;
    let (_, expression) = read_matrix(&input_or(&cfg.data.expression, out.expression()))?;
    let loc_path = input_or(&cfg.spatial.locations, out.spatial());
    let (header, loc) = read_matrix(&loc_path)?;
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Malformed {
                path: loc_path.clone(),
                msg: format!("missing column {name:?}"),
            })
    };
    let (cx, cy, ct) = (col("x")?, col("y")?, col("cell_type")?);
    let mut locations = Matrix::zeros(loc.rows(), 2);
    let mut cell_types = Vec::with_capacity(loc.rows());
    for i in 0..loc.rows() {
        locations[(i, 0)] = loc[(i, cx)];
        locations[(i, 1)] = loc[(i, cy)];
        let t = loc[(i, ct)];
        if !(t >= 0.0 && t.fract() == 0.0) {
            return Err(Error::Malformed {
                path: loc_path.clone(),
                msg: format!("row {}: cell_type {t} is not a nonnegative integer", i + 1),
            });
        }
        cell_types.push(t as usize);
    }
    let ds = SpatialDataset {
        expression,
        locations,
        cell_types,
        lr_pairs: cfg.spatial.lr_pairs.clone(),
    };
    let f = assemble_spatial_features(&ds, &cfg.spatial.graph)?;
    write_matrix(&out.spatial_features(), &f.s, "s")?;
    written.push(out.spatial_features());
    if out.latent().exists() {
        let (_, z) = read_matrix(&out.latent())?;
        let j = joint_embed(&z, &f.s, cfg.spatial.joint_scale)?;
        write_matrix(&out.joint_latent(), &j, "j")?;
        written.push(out.joint_latent());
    }
    Ok(written)
}

/// Latent snapshots grouped by timepoint, with the row ids of each.
struct Snapshots {
    z: Vec<Matrix>,
    ids: Vec<Vec<usize>>,
}

fn load_snapshots(
    cfg: &PipelineConfig,
    out: &Layout,
) -> Result<(Matrix, Vec<LabelRow>, Snapshots)> {
    let latent_path = if cfg.spatial.use_joint {
        out.joint_latent()
    } else {
        out.latent()
    };
    let (_, z) = read_matrix(&latent_path)?;
    let labels = read_labels(&input_or(&cfg.data.labels, out.labels()))?;
    if labels.len() != z.rows() {
        return Err(Error::dim(format!(
            "{} latent rows but {} labels",
            z.rows(),
            labels.len()
        )));
    }
    let tn = labels
        .iter()
        .map(|l| l.timepoint)
        .max()
        .map_or(0, |m| m + 1);
    let mut ids = vec![Vec::new(); tn];
    for (i, l) in labels.iter().enumerate() {
        ids[l.timepoint].push(i);
    }
    if let Some(t) = ids.iter().position(Vec::is_empty) {
        return Err(Error::arg(format!("timepoint {t} has no cells")));
    }
    let snaps = ids.iter().map(|idx| z.select_rows(idx)).collect();
    Ok((z, labels, Snapshots { z: snaps, ids }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub mode: TrainMode,
    pub growth_enabled: bool,
    pub steps_per_unit: usize,
    pub n_timepoints: usize,
    pub h_margin: f64,
    pub latent_dim: usize,
    pub model: DynamicsModel,
}

/// Trains the dynamics model on the latent snapshots.
pub fn cmd_train(cfg: &PipelineConfig, out: &Layout) -> Result<Vec<PathBuf>> {
    let mut written = start(cfg, out, "train")?;
    let (z, _, snaps) = load_snapshots(cfg, out)?;
    let res = train(&snaps.z, &cfg.training)?;
    let ckpt = ModelCheckpoint {
        mode: cfg.training.mode,
        growth_enabled: cfg.training.growth_enabled,
        steps_per_unit: cfg.training.steps_per_unit,
        n_timepoints: snaps.z.len(),
        h_margin: res.h_margin,
        latent_dim: z.cols(),
        model: res.model,
    };
    write_checkpoint(&out.model(), "dynamics", &ckpt)?;
    written.push(out.model());
    let header: Vec<String> = ["iteration", "total", "marginal", "energy", "density"]
        .map(String::from)
        .to_vec();
    write_csv(
        &out.loss_history(),
        &header,
        res.history.iter().enumerate().map(|(i, r)| {
            vec![
                i.to_string(),
                r.total.to_string(),
                r.marginal.to_string(),
                r.energy.to_string(),
                r.density.to_string(),
            ]
        }),
    )?;
    written.push(out.loss_history());
    Ok(written)
}

fn load_model(out: &Layout, latent_dim: usize) -> Result<ModelCheckpoint> {
    let ckpt: ModelCheckpoint = read_checkpoint(&out.model(), "dynamics")?;
    if ckpt.latent_dim != latent_dim {
        return Err(Error::dim(format!(
            "model trained on {}-dimensional latents, input has {latent_dim}",
            ckpt.latent_dim
        )));
    }
    Ok(ckpt)
}

/// Rolls the observed cells of the start snapshot forward to the last one.
pub fn cmd_infer(cfg: &PipelineConfig, out: &Layout) -> Result<Vec<PathBuf>> {
    let mut written = start(cfg, out, "infer")?;
    let (z, _, snaps) = load_snapshots(cfg, out)?;
    let ckpt = load_model(out, z.cols())?;
    let tn = snaps.z.len();
    let s0 = cfg.eval.start_timepoint;
    if s0 + 1 >= tn {
        return Err(Error::Config(format!(
            "eval.start_timepoint {s0} leaves nothing to infer with {tn} snapshots"
        )));
    }
    let units = tn - 1 - s0;
    let spu = ckpt.steps_per_unit;
    let batch = simulate(
        &ckpt.model,
        &snaps.z[s0],
        s0 as f64,
        units,
        spu,
        ckpt.growth_enabled,
        RngState::new(cfg.seed).derive(5),
    )?;
    let branches = if cfg.eval.branches <= batch.n_cells() {
        Some(branch_means(&batch, cfg.eval.branches, cfg.seed)?.assignment)
    } else {
        None
    };
    let mut recs = Vec::with_capacity(batch.n_cells());
    for (c, path) in batch.paths.iter().enumerate() {
        // Growth is applied at the start of every unit interval.
        let mut mass = vec![1.0; path.rows()];
        if ckpt.growth_enabled {
            let mut m = 1.0;
            for u in 0..units {
                m *= eval_growth(&ckpt.model, path.row(u * spu), (s0 + u) as f64)?;
                for v in mass.iter_mut().take((u + 1) * spu + 1).skip(u * spu + 1) {
                    *v = m;
                }
            }
        }
        recs.push(TrajectoryRecord {
            cell_id: snaps.ids[s0][c],
            branch: branches.as_ref().map(|b| b[c]),
            times: batch.times.clone(),
            path: path.row_iter().map(<[f64]>::to_vec).collect(),
            mass,
        });
    }
    write_trajectories(&out.trajectories(), &recs)?;
    written.push(out.trajectories());
    Ok(written)
}

/// Metrics table: one-step predictions against each later snapshot, the
/// identity baseline, trajectory error, and optionally leave-one-out.
pub fn cmd_evaluate(cfg: &PipelineConfig, out: &Layout) -> Result<Vec<PathBuf>> {
    let mut written = start(cfg, out, "evaluate")?;
    let (z, _, snaps) = load_snapshots(cfg, out)?;
    let ckpt = load_model(out, z.cols())?;
    let seed = cfg.seed;
    let mut rows: Vec<[String; 5]> = Vec::new();
    let space = cfg.eval.space.clone();
    let mut push = |t: String, metric: String, value: f64| {
        rows.push([t, metric, value.to_string(), seed.to_string(), space.clone()])
    };
    for t in 1..snaps.z.len() {
        let pred = predict_forward(
            &ckpt.model,
            &snaps.z[t - 1],
            (t - 1) as f64,
            t as f64,
            ckpt.steps_per_unit,
            seed,
        )?;
        for r in distribution_metrics(&pred, &snaps.z[t], t, seed)? {
            push(t.to_string(), r.metric, r.value);
        }
        for r in distribution_metrics(&snaps.z[t - 1], &snaps.z[t], t, seed)? {
            push(t.to_string(), format!("identity_{}", r.metric), r.value);
        }
    }
    let trajs = match read_trajectories(&out.trajectories()) {
        Ok(t) => t,
        Err(Error::MissingInput(_)) => Vec::new(),
        Err(e) => return Err(e),
    };
    if !trajs.is_empty() {
        let paths = trajs
            .iter()
            .map(|r| Matrix::from_rows(&r.path))
            .collect::<Result<Vec<_>>>()?;
        let k = cfg.eval.branches.min(paths.len());
        let summary = branch_means_from_paths(&paths, k, seed)?;
        let (mean, std) = trajectory_error(&z, &summary)?;
        push("all".into(), "trajectory_error_mean".into(), mean);
        push("all".into(), "trajectory_error_std".into(), std);
    }
    if cfg.eval.loo {
        for r in leave_one_out(&snaps.z, &cfg.training)? {
            push(r.t.to_string(), format!("loo_{}", r.metric), r.value);
        }
    }
    let header: Vec<String> = ["t", "metric", "value", "seed", "space"].map(String::from).to_vec();
    write_csv(
        &out.metrics(),
        &header,
        rows.into_iter().map(|r| r.to_vec()),
    )?;
    written.push(out.metrics());
    Ok(written)
}

/// Scatter of the latent space with trajectory overlays, and the loss curve
/// when a loss history exists.
pub fn cmd_plot(cfg: &PipelineConfig, out: &Layout) -> Result<Vec<PathBuf>> {
    let mut written = start(cfg, out, "plot")?;
    let (_, z) = read_matrix(&out.latent())?;
    let labels = match read_labels(&input_or(&cfg.data.labels, out.labels())) {
        Ok(l) => l,
        Err(Error::MissingInput(_)) => Vec::new(),
        Err(e) => return Err(e),
    };
    let tps: Vec<usize> = labels.iter().map(|l| l.timepoint).collect();
    let trajs = match read_trajectories(&out.trajectories()) {
        Ok(t) => t,
        Err(Error::MissingInput(_)) => Vec::new(),
        Err(e) => return Err(e),
    };
    let paths: Vec<Vec<Vec<f64>>> = trajs.into_iter().map(|r| r.path).collect();
    let (w, h) = (cfg.output.plot_width, cfg.output.plot_height);
    written.push(write_text(
        &out.plot(),
        &scatter_svg(&z, &tps, &paths, w, h),
    )?);
    if out.loss_history().exists() {
        let (_, hist) = read_matrix(&out.loss_history())?;
        let total = if hist.cols() > 1 {
            hist.column(1)
        } else {
            Vec::new()
        };
        written.push(write_text(&out.loss_plot(), &loss_svg(&total, w, h))?);
    }
    Ok(written)
}

/// Output directory: `--out`, else `output.dir`.
pub fn resolve_out(cli_out: Option<&Path>, cfg: &PipelineConfig) -> Result<Layout> {
    cli_out
        .map(Path::to_path_buf)
        .or_else(|| cfg.output.dir.clone())
        .map(Layout::new)
        .ok_or_else(|| Error::Config("no output directory: pass --out or set output.dir".into()))
}
