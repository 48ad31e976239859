use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dynamics::DynamicsConfig;
use crate::error::{Error, Result};
use crate::geometry::GagaConfig;
use crate::spatial::SpatialConfig;
use crate::synthdata::{GrnSpec, LineageOptions, SShapeOptions, ToyKind};
use crate::training::TrainConfig;

/// Everything a pipeline run needs. Every section except `seed` may be
/// omitted and falls back to its defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub spatial: SpatialSection,
    #[serde(default)]
    pub dynamics: DynamicsConfig,
    /// Training settings; `seed` and `dynamics` come from the top level.
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Toy,
    Trifurcation,
    SShape,
    Grn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TechnicalNoiseConfig {
    pub library_range: [f64; 2],
    pub dropout: f64,
    pub poisson: bool,
}

impl Default for TechnicalNoiseConfig {
    fn default() -> Self {
        TechnicalNoiseConfig {
            library_range: [0.5, 2.0],
            dropout: 0.1,
            poisson: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub toy: ToyKind,
    /// Cells in the first snapshot of a toy set.
    pub toy_cells: usize,
    pub timepoints: usize,
    /// Sampling for the `trifurcation` and `grn` sources.
    pub lineage: LineageOptions,
    /// Network for the `grn` source.
    pub grn: Option<GrnSpec>,
    pub s_shape: SShapeOptions,
    pub technical_noise: Option<TechnicalNoiseConfig>,
    /// Existing expression / label files used instead of the simulated ones.
    pub expression: Option<PathBuf>,
    pub labels: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Toy,
            toy: ToyKind::Arc,
            toy_cells: 100,
            timepoints: 4,
            lineage: LineageOptions::default(),
            grn: None,
            s_shape: SShapeOptions::default(),
            technical_noise: None,
            expression: None,
            labels: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedMethod {
    /// PCA, potential distances and the geometry-aware autoencoder.
    Gaga,
    /// Use the expression columns as the latent space.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub method: EmbedMethod,
    pub log1p: bool,
    pub pca_dim: usize,
    pub knn: usize,
    pub diffusion_t: usize,
    /// Autoencoder settings; its seed comes from the top level.
    pub autoencoder: GagaConfig,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            method: EmbedMethod::Gaga,
            log1p: true,
            pca_dim: 50,
            knn: 5,
            diffusion_t: 8,
            autoencoder: GagaConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpatialSection {
    pub graph: SpatialConfig,
    /// CSV with columns `x,y,cell_type`; defaults to `spatial.csv` in the output directory.
    pub locations: Option<PathBuf>,
    /// `(ligand, receptor)` expression column pairs.
    pub lr_pairs: Vec<(usize, usize)>,
    /// Spatial block scale in the joint embedding.
    pub joint_scale: f64,
    /// Train on the joint gene / spatial embedding instead of the gene latent.
    pub use_joint: bool,
}

impl Default for SpatialSection {
    fn default() -> Self {
        SpatialSection {
            graph: SpatialConfig::default(),
            locations: None,
            lr_pairs: Vec::new(),
            joint_scale: 0.5,
            use_joint: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Branch count for endpoint clustering.
    pub branches: usize,
    /// Snapshot the inferred trajectories start from.
    pub start_timepoint: usize,
    /// Also run the leave-one-out protocol (retrains once per interior snapshot).
    pub loo: bool,
    /// Label recorded with the metrics for the space they were computed in.
    pub space: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            branches: 1,
            start_timepoint: 0,
            loo: false,
            space: "latent".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    pub plot_width: u32,
    pub plot_height: u32,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: None,
            plot_width: 640,
            plot_height: 480,
        }
    }
}

impl PipelineConfig {
    /// Parses a config document, applying a seed override first.
    pub fn from_json(text: &str, seed_override: Option<u64>) -> Result<PipelineConfig> {
        let mut v: Value = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?;
        let obj = v
            .as_object_mut()
            .ok_or_else(|| Error::Config("config must be a JSON object".into()))?;
        if let Some(s) = seed_override {
            obj.insert("seed".into(), Value::from(s));
        }
        for (section, key) in [
            ("training", "seed"),
            ("training", "dynamics"),
            ("geometry.autoencoder", "seed"),
        ] {
            let mut cur = Some(&*obj);
            for part in section.split('.') {
                cur = cur.and_then(|o| o.get(part)).and_then(Value::as_object);
            }
            if cur.is_some_and(|o| o.contains_key(key)) {
                return Err(Error::Config(format!(
                    "{section}.{key} is set from the top level, remove it"
                )));
            }
        }
        let mut cfg: PipelineConfig =
            serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))?;
        cfg.sync();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingInput(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        PipelineConfig::from_json(&text, seed_override)
    }

    /// Pushes the top-level seed and dynamics into the nested sections.
    fn sync(&mut self) {
        self.training.seed = self.seed;
        self.training.dynamics = self.dynamics.clone();
        self.geometry.autoencoder.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.training.validate()?;
        if self.data.timepoints < 2 {
            return Err(Error::Config("data.timepoints must be at least 2".into()));
        }
        if self.data.source == DataSource::Grn && self.data.grn.is_none() {
            return Err(Error::Config("data.source = grn needs data.grn".into()));
        }
        if let Some(g) = &self.data.grn {
            g.validate()?;
        }
        if self.geometry.knn == 0 || self.geometry.diffusion_t == 0 || self.geometry.pca_dim == 0 {
            return Err(Error::Config(
                "geometry.knn, diffusion_t and pca_dim must be positive".into(),
            ));
        }
        if self.eval.branches == 0 {
            return Err(Error::Config("eval.branches must be positive".into()));
        }
        if !(self.spatial.joint_scale >= 0.0) {
            return Err(Error::Config(
                "spatial.joint_scale must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// Resolved config as pretty JSON, the provenance echo written with outputs.
    pub fn echo(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        // Nested copies of the top-level values are implementation detail.
        if let Some(t) = v.get_mut("training").and_then(Value::as_object_mut) {
            t.remove("seed");
            t.remove("dynamics");
        }
        if let Some(a) = v
            .pointer_mut("/geometry/autoencoder")
            .and_then(Value::as_object_mut)
        {
            a.remove("seed");
        }
        Ok(serde_json::to_string_pretty(&v)? + "\n")
    }
}
