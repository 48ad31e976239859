use serde::{Deserialize, Serialize};

use super::{
    diffusion_operator, encode, potential_distances, train_gaga, GagaConfig, GeoAutoencoder,
    PotentialDistances,
};
use crate::error::Result;
use crate::numerics::{pca_fit, Matrix, PcaModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub log1p: bool,
    /// Upper bound on the PCA width; capped by the data shape.
    pub pca_dim: usize,
    pub knn: usize,
    pub diffusion_t: usize,
    pub autoencoder: GagaConfig,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            log1p: true,
            pca_dim: 50,
            knn: 5,
            diffusion_t: 8,
            autoencoder: GagaConfig::default(),
        }
    }
}

/// Fitted preprocessing plus autoencoder; maps raw expression to latents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingModel {
    pub log1p: bool,
    pub pca: PcaModel,
    pub autoencoder: GeoAutoencoder,
}

impl EmbeddingModel {
    pub fn preprocess(&self, x: &Matrix) -> Result<Matrix> {
        let x = if self.log1p {
            x.map(f64::ln_1p)
        } else {
            x.clone()
        };
        self.pca.transform(&x)
    }

    pub fn embed(&self, x: &Matrix) -> Result<Matrix> {
        encode(&self.autoencoder, &self.preprocess(x)?)
    }
}

/// Everything produced by [`fit_embedding`].
#[derive(Debug, Clone)]
pub struct Embedding {
    pub model: EmbeddingModel,
    pub latent: Matrix,
    /// Potential distances between the PCA coordinates.
    pub target: PotentialDistances,
}

/// `log1p` (optional), PCA, potential distances, then the autoencoder.
pub fn fit_embedding(x: &Matrix, cfg: &EmbeddingConfig) -> Result<Embedding> {
    let xl = if cfg.log1p {
        x.map(f64::ln_1p)
    } else {
        x.clone()
    };
    let d = cfg.pca_dim.min(x.rows()).min(x.cols());
    let pca = pca_fit(&xl, d)?;
    let xp = pca.transform(&xl)?;
    let op = diffusion_operator(&xp, cfg.knn, cfg.diffusion_t)?;
    let target = potential_distances(&op)?;
    let autoencoder = train_gaga(&xp, &target, &cfg.autoencoder)?;
    let latent = encode(&autoencoder, &xp)?;
    Ok(Embedding {
        model: EmbeddingModel {
            log1p: cfg.log1p,
            pca,
            autoencoder,
        },
        latent,
        target,
    })
}
