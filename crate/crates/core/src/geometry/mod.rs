//! Diffusion-geometry target distances and the distance-matching
//! autoencoder that defines the latent space.

mod diffusion;
mod gaga;
mod pipeline;

pub use diffusion::{
    diffusion_operator, potential_distances, DiffusionOperator, PotentialDistances, POTENTIAL_EPS,
};
pub use gaga::{decode, encode, train_gaga, GagaConfig, GeoAutoencoder, FULL_BATCH_LIMIT};
pub use pipeline::{fit_embedding, Embedding, EmbeddingConfig, EmbeddingModel};
