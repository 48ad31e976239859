//! Trajectory inference between population snapshots.
//!
//! The crate learns continuous, optionally stochastic and growth-aware
//! dynamics that carry one observed cell population onto the next. Work
//! happens in a latent space produced by a distance-preserving autoencoder
//! trained against diffusion potential distances, and cell states can be
//! augmented with features of their spatial neighbourhood.
//!
//! Modules, bottom up:
//!
//! - [`numerics`]: matrices, PCA, kNN, small MLPs with exact gradients, Adam.
//! - [`geometry`]: diffusion operator, potential distances, geometry-aware autoencoder.
//! - [`transport`]: exact EMD, Sinkhorn, unbalanced Sinkhorn, W2 loss with gradients.
//! - [`dynamics`]: drift / diffusion / growth networks and ODE/SDE rollouts with backprop.
//! - [`training`]: marginal, energy and density losses; local and global training.
//! - [`spatial`]: neighbourhood graph features and joint gene/spatial embedding.
//! - [`synthdata`]: GRN simulator and toy datasets.
//! - [`eval`]: trajectory error, W1 / MMD metrics, leave-one-out driver.
//! - [`cli`]: config-driven pipeline and file formats behind the `cellflow` binary.

pub mod cli;
pub mod dynamics;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod numerics;
pub mod spatial;
pub mod synthdata;
pub mod training;
pub mod transport;

pub use error::{Error, Result};
pub use numerics::{Matrix, RngState};
