//! Dense kernels shared by every other module: matrices, PCA, nearest
//! neighbours, small networks with exact gradients, and Adam.

pub mod adam;
pub mod knn;
pub mod matrix;
pub mod mlp;
pub mod par;
pub mod pca;
pub mod rng;

pub use adam::{adam_step, Adam};
pub use knn::{k_nearest_distances, knn_query};
pub use matrix::{dist, median, pearson, sq_dist, sq_dist_matrix, Matrix};
pub use mlp::{mlp_forward, mlp_grad, softplus, softplus_inv, Activation, ForwardCache, Mlp};
pub use pca::{pca_fit, PcaModel};
pub use rng::{RngState, Stream};
