//! Token affinity graphs and their eigenstructure.
//!
//! The affinity between tokens is an RBF kernel `kappa * exp(-|x_i - x_j|^2 / h)`.
//! Eigenvectors are taken from the symmetric normalization
//! `D^{-1/2} S D^{-1/2}`, which shares its spectrum with the row-normalized
//! (random-walk) matrix while keeping an orthonormal basis.

mod affinity;
mod cluster;
mod eigen;
mod fps;

pub use affinity::{
    median_bandwidth, rbf_affinity, squared_distances, AffinityMatrix, AffinityParams, Bandwidth,
    MEDIAN_EXACT_LIMIT, MEDIAN_SUBSAMPLE,
};
pub(crate) use affinity::{affinity_from_sq_dists, bandwidth_pairs, MedianPairs};
pub use cluster::{
    cluster_image, kmeans, match_clusters, spectral_cluster, TokenClusterMap, KMEANS_MAX_ITERS,
    KMEANS_RESEEDS,
};
pub use eigen::{
    projector, sym_eigen, top_k_eigs, SpectralEmbedding, SymEigen, DEGENERATE_GAP, SYMMETRY_TOL,
};
pub use fps::{fps, fps_from};
