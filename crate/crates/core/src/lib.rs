//! Mood Space: a compact latent space learned from token embeddings with a
//! spectral graph loss, plus path algebra (interpolation, analogy, per-token
//! drift) inside it.

pub mod cli;
mod dense;
pub mod error;
pub mod intrinsic_dim;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod mlp;
pub mod model;
pub mod pathops;
pub mod spectral;
pub mod trainer;

pub use error::{Error, Result};
pub use model::MoodSpaceModel;
