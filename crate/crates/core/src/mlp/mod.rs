//! Token-wise MLPs with hand-written backpropagation, and Adam.

mod adam;
mod network;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use network::{
    clip_global_norm, ForwardCache, Layer, Mlp, MlpGrads, DEFAULT_LEAKY_SLOPE, HIDDEN_UNITS,
};
