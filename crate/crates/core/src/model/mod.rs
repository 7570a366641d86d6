//! Seeded toy autoregressive latent video model.
//!
//! Frames are C×H×W latents denoised in `T` steps by a small stack of
//! attention blocks whose keys/values are the concatenation of cached clean
//! frames and the current frame.

mod cache;
mod config;
mod decode;
mod forward;
pub mod snapshot;
mod weights;

pub use cache::{CacheEntry, KvCache};
pub use config::ModelConfig;
pub use decode::{cell_to_pixel, channel_peak, decode_frame, VideoFrame, BLOB_CHANNELS};
pub use forward::{
    cache_entry, denoise_step, denoise_to, extract_features, features_on_tape, forward_on_tape,
    generate_frame, sample_noise, FeatureMap, SfsSpec, Trace,
};
pub use weights::{DenoiserWeights, LayerWeights};

use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model config field `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("state error: {0}")]
    State(String),
    #[error("layer {layer} out of range for a {layers}-layer model")]
    LayerOutOfRange { layer: usize, layers: usize },
    #[error("snapshot error: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Latent `z` of frame `frame_index` at denoising timestep `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentFrame {
    pub frame_index: usize,
    pub t: usize,
    pub z: Tensor,
}
