//! Latent region optimisation: feature-space drag losses, frequency
//! switchable attention for the references, Gaussian gradient scaling and
//! moment rectification.

mod config;
mod css;
mod loss;
mod optimizer;
mod sfs;
mod stats;

pub use config::{OptimConfig, OptimizerKind, StatsPooling};
pub use css::{css_map, BoxSpec, CssMap};
pub use loss::{build_reference, expand_mask, total_loss, LossTerms};
pub use optimizer::{optimize_latent, IterationRecord, OptimContext, OptimizationReport};
pub use sfs::{draw_cutoff, sfs_attention, sfs_spec, SfsOutput};
pub use stats::{adsr_rectify, neighbor_stats, neighbor_stats_per_channel, rectify, LatentStats, RectifyTarget};

use thiserror::Error;

use crate::drag::DragError;
use crate::model::ModelError;
use crate::tensor::TensorError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("invalid optimiser config field `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("shape error: {0}")]
    Shape(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Drag(#[from] DragError),
}

pub type Result<T> = std::result::Result<T, OptimError>;
