//! The hybrid-target network and its building blocks.

mod config;
mod network;
mod params;
mod units;

pub use config::{temperature_schedule, Architecture, FusionKind, HtlNetConfig};
pub use network::{ForwardOptions, ForwardTrace, HtlNet, Predictions};
pub use params::{xavier_uniform, ParamStore, ParamVars, TaskId, SHARED_EMBEDDING};
pub use units::{
    embed_features, ifu_fuse, leu_forward, loss_bce, loss_mse, tower_forward, FieldLayout,
    FusionKernels, FusionOutput, LeuOutput, TowerOutput, TowerVars, PROB_EPS,
};
