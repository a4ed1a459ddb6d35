//! Sparse temporal pooling for weakly supervised temporal action localization.
//!
//! A per-stream network learns class-agnostic attention over video segments
//! from video-level labels only. At inference, temporal class activations
//! weighted by that attention are thresholded into proposals, scored with
//! both streams, and filtered with per-class NMS.

pub mod data;
pub mod error;
pub mod eval;
pub mod localize;
pub mod model;
pub mod train;

pub use data::{DatasetManifest, FeatureMatrix, Stream, VideoRecord};
pub use error::{Error, Result};
pub use eval::EvalReport;
pub use localize::{Detection, LocalizeConfig, TCam};
pub use model::{ForwardCache, ModelParams};
pub use train::{Gradients, Hyperparams};
