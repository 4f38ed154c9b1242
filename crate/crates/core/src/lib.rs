//! Column network with a hierarchical part-whole prior.
//!
//! Every image is cut into an `n × n` grid of columns. Each column holds one
//! embedding per level: the patch token at level 0 and sub-part, part and
//! whole embeddings above it. The levels above the tokens start from encoded
//! segmentation masks prompted at the column centre, then a single update
//! mixes bottom-up, top-down, identity and same-level attention terms.
//! Heads on the top levels pool over columns and their predictions are
//! averaged.

mod backbone;
mod check;
mod config;
mod error;
mod model;
mod prior;

pub use backbone::{images_nhwc, Backbone, Batch, Forward, Prior, PriorMode, PriorShape};
pub use check::model_grad_check;
pub use config::CcNetConfig;
pub use error::{CoreError, Result};
pub use model::{neighbourhood, CcNet, ColumnState, ColumnVars, MlpIndex, ParamLayout};
pub use prior::{
    corrupted_oracle_masks, oracle_masks, oracle_masks_for_scene, prompt_points, random_prior, MaskBatch, MaskSet,
};
