//! Leave-one-domain-out evaluation, the convolutional baseline, islands
//! export and the pieces behind the `ccnet` command line.

pub mod cnn;
pub mod config;
pub mod error;
pub mod evaluate;
pub mod islands;
pub mod lodo;
pub mod manifest;

pub use cnn::{CnnBaseline, CnnConfig, BUDGET_TOLERANCE};
pub use config::RunConfig;
pub use error::{EvalError, Result};
pub use evaluate::{accuracy, argmax, evaluate, predict, EvalOptions};
pub use islands::{cluster_grid, column_state, cosine, export, islands, islands_of_state, palette, IslandsMap, Rgb, DEFAULT_TAU};
pub use lodo::{domain_name, format_table, lodo, make_backbone, train_and_test, BackboneKind, LodoEntry, LodoReport, TrainedRun};
pub use manifest::{version, Manifest, VERSION};
