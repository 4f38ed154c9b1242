//! Synthetic compositional benchmark: four shape classes built from part
//! hierarchies, rendered under four appearance domains, with ground-truth
//! sub-part / part / whole region maps that do not depend on the domain.

mod dataset;
mod error;
mod render;
mod scene;

pub use dataset::{
    build_lodo_split, derive_seed, generate_one, parse_key_values, ClientShard, Dataset, DatasetConfig, LodoSplit,
};
pub use error::{DataError, Result};
pub use render::{render, DomainStyle, Renderer, Sample, CHANNELS, NUM_DOMAINS};
pub use scene::{
    make_scene, oracle_class, Part, Pose, Primitive, PrimitiveKind, RegionIds, SceneSpec, NUM_CLASSES,
};
