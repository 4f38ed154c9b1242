use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// `v<crate version>-<git describe>`, fixed at build time.
pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"), "-", env!("CCNET_GIT_DESCRIBE"));

pub fn version() -> String {
    VERSION.to_string()
}

/// Everything needed to repeat a CLI run: the full config, the seeds, the
/// build and the dataset it read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config: BTreeMap<String, String>,
    pub seeds: Vec<u64>,
    pub dataset_checksum: Option<String>,
    /// command-specific fields (backbone, held-out domain, ...)
    pub extra: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, config: BTreeMap<String, String>, seeds: Vec<u64>, dataset_checksum: Option<String>) -> Self {
        Self {
            command: command.into(),
            version: version(),
            config,
            seeds,
            dataset_checksum,
            extra: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.extra.insert(key.into(), value.to_string());
        self
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}
