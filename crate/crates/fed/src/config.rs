use std::fmt;
use std::str::FromStr;

use ccnet_core::PriorMode;
use ccnet_tensor::LionConfig;

use crate::error::{FedError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    FedAvg,
    Am,
    FedProx,
    Rsc,
    Scaffold,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::FedAvg,
        Strategy::Am,
        Strategy::FedProx,
        Strategy::Rsc,
        Strategy::Scaffold,
    ];
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::FedAvg => "fedavg",
            Strategy::Am => "am",
            Strategy::FedProx => "fedprox",
            Strategy::Rsc => "rsc",
            Strategy::Scaffold => "scaffold",
        })
    }
}

impl FromStr for Strategy {
    type Err = FedError;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.to_string() == s.to_ascii_lowercase())
            .ok_or_else(|| FedError::Config(format!("unknown strategy {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FedConfig {
    pub strategy: Strategy,
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    /// FedProx proximal coefficient
    pub mu: f64,
    /// RSC: percentage of pooled units dropped when triggered
    pub rsc_percentile: f64,
    /// RSC: probability that a batch is masked
    pub rsc_trigger: f64,
    /// AM: weight of the foreign amplitude
    pub am_lambda: f64,
    pub seed: u64,
    pub lion: LionConfig,
    pub prior: PriorMode,
    /// run the clients of a round on the rayon pool
    pub concurrent: bool,
}

impl Default for FedConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::FedAvg,
            rounds: 10,
            local_epochs: 5,
            batch_size: 32,
            mu: 0.01,
            rsc_percentile: 33.0,
            rsc_trigger: 0.5,
            am_lambda: 0.5,
            seed: 0,
            lion: LionConfig::default(),
            prior: PriorMode::default(),
            concurrent: true,
        }
    }
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FedError::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.mu < 0.0 || !self.mu.is_finite() {
            return bad(format!("mu {} must be a finite non-negative number", self.mu));
        }
        if !(self.rsc_percentile > 0.0 && self.rsc_percentile <= 50.0) {
            return bad(format!("rsc_percentile {} outside (0, 50]", self.rsc_percentile));
        }
        if !(0.0..=1.0).contains(&self.rsc_trigger) {
            return bad(format!("rsc_trigger {} outside [0, 1]", self.rsc_trigger));
        }
        if !(0.0..=1.0).contains(&self.am_lambda) {
            return bad(format!("am_lambda {} outside [0, 1]", self.am_lambda));
        }
        if !(self.lion.lr > 0.0) {
            return bad(format!("learning rate {} must be positive", self.lion.lr));
        }
        Ok(())
    }
}
