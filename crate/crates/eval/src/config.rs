//! Flat `key=value` run configuration.
//!
//! | key | meaning | default |
//! |-----|---------|---------|
//! | `data_seed` | dataset generation seed | 1 |
//! | `per_domain` | training samples per domain | 400 |
//! | `val_per_domain` | validation samples per domain | per_domain / 10 |
//! | `grid`, `grid_rows`, `grid_cols` | column grid | 4 × 4 |
//! | `levels` | hierarchy levels above the tokens | 3 |
//! | `dim` | embedding width D | 32 |
//! | `mlp_hidden` | hidden width of the BU/TD MLPs | 32 |
//! | `classes` | output classes | 4 |
//! | `heads` / `num_heads` | classification heads | 3 |
//! | `radius` | attention neighbourhood radius or `full` | full |
//! | `activation` | `gelu` or `relu` | gelu |
//! | `height`, `width`, `channels` | input geometry | 32, 32, 3 |
//! | `tokenizer_channels` | tokenizer hidden channels | 16 |
//! | `encoder_channels` | mask encoder channels `a,b` | 8,16 |
//! | `strategy` | fedavg, am, fedprox, rsc, scaffold | fedavg |
//! | `rounds` | communication rounds | 10 |
//! | `local_epochs` | local epochs per round | 5 |
//! | `batch_size` | local batch size | 32 |
//! | `mu` | FedProx proximal weight | 0.01 |
//! | `rsc_percentile` | RSC masked share of feature units, percent | 33 |
//! | `rsc_trigger` | RSC per-batch trigger probability | 0.5 |
//! | `am_lambda` | AM amplitude interpolation weight | 0.5 |
//! | `seed` | training seed | 0 |
//! | `lr`, `weight_decay`, `beta1`, `beta2` | Lion settings | 1e-3, 0.05, 0.95, 0.98 |
//! | `prior` | `oracle` or `random` | oracle |
//! | `corruption` | oracle mask corruption probability | 0 |
//! | `concurrent` | train clients in parallel | true |
//! | `eval_batch` | evaluation batch size | 64 |

use std::collections::BTreeMap;
use std::path::Path;

use ccnet_core::{CcNetConfig, PriorMode};
use ccnet_data::{parse_key_values, DatasetConfig};
use ccnet_fed::FedConfig;

use crate::error::{EvalError, Result};

const MODEL_KEYS: [&str; 16] = [
    "grid",
    "grid_rows",
    "grid_cols",
    "levels",
    "dim",
    "mlp_hidden",
    "classes",
    "heads",
    "num_heads",
    "radius",
    "activation",
    "height",
    "width",
    "channels",
    "tokenizer_channels",
    "encoder_channels",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: DatasetConfig,
    pub model: CcNetConfig,
    pub fed: FedConfig,
    pub eval_batch: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut fed = FedConfig::default();
        fed.lion.lr = 1e-3;
        Self {
            data: DatasetConfig::new(1, 400),
            model: CcNetConfig::desk(32),
            fed,
            eval_batch: 64,
        }
    }
}

fn parse<T: std::str::FromStr>(k: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| EvalError::Config(format!("{k}={v}: {e}")))
}

impl RunConfig {
    pub fn from_key_values(m: &BTreeMap<String, String>) -> Result<Self> {
        let mut c = Self::default();
        c.model = CcNetConfig::from_key_values(c.model, m)?;
        let mut corruption = None;
        let mut prior = "oracle".to_string();
        let mut val_set = false;
        for (k, v) in m {
            let f = &mut c.fed;
            match k.as_str() {
                "data_seed" => c.data.seed = parse(k, v)?,
                "per_domain" => c.data.per_domain = parse(k, v)?,
                "val_per_domain" => {
                    c.data.val_per_domain = parse(k, v)?;
                    val_set = true;
                }
                "strategy" => f.strategy = v.parse()?,
                "rounds" => f.rounds = parse(k, v)?,
                "local_epochs" => f.local_epochs = parse(k, v)?,
                "batch_size" => f.batch_size = parse(k, v)?,
                "mu" => f.mu = parse(k, v)?,
                "rsc_percentile" => f.rsc_percentile = parse(k, v)?,
                "rsc_trigger" => f.rsc_trigger = parse(k, v)?,
                "am_lambda" => f.am_lambda = parse(k, v)?,
                "seed" => f.seed = parse(k, v)?,
                "lr" => f.lion.lr = parse(k, v)?,
                "weight_decay" => f.lion.weight_decay = parse(k, v)?,
                "beta1" => f.lion.beta1 = parse(k, v)?,
                "beta2" => f.lion.beta2 = parse(k, v)?,
                "prior" => prior = v.clone(),
                "corruption" => corruption = Some(parse::<f64>(k, v)?),
                "concurrent" => f.concurrent = parse(k, v)?,
                "eval_batch" => c.eval_batch = parse(k, v)?,
                other if MODEL_KEYS.contains(&other) => {}
                other => return Err(EvalError::Config(format!("unknown key {other:?}"))),
            }
        }
        if !val_set {
            c.data.val_per_domain = c.data.per_domain / 10;
        }
        c.fed.prior = match (prior.as_str(), corruption) {
            ("oracle", q) => PriorMode::Oracle {
                corruption: q.unwrap_or(0.0),
            },
            ("random", None) => PriorMode::Random,
            ("random", Some(_)) => return Err(EvalError::Config("corruption applies to the oracle prior only".into())),
            (p, _) => return Err(EvalError::Config(format!("unknown prior {p:?}"))),
        };
        c.data.height = c.model.height;
        c.data.width = c.model.width;
        c.validate()?;
        Ok(c)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_key_values(&parse_key_values(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.model.validate()?;
        self.fed.validate()?;
        if self.eval_batch == 0 {
            return Err(EvalError::Config("eval_batch must be positive".into()));
        }
        if let PriorMode::Oracle { corruption } = self.fed.prior {
            if !(0.0..=1.0).contains(&corruption) {
                return Err(EvalError::Config(format!("corruption {corruption} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Every setting as `key=value` pairs; [`from_key_values`](Self::from_key_values)
    /// reads them back to an equal config.
    pub fn to_key_values(&self) -> BTreeMap<String, String> {
        let mut m = self.model.to_key_values();
        let f = &self.fed;
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("data_seed", self.data.seed.to_string());
        put("per_domain", self.data.per_domain.to_string());
        put("val_per_domain", self.data.val_per_domain.to_string());
        put("strategy", f.strategy.to_string());
        put("rounds", f.rounds.to_string());
        put("local_epochs", f.local_epochs.to_string());
        put("batch_size", f.batch_size.to_string());
        put("mu", f.mu.to_string());
        put("rsc_percentile", f.rsc_percentile.to_string());
        put("rsc_trigger", f.rsc_trigger.to_string());
        put("am_lambda", f.am_lambda.to_string());
        put("seed", f.seed.to_string());
        put("lr", f.lion.lr.to_string());
        put("weight_decay", f.lion.weight_decay.to_string());
        put("beta1", f.lion.beta1.to_string());
        put("beta2", f.lion.beta2.to_string());
        match f.prior {
            PriorMode::Oracle { corruption } => {
                put("prior", "oracle".into());
                put("corruption", corruption.to_string());
            }
            PriorMode::Random => put("prior", "random".into()),
        }
        put("concurrent", f.concurrent.to_string());
        put("eval_batch", self.eval_batch.to_string());
        m
    }

    pub fn to_text(&self) -> String {
        self.to_key_values().iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}
