use std::collections::BTreeMap;

use ccnet_tensor::Activation;

use crate::error::{CoreError, Result};

/// Dimensions and structural choices of a column network.
#[derive(Debug, Clone, PartialEq)]
pub struct CcNetConfig {
    /// columns are laid out on a `grid_rows × grid_cols` grid (square by default)
    pub grid_rows: usize,
    pub grid_cols: usize,
    /// number of levels above the token level
    pub levels: usize,
    pub dim: usize,
    pub mlp_hidden: usize,
    pub classes: usize,
    pub num_heads: usize,
    /// Chebyshev attention radius; `None` means the full grid
    pub radius: Option<usize>,
    pub activation: Activation,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub tokenizer_channels: usize,
    pub encoder_channels: [usize; 2],
}

impl CcNetConfig {
    /// Desk configuration: 32×32 RGB input, 4×4 columns, three levels.
    pub fn desk(dim: usize) -> Self {
        Self {
            grid_rows: 4,
            grid_cols: 4,
            levels: 3,
            dim,
            mlp_hidden: dim,
            classes: 4,
            num_heads: 3,
            radius: None,
            activation: Activation::Gelu,
            height: 32,
            width: 32,
            channels: 3,
            tokenizer_channels: 16,
            encoder_channels: [8, 16],
        }
    }

    /// The small instance used for gradient checking: D=8, N=4, L=3 on 16×16 input.
    pub fn grad_check() -> Self {
        Self {
            grid_rows: 2,
            grid_cols: 2,
            levels: 3,
            dim: 8,
            mlp_hidden: 8,
            classes: 4,
            num_heads: 3,
            radius: None,
            activation: Activation::Gelu,
            height: 16,
            width: 16,
            channels: 3,
            tokenizer_channels: 4,
            encoder_channels: [2, 3],
        }
    }

    pub fn columns(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    /// Side of the second (patch) convolution of the tokenizer.
    pub fn patch(&self) -> usize {
        self.height / (2 * self.grid_rows)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::Config(m));
        if self.levels == 0 || self.dim == 0 || self.mlp_hidden == 0 || self.classes < 2 {
            return bad("levels, dim and hidden width must be positive and classes at least 2".into());
        }
        if self.num_heads == 0 || self.num_heads > 3 || self.num_heads > self.levels {
            return bad(format!(
                "num_heads {} must lie in 1..={}",
                self.num_heads,
                self.levels.min(3)
            ));
        }
        if self.grid_rows == 0 || self.grid_cols == 0 {
            return bad("grid must be non-empty".into());
        }
        let (h, w) = (self.height, self.width);
        if h % (2 * self.grid_rows) != 0 || w % (2 * self.grid_cols) != 0 {
            return bad(format!(
                "{h}x{w} image not divisible into a {}x{} grid of even patches",
                self.grid_rows, self.grid_cols
            ));
        }
        if h / (2 * self.grid_rows) != w / (2 * self.grid_cols) {
            return bad("tokenizer patches must be square".into());
        }
        if h % 8 != 0 || w % 8 != 0 {
            return bad(format!("mask encoder needs H and W divisible by 8, got {h}x{w}"));
        }
        Ok(())
    }

    /// Levels carrying heads, topmost first.
    pub fn head_levels(&self) -> Vec<usize> {
        (0..self.num_heads).map(|k| self.levels - k).collect()
    }

    pub fn to_key_values(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("grid_rows", self.grid_rows.to_string());
        put("grid_cols", self.grid_cols.to_string());
        put("levels", self.levels.to_string());
        put("dim", self.dim.to_string());
        put("mlp_hidden", self.mlp_hidden.to_string());
        put("classes", self.classes.to_string());
        put("num_heads", self.num_heads.to_string());
        put("radius", self.radius.map_or("full".into(), |r| r.to_string()));
        put(
            "activation",
            match self.activation {
                Activation::Gelu => "gelu".into(),
                Activation::Relu => "relu".into(),
            },
        );
        put("height", self.height.to_string());
        put("width", self.width.to_string());
        put("channels", self.channels.to_string());
        put("tokenizer_channels", self.tokenizer_channels.to_string());
        put(
            "encoder_channels",
            format!("{},{}", self.encoder_channels[0], self.encoder_channels[1]),
        );
        m
    }

    /// Reads the keys written by [`to_key_values`](Self::to_key_values);
    /// missing keys keep the values of `base`, unknown keys are ignored.
    pub fn from_key_values(base: Self, m: &BTreeMap<String, String>) -> Result<Self> {
        let mut c = base;
        let num = |k: &str, v: &str| -> Result<usize> {
            v.parse().map_err(|e| CoreError::Config(format!("{k}={v}: {e}")))
        };
        for (k, v) in m {
            match k.as_str() {
                "grid" => {
                    c.grid_rows = num(k, v)?;
                    c.grid_cols = c.grid_rows;
                }
                "grid_rows" => c.grid_rows = num(k, v)?,
                "grid_cols" => c.grid_cols = num(k, v)?,
                "levels" => c.levels = num(k, v)?,
                "dim" => c.dim = num(k, v)?,
                "mlp_hidden" => c.mlp_hidden = num(k, v)?,
                "classes" => c.classes = num(k, v)?,
                "num_heads" | "heads" => c.num_heads = num(k, v)?,
                "radius" => c.radius = if v == "full" { None } else { Some(num(k, v)?) },
                "activation" => {
                    c.activation = match v.as_str() {
                        "gelu" => Activation::Gelu,
                        "relu" => Activation::Relu,
                        _ => return Err(CoreError::Config(format!("unknown activation {v}"))),
                    }
                }
                "height" => c.height = num(k, v)?,
                "width" => c.width = num(k, v)?,
                "channels" => c.channels = num(k, v)?,
                "tokenizer_channels" => c.tokenizer_channels = num(k, v)?,
                "encoder_channels" => {
                    let parts: Vec<&str> = v.split(',').collect();
                    if parts.len() != 2 {
                        return Err(CoreError::Config(format!("encoder_channels={v}: expected two values")));
                    }
                    c.encoder_channels = [num(k, parts[0])?, num(k, parts[1])?];
                }
                _ => {}
            }
        }
        c.validate()?;
        Ok(c)
    }
}
