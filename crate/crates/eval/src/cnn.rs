//! Parameter-matched convolutional baseline.
//!
//! Three conv + 2×2 max-pool stages and a linear head over the flattened
//! feature map. The first conv has stride 2 by default, so on 32×32 input
//! the stages run at 16×16, 8×8 and 4×4 and most parameters sit in the
//! cheap late layers. Stride 1 is available at roughly four times the cost.

use ccnet_core::{Backbone, Batch, CoreError, Forward, PriorShape};
use ccnet_tensor::{ParamSet, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{EvalError, Result};

/// Allowed relative gap between the baseline and the parameter budget.
pub const BUDGET_TOLERANCE: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CnnConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub classes: usize,
    /// output channels of the three conv stages
    pub widths: [usize; 3],
    /// stride of the first conv, 1 or 2
    pub first_stride: usize,
}

impl CnnConfig {
    pub fn new(height: usize, width: usize, channels: usize, classes: usize, widths: [usize; 3]) -> Self {
        Self {
            height,
            width,
            channels,
            classes,
            widths,
            first_stride: 2,
        }
    }

    pub fn with_first_stride(mut self, stride: usize) -> Self {
        self.first_stride = stride;
        self
    }

    /// Smallest config of the fixed width ratio 1 : 3 : 4 whose parameter
    /// count is at least `budget`.
    pub fn matched(height: usize, width: usize, channels: usize, classes: usize, first_stride: usize, budget: usize) -> Self {
        let mut k = 1;
        loop {
            let cfg = Self::new(height, width, channels, classes, [4 * k, 12 * k, 16 * k]).with_first_stride(first_stride);
            if cfg.param_count() >= budget {
                return cfg;
            }
            k += 1;
        }
    }

    /// Spatial size after the three stages.
    pub fn final_size(&self) -> (usize, usize) {
        let f = 8 * self.first_stride;
        (self.height / f, self.width / f)
    }

    pub fn feature_len(&self) -> usize {
        let (h, w) = self.final_size();
        h * w * self.widths[2]
    }

    pub fn param_count(&self) -> usize {
        let [a, b, c] = self.widths;
        let conv = |cin: usize, cout: usize| 9 * cin * cout + cout;
        conv(self.channels, a) + conv(a, b) + conv(b, c) + self.feature_len() * self.classes + self.classes
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.first_stride) {
            return Err(EvalError::Config(format!("first conv stride {} is not 1 or 2", self.first_stride)));
        }
        let f = 8 * self.first_stride;
        if self.height % f != 0 || self.width % f != 0 || self.height == 0 || self.width == 0 {
            return Err(EvalError::Config(format!(
                "baseline needs height and width divisible by {f}, got {}x{}",
                self.height, self.width
            )));
        }
        if self.channels == 0 || self.classes < 2 || self.widths.contains(&0) {
            return Err(EvalError::Config(format!("degenerate baseline config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CnnBaseline {
    pub config: CnnConfig,
}

impl CnnBaseline {
    /// Rejects configs whose parameter count is more than 25% away from
    /// `budget`.
    pub fn new(config: CnnConfig, budget: usize) -> Result<Self> {
        config.validate()?;
        let n = config.param_count();
        let ratio = (n as f64 - budget as f64).abs() / budget.max(1) as f64;
        if ratio > BUDGET_TOLERANCE {
            return Err(EvalError::Budget {
                baseline: n,
                budget,
                ratio,
            });
        }
        Ok(Self { config })
    }

    /// Conv, bias, ReLU, then 2×2 max-pool. Input and output NHWC.
    fn stage(tape: &mut Tape, x: Var, w: Var, b: Var, stride: usize) -> ccnet_tensor::Result<Var> {
        let s = tape.shape(x).to_vec();
        let (oh, ow) = ((s[1] - 1) / stride + 1, (s[2] - 1) / stride + 1);
        let cols = tape.im2col(x, 3, stride, 1)?;
        let y = tape.matmul(cols, w)?;
        let y = tape.add_row(y, b)?;
        let y = tape.relu(y);
        let c = tape.shape(y)[1];
        let y = tape.reshape(y, &[s[0], oh, ow, c])?;
        tape.max_pool2(y)
    }
}

impl Backbone for CnnBaseline {
    fn name(&self) -> String {
        "cnn".into()
    }

    fn init_params(&self, seed: u64) -> ParamSet {
        let c = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let mut weight = |p: &mut ParamSet, name: &str, fan_in: usize, fan_out: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
            p.push(name, Tensor::new(&[fan_in, fan_out], data).expect("weight shape"));
        };
        let mut cin = c.channels;
        for (i, &cout) in c.widths.iter().enumerate() {
            weight(&mut p, &format!("conv{}.w", i + 1), 9 * cin, cout);
            p.push(format!("conv{}.b", i + 1), Tensor::zeros(&[cout]));
            cin = cout;
        }
        weight(&mut p, "fc.w", c.feature_len(), c.classes);
        p.push("fc.b", Tensor::zeros(&[c.classes]));
        p
    }

    fn prior_shape(&self) -> Option<PriorShape> {
        None
    }

    fn forward(
        &self,
        tape: &mut Tape,
        params: &[Var],
        batch: &Batch,
        feature_masks: Option<&[Tensor]>,
    ) -> ccnet_core::Result<Forward> {
        let c = &self.config;
        let s = batch.images.shape();
        if s.len() != 4 || s[1] != c.height || s[2] != c.width || s[3] != c.channels {
            return Err(CoreError::Shape(format!(
                "baseline expects [B,{},{},{}], got {s:?}",
                c.height, c.width, c.channels
            )));
        }
        if params.len() != 8 {
            return Err(CoreError::Shape(format!("baseline takes 8 parameter tensors, got {}", params.len())));
        }
        let b = s[0];
        let mut x = tape.constant(batch.images.clone());
        for (i, stride) in [c.first_stride, 1, 1].into_iter().enumerate() {
            x = Self::stage(tape, x, params[2 * i], params[2 * i + 1], stride)?;
        }
        let features = tape.reshape(x, &[b, c.feature_len()])?;
        let input = match feature_masks {
            None => features,
            Some([m]) => {
                let m = tape.constant(m.clone());
                tape.mul(features, m)?
            }
            Some(ms) => return Err(CoreError::Shape(format!("baseline has one feature vector, got {} masks", ms.len()))),
        };
        let logits = tape.matmul(input, params[6])?;
        let logits = tape.add_row(logits, params[7])?;
        let probs = tape.softmax(logits, 1)?;
        Ok(Forward {
            probs,
            features: vec![features],
        })
    }
}
