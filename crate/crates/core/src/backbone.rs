//! The interface a trainable classifier offers to the federated loop, and
//! batch assembly from dataset samples.

use ccnet_data::Sample;
use ccnet_tensor::{ParamSet, Tape, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::model::CcNet;
use crate::prior::{corrupted_oracle_masks, prompt_points, random_prior, MaskBatch, MaskSet};

/// How the levels above the tokens are initialised.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PriorMode {
    /// ground-truth masks, each swapped for a sibling with probability `corruption`
    Oracle { corruption: f64 },
    /// Gaussian noise with std 1/√D, fresh per sample
    Random,
}

impl Default for PriorMode {
    fn default() -> Self {
        PriorMode::Oracle { corruption: 0.0 }
    }
}

/// Column geometry a backbone needs its prior in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PriorShape {
    pub rows: usize,
    pub cols: usize,
    pub levels: usize,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Prior {
    None,
    Masks(MaskBatch),
    /// `[B, N, L, D]`
    Embedding(Tensor),
}

/// One minibatch: NHWC images, labels and the prior.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub prior: Prior,
}

/// `[C,H,W]` samples to an NHWC batch tensor.
pub fn images_nhwc(samples: &[&Sample]) -> Tensor {
    let s0 = samples[0];
    let (h, w) = (s0.height, s0.width);
    let c = s0.image.len() / (h * w);
    let mut data = Vec::with_capacity(samples.len() * h * w * c);
    for s in samples {
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    data.push(s.image[(ch * h + y) * w + x]);
                }
            }
        }
    }
    Tensor::new(&[samples.len(), h, w, c], data).expect("consistent image shape")
}

impl Batch {
    /// Assembles a batch; `shape = None` builds no prior. `rng` drives mask
    /// corruption and random priors and is left untouched otherwise.
    pub fn from_samples(
        samples: &[&Sample],
        shape: Option<PriorShape>,
        mode: PriorMode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(CoreError::Shape("empty batch".into()));
        }
        let images = images_nhwc(samples);
        let labels = samples.iter().map(|s| s.label).collect();
        let prior = match (shape, mode) {
            (None, _) => Prior::None,
            (Some(ps), PriorMode::Oracle { corruption }) => {
                let (h, w) = (samples[0].height, samples[0].width);
                let points = prompt_points(ps.rows, ps.cols, h, w);
                let sets = samples
                    .iter()
                    .map(|s| corrupted_oracle_masks(&s.regions, h, w, &points, ps.levels, corruption, rng))
                    .collect::<Result<Vec<_>>>()?;
                Prior::Masks(MaskBatch::new(&sets)?)
            }
            (Some(ps), PriorMode::Random) => {
                let n = ps.rows * ps.cols;
                let mut data = Vec::with_capacity(samples.len() * n * ps.levels * ps.dim);
                for _ in samples {
                    data.extend(random_prior(n, ps.levels, ps.dim, rng.gen()).into_data());
                }
                Prior::Embedding(Tensor::new(&[samples.len(), n, ps.levels, ps.dim], data)?)
            }
        };
        Ok(Self { images, labels, prior })
    }

    /// Batch with the oracle masks supplied by the caller, e.g. computed once
    /// per sample and reused across steps.
    pub fn with_masks(samples: &[&Sample], masks: &[&MaskSet]) -> Result<Self> {
        if samples.is_empty() || samples.len() != masks.len() {
            return Err(CoreError::Shape(format!(
                "{} samples with {} mask sets",
                samples.len(),
                masks.len()
            )));
        }
        Ok(Self {
            images: images_nhwc(samples),
            labels: samples.iter().map(|s| s.label).collect(),
            prior: Prior::Masks(MaskBatch::new(masks)?),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Output of a backbone forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// `[B, C]` class probabilities
    pub probs: Var,
    /// pooled head inputs, `[B, units]` each, before any feature mask
    pub features: Vec<Var>,
}

/// A classifier the federated loop can train: parameters live in a
/// [`ParamSet`], the forward pass is recorded on a [`Tape`].
pub trait Backbone: Send + Sync {
    fn name(&self) -> String;

    fn init_params(&self, seed: u64) -> ParamSet;

    /// Geometry of the prior this backbone consumes, if any.
    fn prior_shape(&self) -> Option<PriorShape>;

    /// `params` holds one tape leaf per parameter tensor, in [`ParamSet`]
    /// order. `feature_masks` multiply the pooled features element-wise.
    fn forward(&self, tape: &mut Tape, params: &[Var], batch: &Batch, feature_masks: Option<&[Tensor]>) -> Result<Forward>;

    fn param_count(&self) -> usize {
        self.init_params(0).numel()
    }
}

impl Backbone for CcNet {
    fn name(&self) -> String {
        format!("ccnet-{}h", self.config.num_heads)
    }

    fn init_params(&self, seed: u64) -> ParamSet {
        CcNet::init_params(self, seed)
    }

    fn prior_shape(&self) -> Option<PriorShape> {
        let c = &self.config;
        Some(PriorShape {
            rows: c.grid_rows,
            cols: c.grid_cols,
            levels: c.levels,
            dim: c.dim,
        })
    }

    fn forward(&self, tape: &mut Tape, params: &[Var], batch: &Batch, feature_masks: Option<&[Tensor]>) -> Result<Forward> {
        let images = tape.constant(batch.images.clone());
        let prior = match &batch.prior {
            Prior::Masks(m) => self.prior_from_masks(tape, params, m)?,
            Prior::Embedding(e) => {
                let e = tape.constant(e.clone());
                self.prior_levels(tape, e)?
            }
            Prior::None => return Err(CoreError::Shape("column network needs a prior".into())),
        };
        let z1 = self.run(tape, params, images, prior)?;
        let (probs, features) = self.classify(tape, params, &z1, feature_masks)?;
        Ok(Forward { probs, features })
    }
}
