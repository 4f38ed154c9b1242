//! Finite-difference check of the full model loss.

use ccnet_data::{generate_one, DatasetConfig, NUM_DOMAINS};
use ccnet_tensor::{grad_check, GradCheckReport, ParamSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backbone::{Backbone, Batch, PriorMode};
use crate::config::CcNetConfig;
use crate::error::{CoreError, Result};
use crate::model::CcNet;

/// Checks the gradient of the mean NLL of a small generated batch with
/// respect to every parameter. Parameters, biases included, are drawn
/// uniformly from ±0.5 so no term is trivially zero.
pub fn model_grad_check(config: &CcNetConfig, batch_size: usize, seed: u64, eps: f64) -> Result<GradCheckReport> {
    let model = CcNet::new(config.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params: ParamSet = model.init_params(seed);
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
    }
    let data = DatasetConfig {
        height: config.height,
        width: config.width,
        ..DatasetConfig::new(seed, 40)
    };
    let samples: Vec<_> = (0..batch_size)
        .map(|i| generate_one(&data, i % NUM_DOMAINS, i, i % config.classes.min(4)).1)
        .collect();
    let refs: Vec<_> = samples.iter().collect();
    let batch = Batch::from_samples(&refs, model.prior_shape(), PriorMode::default(), &mut rng)?;
    let report = grad_check(
        |tape, vars| {
            let out = model
                .forward(tape, vars, &batch, None)
                .map_err(|e| ccnet_tensor::TensorError::Invalid(e.to_string()))?;
            tape.nll_probs(out.probs, &batch.labels)
        },
        &params,
        eps,
    )?;
    if !report.max_rel_error.is_finite() {
        return Err(CoreError::Shape("gradient check produced a non-finite error".into()));
    }
    Ok(report)
}
