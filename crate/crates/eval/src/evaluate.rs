use ccnet_core::{Backbone, Batch, PriorMode};
use ccnet_data::Sample;
use ccnet_tensor::{ParamSet, Tape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{EvalError, Result};

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Fraction of rows of the `[n, classes]` matrix `probs` whose argmax equals
/// the label.
pub fn accuracy(probs: &[f64], classes: usize, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    if classes == 0 || probs.len() != labels.len() * classes {
        return Err(EvalError::Shape(format!(
            "{} probabilities for {} labels x {classes} classes",
            probs.len(),
            labels.len()
        )));
    }
    let correct = probs
        .chunks(classes)
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub batch_size: usize,
    pub prior: PriorMode,
    /// seeds the prior corruption / random prior draws
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            batch_size: 64,
            prior: PriorMode::default(),
            seed: 0,
        }
    }
}

/// Class probabilities `[n, classes]` for every sample, in order.
pub fn predict(backbone: &dyn Backbone, params: &ParamSet, samples: &[Sample], opts: &EvalOptions) -> Result<Vec<f64>> {
    if opts.batch_size == 0 {
        return Err(EvalError::Config("batch size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut out = Vec::new();
    for chunk in samples.chunks(opts.batch_size) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let batch = Batch::from_samples(&refs, backbone.prior_shape(), opts.prior, &mut rng)?;
        let mut tape = Tape::new();
        let vars: Vec<_> = params.tensors().map(|t| tape.constant(t.clone())).collect();
        let fwd = backbone.forward(&mut tape, &vars, &batch, None)?;
        out.extend_from_slice(tape.value(fwd.probs).data());
    }
    Ok(out)
}

/// Accuracy on `test` without any adaptation.
pub fn evaluate(backbone: &dyn Backbone, params: &ParamSet, test: &[Sample], opts: &EvalOptions) -> Result<f64> {
    if test.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let probs = predict(backbone, params, test, opts)?;
    let labels: Vec<usize> = test.iter().map(|s| s.label).collect();
    accuracy(&probs, probs.len() / labels.len(), &labels)
}
