//! Representation self-challenging: drop the most salient pooled units.

use ccnet_tensor::Tensor;

use crate::error::{FedError, Result};

/// Number of units dropped per sample: `⌈p% · units⌉`.
pub fn rsc_drop_count(units: usize, percentile: f64) -> usize {
    // guard against 0.25 * 4 evaluating to 1.0000000000000002
    let exact = percentile * units as f64 / 100.0;
    ((exact - 1e-9).ceil() as usize).clamp(1, units)
}

/// 0/1 mask over `[B, units]` features that zeroes, per sample, the units
/// with the largest saliency `feature · gradient`. Ties go to the lower index.
pub fn rsc_mask(features: &Tensor, grads: &Tensor, percentile: f64) -> Result<Tensor> {
    if features.shape() != grads.shape() || features.rank() != 2 {
        return Err(FedError::Shape(format!(
            "rsc_mask: features {:?} and gradients {:?} must be equal [B, units]",
            features.shape(),
            grads.shape()
        )));
    }
    let (b, units) = (features.shape()[0], features.shape()[1]);
    let k = rsc_drop_count(units, percentile);
    let mut mask = vec![1.0; b * units];
    let (f, g) = (features.data(), grads.data());
    for r in 0..b {
        let sal: Vec<f64> = (0..units).map(|j| f[r * units + j] * g[r * units + j]).collect();
        let mut order: Vec<usize> = (0..units).collect();
        order.sort_by(|&x, &y| sal[y].total_cmp(&sal[x]).then(x.cmp(&y)));
        for &j in &order[..k] {
            mask[r * units + j] = 0.0;
        }
    }
    Ok(Tensor::new(&[b, units], mask)?)
}

/// Features with the [`rsc_mask`] applied.
pub fn rsc_apply(features: &Tensor, grads: &Tensor, percentile: f64) -> Result<Tensor> {
    let mask = rsc_mask(features, grads, percentile)?;
    let data = features.data().iter().zip(mask.data()).map(|(a, m)| a * m).collect();
    Ok(Tensor::new(features.shape(), data)?)
}
