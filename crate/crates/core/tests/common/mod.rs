#![allow(dead_code)]

pub mod straight_line;

use ccnet_core::{CcNet, CcNetConfig, ColumnVars};
use ccnet_tensor::{ParamSet, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 1×2 grid, D=2, L=2, 8×16 input.
pub fn tiny_config() -> CcNetConfig {
    CcNetConfig {
        grid_rows: 1,
        grid_cols: 2,
        levels: 2,
        dim: 2,
        mlp_hidden: 3,
        classes: 3,
        num_heads: 2,
        radius: None,
        activation: ccnet_tensor::Activation::Gelu,
        height: 8,
        width: 16,
        channels: 3,
        tokenizer_channels: 2,
        encoder_channels: [2, 2],
    }
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng, scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

/// Same layout as `init_params`, every entry (biases, contribution weights,
/// temperatures included) drawn uniformly from ±scale.
pub fn randomized(params: &ParamSet, seed: u64, scale: f64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = params.clone();
    for t in p.tensors_mut() {
        for v in t.data_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }
    p
}

pub fn leaves(tape: &mut Tape, p: &ParamSet) -> Vec<Var> {
    p.tensors().map(|t| tape.constant(t.clone())).collect()
}

/// State built from explicit tokens `[B·N, D]` and prior `[B, N, L, D]`.
pub fn state_from(model: &CcNet, tape: &mut Tape, tokens: &Tensor, prior: &Tensor) -> ColumnVars {
    let t = tape.constant(tokens.clone());
    let pr = tape.constant(prior.clone());
    let levels = model.prior_levels(tape, pr).unwrap();
    model.init_state(tape, t, levels).unwrap()
}
