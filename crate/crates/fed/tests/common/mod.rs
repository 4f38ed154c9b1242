#![allow(dead_code)]

use ccnet_core::{CcNet, CcNetConfig};
use ccnet_tensor::Activation;
use ccnet_data::{build_lodo_split, ClientShard, Dataset, DatasetConfig};
use ccnet_fed::FedConfig;

/// 2×2 grid, two levels, D=4 on 16×16 images.
pub fn tiny_model() -> CcNet {
    CcNet::new(CcNetConfig {
        grid_rows: 2,
        grid_cols: 2,
        levels: 2,
        dim: 4,
        mlp_hidden: 4,
        classes: 4,
        num_heads: 2,
        radius: None,
        activation: Activation::Gelu,
        height: 16,
        width: 16,
        channels: 3,
        tokenizer_channels: 2,
        encoder_channels: [2, 2],
    })
    .unwrap()
}

pub fn tiny_dataset() -> Dataset {
    Dataset::generate(DatasetConfig {
        height: 16,
        width: 16,
        ..DatasetConfig::new(5, 40)
    })
    .unwrap()
}

pub fn shards(ds: &Dataset) -> Vec<ClientShard> {
    build_lodo_split(ds, 3).unwrap().clients
}

pub fn quick(strategy: ccnet_fed::Strategy) -> FedConfig {
    let mut cfg = FedConfig {
        strategy,
        rounds: 2,
        local_epochs: 1,
        batch_size: 16,
        seed: 7,
        ..Default::default()
    };
    cfg.lion.lr = 1e-3;
    cfg
}
