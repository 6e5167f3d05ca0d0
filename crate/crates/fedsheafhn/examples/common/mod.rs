//! Shared fixture for the runnable examples: a heterogeneous four-block
//! SBM split across eight clients, and the default training configuration
//! at desk scale.

use fedsheafhn::graph::{partition, sbm_generate, split_masks, GraphShard, PartitionSpec};
use fedsheafhn::orchestrator::FedConfig;
use fedsheafhn::runner::shuffle_client_order;

pub fn fixture_shards(seed: u64) -> Vec<GraphShard> {
    let g = sbm_generate(&[60, 60, 60, 60], 0.2, 0.02, 16, seed).expect("sbm");
    let mut shards: Vec<GraphShard> = partition(&g, &PartitionSpec::non_overlapping(8, seed))
        .expect("partition")
        .into_iter()
        .map(|s| split_masks(s, seed).expect("split"))
        .collect();
    shuffle_client_order(&mut shards, seed);
    shards
}

pub fn fixture_config(seed: u64) -> FedConfig {
    let mut cfg = FedConfig::new(seed);
    cfg.rounds = 30;
    cfg.local_epochs = 3;
    cfg.hidden = 32;
    cfg
}
