//! Seeded 40/30/30 train/val/test masks over a shard's nodes.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::graph::GraphShard;
use crate::rng::{stream, STREAM_SPLIT};

/// Fills the shard's masks with a seeded 40% train / 30% val / 30% test
/// split. Counts use round-half-up on 0.4n and 0.3n with the remainder
/// going to test, so 10 nodes split 4/3/3.
pub fn split_masks(mut shard: GraphShard, seed: u64) -> Result<GraphShard> {
    let n = shard.num_nodes();
    if n < 3 {
        return Err(Error::invalid(format!(
            "split_masks: shard {} has {n} nodes, need at least 3",
            shard.client_id
        )));
    }
    let n_train = (0.4 * n as f64).round() as usize;
    let n_val = (0.3 * n as f64).round() as usize;

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = stream(seed, &[STREAM_SPLIT, shard.client_id as u64]);
    order.shuffle(&mut rng);

    let mut train: Vec<usize> = order[..n_train].to_vec();
    let mut val: Vec<usize> = order[n_train..n_train + n_val].to_vec();
    let mut test: Vec<usize> = order[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();

    shard.train_mask = train;
    shard.val_mask = val;
    shard.test_mask = test;
    Ok(shard)
}
