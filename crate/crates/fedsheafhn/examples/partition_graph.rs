//! Generates a stochastic block model, partitions it into client shards in
//! both modes, and reports edge cuts, shard sizes, and split masks.
//!
//! cargo run --release --example partition_graph

use fedsheafhn::graph::{
    edge_cut, greedy_edge_cut, partition, sbm_generate, split_masks, PartitionSpec,
};

fn main() {
    let seed = 3;
    let g = sbm_generate(&[30, 30, 30], 0.3, 0.02, 8, seed).expect("sbm");
    println!(
        "graph: {} nodes, {} edges, {} classes, feature dim {}",
        g.num_nodes,
        g.num_edges(),
        g.num_classes,
        g.feature_dim()
    );

    let assignment = greedy_edge_cut(&g, 3);
    println!(
        "greedy 3-way cut: {} of {} edges cross regions",
        edge_cut(&g, &assignment),
        g.num_edges()
    );

    println!("\nnon-overlapping, 6 clients:");
    let shards = partition(&g, &PartitionSpec::non_overlapping(6, seed)).expect("partition");
    for shard in &shards {
        let s = split_masks(shard.clone(), seed).expect("split");
        let mut counts = vec![0usize; g.num_classes];
        for &l in &s.graph.labels {
            counts[l] += 1;
        }
        println!(
            "  client {}: {:>3} nodes, {:>3} edges, labels {:?}, split {}/{}/{}",
            s.client_id,
            s.num_nodes(),
            s.graph.num_edges(),
            counts,
            s.train_mask.len(),
            s.val_mask.len(),
            s.test_mask.len()
        );
    }

    println!("\noverlapping, 10 clients (2 parts x 5 half-samples):");
    let spec = PartitionSpec::overlapping(10, seed).expect("spec");
    let shards = partition(&g, &spec).expect("partition");
    for pair in shards.chunks(5) {
        let part = pair[0].client_id / 5;
        let sizes: Vec<usize> = pair.iter().map(|s| s.num_nodes()).collect();
        let shared = pair[0]
            .global_ids
            .iter()
            .filter(|v| pair[1].global_ids.contains(v))
            .count();
        println!(
            "  base part {part}: sample sizes {sizes:?}; samples 0 and 1 share {shared} nodes"
        );
    }
}
