//! Runs every ablation variant next to the full pipeline on the fixture.
//!
//! cargo run --release --example ablation_grid

mod common;

use fedsheafhn::orchestrator::{run_ablation, run_fedsheafhn, AblationVariant};

fn main() {
    let seeds = [1u64, 2, 3];
    let variants = [
        AblationVariant::OnehotHn,
        AblationVariant::NoSheaf,
        AblationVariant::GcnCollab,
        AblationVariant::NoAttention,
        AblationVariant::StaticEmbedding,
    ];

    let full: f64 = seeds
        .iter()
        .map(|&seed| {
            let cfg = common::fixture_config(seed);
            run_fedsheafhn(common::fixture_shards(seed), &cfg)
                .expect("run")
                .0
                .last()
                .unwrap()
                .federated_accuracy
        })
        .sum::<f64>()
        / seeds.len() as f64;

    println!("{:<18} {:>10}", "variant", "acc(mean)");
    for v in variants {
        let acc: f64 = seeds
            .iter()
            .map(|&seed| {
                let cfg = common::fixture_config(seed);
                run_ablation(common::fixture_shards(seed), &cfg, v)
                    .expect("run")
                    .0
                    .last()
                    .unwrap()
                    .federated_accuracy
            })
            .sum::<f64>()
            / seeds.len() as f64;
        println!("{:<18} {acc:>10.4}", v.name());
    }
    println!("{:<18} {full:>10.4}", "full pipeline");
}
