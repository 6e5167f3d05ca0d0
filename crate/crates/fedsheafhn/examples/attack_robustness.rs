//! Sweeps malicious-client ratios for both attack kinds and compares the
//! full pipeline against the embedding-mean aggregation strawman.
//!
//! cargo run --release --example attack_robustness

mod common;

use fedsheafhn::orchestrator::{run_embedding_mean, run_fedsheafhn, AttackKind, AttackSpec};

fn mean_over_seeds(run: impl Fn(u64) -> f64) -> f64 {
    let seeds = [1u64, 2, 3];
    seeds.iter().map(|&s| run(s)).sum::<f64>() / seeds.len() as f64
}

fn main() {
    println!("same-value and Gaussian embedding attacks, tau = 1.0\n");
    println!("{:<11} {:>6} {:>12} {:>16}", "attack", "ratio", "fedsheafhn", "embedding-mean");
    for kind in [AttackKind::SameValue, AttackKind::Gaussian] {
        for ratio in [0.0, 0.2, 0.4] {
            let attack = (ratio > 0.0).then_some(AttackSpec { kind, ratio, tau: 1.0 });
            let fshn = mean_over_seeds(|seed| {
                let mut cfg = common::fixture_config(seed);
                cfg.attack = attack;
                run_fedsheafhn(common::fixture_shards(seed), &cfg)
                    .expect("run")
                    .0
                    .last()
                    .unwrap()
                    .federated_accuracy
            });
            let strawman = mean_over_seeds(|seed| {
                let mut cfg = common::fixture_config(seed);
                cfg.attack = attack;
                run_embedding_mean(common::fixture_shards(seed), &cfg)
                    .expect("run")
                    .0
                    .last()
                    .unwrap()
                    .federated_accuracy
            });
            println!("{:<11} {ratio:>6.1} {fshn:>12.4} {strawman:>16.4}", kind.name());
        }
        println!();
    }
}
