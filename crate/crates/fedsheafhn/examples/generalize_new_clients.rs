//! Holds two clients out of training, then adds them with the server
//! frozen: one local round for the descriptor, a generated backbone, and
//! a short head fit.
//!
//! cargo run --release --example generalize_new_clients

mod common;

use fedsheafhn::orchestrator::{add_new_clients, run_fedsheafhn};

fn main() {
    let mut trained_mean = 0.0;
    let mut new_mean = 0.0;
    let seeds = [1u64, 2, 3, 4, 5, 6, 7, 8];
    for &seed in &seeds {
        let cfg = common::fixture_config(seed);
        let mut shards = common::fixture_shards(seed);
        let held = shards.split_off(6);

        let (reports, world) = run_fedsheafhn(shards, &cfg).expect("train");
        let server = world.server.expect("server");
        let trained = reports.last().expect("rounds").federated_accuracy;

        let report = add_new_clients(&server, held, &cfg).expect("new clients");
        println!(
            "seed {seed}: trained mean {trained:.4}, new clients {:?} -> mean {:.4}",
            report
                .accuracies
                .iter()
                .map(|a| format!("{a:.3}"))
                .collect::<Vec<_>>(),
            report.mean_accuracy()
        );
        trained_mean += trained / seeds.len() as f64;
        new_mean += report.mean_accuracy() / seeds.len() as f64;
    }
    println!(
        "\nover {} seeds: trained {trained_mean:.4} vs newly joined {new_mean:.4} (reduction {:+.4})",
        seeds.len(),
        trained_mean - new_mean
    );
    println!("theta and phi stay bitwise frozen throughout (the server state is only read).");
}
