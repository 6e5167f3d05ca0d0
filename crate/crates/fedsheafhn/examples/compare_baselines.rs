//! Compares FedSheafHN with local-only training and FedAvg on the
//! heterogeneous SBM fixture, averaged over three seeds.
//!
//! cargo run --release --example compare_baselines

mod common;

use fedsheafhn::orchestrator::{run_fedavg, run_fedsheafhn, run_local_only};

fn main() {
    let seeds = [1u64, 2, 3];
    let mut rows: Vec<(&str, Vec<f64>, Vec<f64>)> = vec![
        ("fedsheafhn", Vec::new(), Vec::new()),
        ("fedavg", Vec::new(), Vec::new()),
        ("local", Vec::new(), Vec::new()),
    ];
    for &seed in &seeds {
        let cfg = common::fixture_config(seed);
        let runs = [
            run_fedsheafhn(common::fixture_shards(seed), &cfg).expect("fedsheafhn").0,
            run_fedavg(common::fixture_shards(seed), &cfg).expect("fedavg").0,
            run_local_only(common::fixture_shards(seed), &cfg).expect("local").0,
        ];
        for (row, reports) in rows.iter_mut().zip(runs) {
            let last = reports.last().expect("at least one round");
            row.1.push(last.federated_accuracy);
            row.2.push(last.accuracy_std);
        }
    }
    println!("{:<12} {:>10} {:>10}  per-seed accuracy", "method", "acc(mean)", "std(mean)");
    for (name, accs, stds) in &rows {
        let acc = accs.iter().sum::<f64>() / accs.len() as f64;
        let std = stds.iter().sum::<f64>() / stds.len() as f64;
        let per: Vec<String> = accs.iter().map(|a| format!("{a:.3}")).collect();
        println!("{name:<12} {acc:>10.4} {std:>10.4}  [{}]", per.join(", "));
    }
}
