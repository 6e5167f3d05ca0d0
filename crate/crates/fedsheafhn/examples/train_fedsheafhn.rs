//! Trains the full pipeline on the SBM fixture and prints the round table:
//! federated accuracy, per-client spread, surrogate loss, and server
//! gradient norms.
//!
//! cargo run --release --example train_fedsheafhn

mod common;

use fedsheafhn::orchestrator::run_fedsheafhn;

fn main() {
    let seed = 1;
    let cfg = common::fixture_config(seed);
    let (reports, world) = run_fedsheafhn(common::fixture_shards(seed), &cfg).expect("run");

    println!("round  fed_acc  acc_std  surrogate  |g_theta|  |g_phi|");
    for r in &reports {
        println!(
            "{:>5}  {:.4}   {:.4}   {:>8.4}   {:>8.4}  {:>7.4}",
            r.round, r.federated_accuracy, r.accuracy_std, r.surrogate_loss, r.theta_grad_norm, r.phi_grad_norm
        );
    }

    let last = reports.last().expect("rounds");
    println!("\nfinal federated accuracy: {:.4} (std {:.4})", last.federated_accuracy, last.accuracy_std);
    println!("per-client test accuracy:");
    for c in &last.clients {
        println!("  client {}: {:.4}", c.client_id, c.test_acc);
    }
    let server = world.server.expect("server state");
    println!(
        "collaboration graph: {} clients, {} edges, degrees {:?}",
        server.graph.num_clients,
        server.graph.edges.len(),
        server.graph.degrees()
    );
}
