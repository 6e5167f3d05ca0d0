use super::*;
use crate::client::{local_train, ClientParams};
use crate::graph::{partition, sbm_generate, split_masks, PartitionSpec};

fn fixture_shards(num_clients: usize, seed: u64) -> Vec<GraphShard> {
    let g = sbm_generate(&[20, 20, 20, 20], 0.25, 0.02, 8, seed).unwrap();
    let shards = partition(&g, &PartitionSpec::non_overlapping(num_clients, seed)).unwrap();
    shards
        .into_iter()
        .map(|s| split_masks(s, seed).unwrap())
        .collect()
}

fn small_cfg(seed: u64) -> FedConfig {
    let mut cfg = FedConfig::new(seed);
    cfg.rounds = 4;
    cfg.local_epochs = 2;
    cfg.hidden = 16;
    cfg.stalk_dim = 2;
    cfg.sheaf_mlp_hidden = 5;
    cfg.hn_mlp_hidden = 8;
    cfg
}

fn server_param_bits(server: &ServerState) -> Vec<u64> {
    let mut bits = Vec::new();
    for t in server.sheaf.params() {
        bits.extend(t.data().iter().map(|v| v.to_bits()));
    }
    for t in server.hn.params() {
        bits.extend(t.data().iter().map(|v| v.to_bits()));
    }
    bits
}

fn client_param_bits(clients: &[ClientState]) -> Vec<u64> {
    clients
        .iter()
        .flat_map(|c| c.params.pack_all().into_iter().map(f64::to_bits))
        .collect()
}

#[test]
fn zero_rounds_yield_no_reports_and_untouched_server() {
    let shards = fixture_shards(4, 1);
    let mut cfg = small_cfg(1);
    cfg.rounds = 0;
    let (reports, world) = run_fedsheafhn(shards, &cfg).unwrap();
    assert!(reports.is_empty());
    // Server parameters equal a fresh init from the same seed: no round ran.
    let server = world.server.unwrap();
    let mut rng = stream(cfg.seed, &[STREAM_SERVER_INIT]);
    let fresh_sheaf = SheafStack::init(cfg.hidden, cfg.stalk_dim, cfg.sheaf_layers, cfg.sheaf_mlp_hidden, &mut rng).unwrap();
    for (a, b) in server.sheaf.params().iter().zip(fresh_sheaf.params()) {
        assert_eq!(a.data(), b.data());
    }
    assert_eq!(server.round, 0);
}

#[test]
fn frozen_rates_keep_every_parameter_bit_identical() {
    let mut cfg = small_cfg(2);
    cfg.rounds = 4;
    cfg.client_lr = 0.0;
    cfg.theta_lr = 0.0;
    cfg.phi_lr = 0.0;
    // Keep one refresh cycle so the dispatched batch is fixed.
    cfg.refresh_interval = cfg.rounds + 1;

    let mut snapshots: Vec<(Vec<u64>, Vec<u64>)> = Vec::new();
    // Re-run with increasing round counts; every prefix must agree.
    for rounds in 1..=cfg.rounds {
        let mut cfg_r = cfg.clone();
        cfg_r.rounds = rounds;
        let (_, world) = run_fedsheafhn(fixture_shards(4, 2), &cfg_r).unwrap();
        let server = world.server.unwrap();
        snapshots.push((server_param_bits(&server), client_param_bits(&world.clients)));
    }
    for w in snapshots.windows(2) {
        assert_eq!(w[0].0, w[1].0, "server params drifted");
        assert_eq!(w[0].1, w[1].1, "client params drifted");
    }
}

#[test]
fn federated_accuracy_is_the_mean_of_per_client_accuracies() {
    let shards = fixture_shards(4, 3);
    let (reports, _) = run_fedsheafhn(shards, &small_cfg(3)).unwrap();
    for rep in &reports {
        let mean = rep.clients.iter().map(|c| c.test_acc).sum::<f64>() / rep.clients.len() as f64;
        assert!((rep.federated_accuracy - mean).abs() < 1e-15);
    }
}

#[test]
fn run_is_deterministic_for_fixed_seed() {
    let run = || {
        let (reports, world) = run_fedsheafhn(fixture_shards(4, 4), &small_cfg(4)).unwrap();
        let accs: Vec<u64> = reports.iter().map(|r| r.federated_accuracy.to_bits()).collect();
        (accs, client_param_bits(&world.clients))
    };
    assert_eq!(run(), run());
}

#[test]
fn local_only_single_client_matches_manual_training_loop() {
    let shards = fixture_shards(1, 5);
    let mut cfg = small_cfg(5);
    cfg.rounds = 3;
    let (reports, _) = run_local_only(shards.clone(), &cfg).unwrap();

    // The same client-side primitive iterated by hand, with no server
    // injection, must reproduce the loss trajectory bit for bit.
    let mut clients = init_clients(shards, &cfg, 8, 4).unwrap();
    for rep in &reports {
        let out = local_train(&mut clients[0], None, &cfg.local_cfg()).unwrap();
        assert_eq!(out.train_loss.to_bits(), rep.clients[0].train_loss.to_bits());
    }
}

#[test]
fn local_only_beats_random_guessing_on_cliques() {
    let g = sbm_generate(&[12, 12], 0.9, 0.02, 4, 6).unwrap();
    let shards: Vec<GraphShard> = partition(&g, &PartitionSpec::non_overlapping(2, 6))
        .unwrap()
        .into_iter()
        .map(|s| split_masks(s, 6).unwrap())
        .collect();
    let mut cfg = small_cfg(6);
    cfg.rounds = 8;
    cfg.client_lr = 0.3;
    let (reports, _) = run_local_only(shards, &cfg).unwrap();
    let last = reports.last().unwrap();
    assert!(
        last.federated_accuracy >= 0.5,
        "accuracy {} below random-guess floor",
        last.federated_accuracy
    );
}

#[test]
fn fedavg_weighted_mean_matches_brute_force() {
    let shards = fixture_shards(3, 7);
    let cfg = small_cfg(7);
    let clients = init_clients(fixture_shards(3, 7), &cfg, 8, 4).unwrap();
    let mean = weighted_mean_params(&clients);
    // Brute force with explicit weights.
    let sizes: Vec<f64> = shards.iter().map(|s| s.num_nodes() as f64).collect();
    let total: f64 = sizes.iter().sum();
    let dim = mean.len();
    let mut expect = vec![0.0; dim];
    for (state, w) in clients.iter().zip(&sizes) {
        for (e, p) in expect.iter_mut().zip(state.params.pack_all()) {
            *e += (w / total) * p;
        }
    }
    for (a, b) in mean.iter().zip(&expect) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn fedavg_on_identical_shards_is_a_noop_after_first_round() {
    let shard = fixture_shards(1, 8).pop().unwrap();
    let mut copies = Vec::new();
    for id in 0..3 {
        let mut s = shard.clone();
        s.client_id = id;
        copies.push(s);
    }
    let mut cfg = small_cfg(8);
    cfg.rounds = 3;
    let (_, world) = run_fedavg(copies, &cfg).unwrap();
    // All client inits are shared, shards identical: every client holds the
    // same parameters, so the weighted mean equals each client's params.
    let packed: Vec<Vec<f64>> = world.clients.iter().map(|c| c.params.pack_all()).collect();
    assert_eq!(packed[0], packed[1]);
    assert_eq!(packed[1], packed[2]);
    let mean = weighted_mean_params(&world.clients);
    for (m, p) in mean.iter().zip(&packed[0]) {
        assert!((m - p).abs() < 1e-12);
    }
}

#[test]
fn fedavg_single_client_reduces_to_local_training() {
    let shards = fixture_shards(1, 9);
    let mut cfg = small_cfg(9);
    cfg.rounds = 3;
    let (avg_reports, _) = run_fedavg(shards.clone(), &cfg).unwrap();
    let (local_reports, _) = run_local_only(shards, &cfg).unwrap();
    // With one client the aggregate equals the client's own parameters, so
    // re-injection at the next round is an exact no-op.
    for (a, l) in avg_reports.iter().zip(&local_reports) {
        assert_eq!(a.clients[0].train_loss.to_bits(), l.clients[0].train_loss.to_bits());
        assert_eq!(a.federated_accuracy.to_bits(), l.federated_accuracy.to_bits());
    }
}

#[test]
fn no_sheaf_matches_zero_weight_stack_trajectories() {
    let shards = fixture_shards(4, 10);
    let mut cfg = small_cfg(10);
    cfg.rounds = 3;
    cfg.theta_lr = 0.0; // keep the zeroed stack frozen at zero

    let (ablation_reports, _) = run_ablation(fixture_shards(4, 10), &cfg, AblationVariant::NoSheaf).unwrap();

    // Full pipeline with an all-zero sheaf stack is the identity on X0.
    let (f, c) = check_shards(&shards).unwrap();
    let mut clients = init_clients(shards, &cfg, f, c).unwrap();
    let backbone_len = ClientParams::backbone_len(f, cfg.hidden);
    let mut rng = stream(cfg.seed, &[STREAM_SERVER_INIT]);
    let mut sheaf = SheafStack::init(cfg.hidden, cfg.stalk_dim, cfg.sheaf_layers, cfg.sheaf_mlp_hidden, &mut rng).unwrap();
    let hn = HyperNet::init(cfg.hidden, cfg.hn_mlp_hidden, backbone_len, cfg.hn_dropout, &mut rng).unwrap();
    for p in sheaf.params_mut() {
        *p = Tensor::zeros(p.shape());
    }
    let init_out = client_phase(&mut clients, None, &cfg).unwrap();
    let pending = normalize_rows(&collect_embeddings(&init_out).unwrap());
    let mut server = ServerState {
        pipeline: Pipeline::Full,
        sheaf,
        hn,
        collab_gcn: None,
        graph: CollaborationGraph::new(4, Vec::new(), pending.clone()).unwrap(),
        pending,
        round: 0,
        theta_opt: server_optimizer(&cfg, cfg.theta_lr),
        phi_opt: server_optimizer(&cfg, cfg.phi_lr),
        feature_dim: f,
        num_classes: c,
    };
    for (r, expect) in ablation_reports.iter().enumerate() {
        let rep = run_round(&mut server, &mut clients, &cfg, r).unwrap();
        assert_eq!(
            rep.federated_accuracy.to_bits(),
            expect.federated_accuracy.to_bits(),
            "round {r}"
        );
        for (a, b) in rep.clients.iter().zip(&expect.clients) {
            assert_eq!(a.train_loss.to_bits(), b.train_loss.to_bits());
        }
    }
}

#[test]
fn onehot_descriptors_are_standard_basis_rows() {
    let x = onehot_ids(3, 5).unwrap();
    assert_eq!(x.shape(), &[3, 5]);
    for i in 0..3 {
        for j in 0..5 {
            assert_eq!(x.at(i, j), if i == j { 1.0 } else { 0.0 });
        }
    }
    assert!(onehot_ids(6, 5).is_err());
}

#[test]
fn onehot_ablation_runs_without_a_collaboration_graph() {
    let shards = fixture_shards(4, 11);
    let mut cfg = small_cfg(11);
    cfg.rounds = 2;
    let (reports, world) = run_ablation(shards, &cfg, AblationVariant::OnehotHn).unwrap();
    assert_eq!(reports.len(), 2);
    let server = world.server.unwrap();
    assert!(server.graph.edges.is_empty());
    assert_eq!(server.x0().at(0, 0), 1.0);
    assert_eq!(server.x0().at(1, 0), 0.0);
}

#[test]
fn new_clients_leave_server_parameters_bitwise_frozen() {
    let shards = fixture_shards(4, 12);
    let new = fixture_shards(6, 12).split_off(4);
    let cfg = small_cfg(12);
    let (_, world) = run_fedsheafhn(shards, &cfg).unwrap();
    let server = world.server.unwrap();
    let before = server_param_bits(&server);
    let report = add_new_clients(&server, new, &cfg).unwrap();
    assert_eq!(server_param_bits(&server), before);
    assert_eq!(report.accuracies.len(), 2);
    assert!(report.accuracies.iter().all(|a| (0.0..=1.0).contains(a)));
}

#[test]
fn duplicate_shard_new_client_gets_the_duplicated_clients_backbone() {
    // Two training clients with identical shards (and the shared init) keep
    // identical embeddings; a new client with the same shard ties in KNN,
    // attaches to client 0, and is then indistinguishable from client 1 up
    // to summation order.
    let base = fixture_shards(1, 13).pop().unwrap();
    let mut shards = Vec::new();
    for id in 0..2 {
        let mut s = base.clone();
        s.client_id = id;
        shards.push(s);
    }
    let mut cfg = small_cfg(13);
    cfg.rounds = 1; // X0 stays the init-phase embeddings
    cfg.knn_k = 1;
    let (_, world) = run_fedsheafhn(shards, &cfg).unwrap();
    let server = world.server.unwrap();

    let mut new_shard = base.clone();
    new_shard.client_id = 2;
    let report = add_new_clients(&server, vec![new_shard], &cfg).unwrap();
    let n = 2;
    let new_row = report.generated.row(n);
    let peer_row = report.generated.row(1);
    for (a, b) in new_row.iter().zip(peer_row) {
        assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
    }
}

#[test]
fn embedding_mean_strawman_generates_identical_backbones() {
    let shards = fixture_shards(4, 14);
    let mut cfg = small_cfg(14);
    cfg.rounds = 2;
    let (_, world) = run_embedding_mean(shards, &cfg).unwrap();
    let server = world.server.unwrap();
    let omega = generate_backbones(&server).unwrap();
    for i in 1..4 {
        assert_eq!(omega.row(0), omega.row(i));
    }
}

#[test]
fn least_squares_slope_signs() {
    assert!(least_squares_slope(&[3.0, 2.0, 1.0]) < 0.0);
    assert!(least_squares_slope(&[1.0, 2.0, 3.0]) > 0.0);
    assert_eq!(least_squares_slope(&[2.0, 2.0, 2.0]), 0.0);
}

#[test]
fn thread_count_does_not_change_results() {
    let mut cfg = small_cfg(15);
    cfg.rounds = 2;
    let (seq, _) = run_fedsheafhn(fixture_shards(4, 15), &cfg).unwrap();
    cfg.workers = 3;
    let (par, _) = run_fedsheafhn(fixture_shards(4, 15), &cfg).unwrap();
    for (a, b) in seq.iter().zip(&par) {
        assert_eq!(a.federated_accuracy.to_bits(), b.federated_accuracy.to_bits());
        assert_eq!(a.surrogate_loss.to_bits(), b.surrogate_loss.to_bits());
    }
}

#[test]
fn round_errors_carry_the_round_number() {
    // An empty validation mask trips during evaluation of round 0.
    let mut shards = fixture_shards(2, 16);
    shards[1].val_mask.clear();
    let err = run_fedsheafhn(shards, &small_cfg(16)).unwrap_err();
    assert!(err.to_string().contains("round 0"), "{err}");
}

#[test]
fn embeddings_refresh_only_on_schedule() {
    let shards = fixture_shards(4, 17);
    let mut cfg = small_cfg(17);
    cfg.rounds = 5;
    cfg.refresh_interval = 3;
    let (_, world) = run_fedsheafhn(shards, &cfg).unwrap();
    let server = world.server.unwrap();
    // Last refresh was at round 3; X0 must equal what was pending then,
    // which is the collection from round 3 itself awaiting round 6.
    assert_eq!(server.round, 5);
    // The adopted X0 and the still-pending collection differ (clients kept
    // training after round 3's collection).
    assert_ne!(server.x0().data(), server.pending.data());
}
