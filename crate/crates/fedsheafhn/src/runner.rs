//! Ties config, data, orchestration and persistence together for the CLI.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::checkpoint;
use crate::config::{DatasetSpec, Method, RunConfig};
use crate::error::{Error, Result};
use crate::graph::{load_planetoid, partition, sbm_generate, split_masks, GraphShard};
use crate::metrics::{emit_convergence, MetricsRecord, Summary};
use crate::orchestrator::{
    add_new_clients, prepare_server_driven, run_fedavg, run_local_only, step_round, Pipeline,
    RoundReport, World,
};

/// Client-phase thread cap from the environment; 1 when unset or invalid.
pub fn env_workers() -> usize {
    std::env::var("FSHN_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(1)
        .max(1)
}

/// Builds every shard (training plus held-out) for a config. Client order
/// is shuffled after partitioning: the greedy partitioner assigns regions
/// in a fixed construction order, so low and high client indices would
/// otherwise differ systematically, biasing index-based selections such as
/// held-out clients or lowest-index attackers.
pub fn build_shards(config: &RunConfig) -> Result<Vec<GraphShard>> {
    let graph = match &config.dataset {
        DatasetSpec::Sbm {
            blocks,
            p_in,
            p_out,
            features,
        } => sbm_generate(blocks, *p_in, *p_out, *features, config.seed)?,
        DatasetSpec::Planetoid { dir } => load_planetoid(dir)?,
    };
    let shards = partition(&graph, &config.partition_spec()?)?;
    let mut shards: Vec<GraphShard> = shards
        .into_iter()
        .map(|s| split_masks(s, config.seed))
        .collect::<Result<_>>()?;
    shuffle_client_order(&mut shards, config.seed);
    Ok(shards)
}

/// Seeded shuffle of shard order, relabeling client ids to match.
pub fn shuffle_client_order(shards: &mut [GraphShard], seed: u64) {
    use rand::seq::SliceRandom;
    let mut rng = crate::rng::stream(seed, &[crate::rng::STREAM_CLIENT_ORDER]);
    shards.shuffle(&mut rng);
    for (i, s) in shards.iter_mut().enumerate() {
        s.client_id = i;
    }
}

/// Splits shards into (training, held-out-for-new-clients) by the config's
/// new-client ratio; the highest-index clients are held out.
pub fn split_held_out(config: &RunConfig, shards: Vec<GraphShard>) -> (Vec<GraphShard>, Vec<GraphShard>) {
    let hold = config.held_out_clients().min(shards.len().saturating_sub(1));
    let mut train = shards;
    let held = train.split_off(train.len() - hold);
    (train, held)
}

fn method_pipeline(method: &Method) -> Option<Pipeline> {
    match method {
        Method::FedSheafHn => Some(Pipeline::Full),
        Method::Ablation(v) => Some(v.pipeline()),
        Method::Local | Method::FedAvg => None,
    }
}

#[derive(Debug)]
pub struct RunOutput {
    pub reports: Vec<RoundReport>,
    pub metrics_path: PathBuf,
    pub summary_path: PathBuf,
    pub checkpoints: Vec<PathBuf>,
}

fn write_outputs(
    config: &RunConfig,
    reports: &[RoundReport],
    checkpoints: Vec<PathBuf>,
) -> Result<RunOutput> {
    let metrics_path = config.out_dir.join("metrics.csv");
    MetricsRecord::from_reports(reports).write(&metrics_path)?;
    let summary_path = config.out_dir.join("summary.json");
    if let Some(summary) = Summary::from_reports(&config.method.name(), config.seed, reports) {
        summary.write(&summary_path)?;
    }
    Ok(RunOutput {
        reports: reports.to_vec(),
        metrics_path,
        summary_path,
        checkpoints,
    })
}

/// Runs a config end to end and persists metrics, summary and checkpoints.
pub fn execute(config: &RunConfig) -> Result<RunOutput> {
    std::fs::create_dir_all(&config.out_dir)?;
    let (train_shards, _held) = split_held_out(config, build_shards(config)?);
    let mut cfg = config.fed_config();
    cfg.workers = env_workers();

    match method_pipeline(&config.method) {
        Some(pipeline) => {
            let mut world = prepare_server_driven(train_shards, &cfg, pipeline)?;
            let mut reports = Vec::with_capacity(cfg.rounds);
            let mut checkpoints = Vec::new();
            for r in 0..cfg.rounds {
                reports.push(step_round(&mut world, &cfg)?);
                if (r + 1) % cfg.refresh_interval == 0 || r + 1 == cfg.rounds {
                    let path = config.out_dir.join(format!("checkpoint_r{:04}.fshn", r + 1));
                    let server = world.server.as_ref().expect("server-driven world");
                    checkpoint::save(&path, server, &world.clients)?;
                    checkpoints.push(path);
                }
            }
            if let Some(last) = checkpoints.last() {
                let final_path = config.out_dir.join("checkpoint_final.fshn");
                std::fs::copy(last, &final_path)?;
                checkpoints.push(final_path);
            }
            write_outputs(config, &reports, checkpoints)
        }
        None => {
            let (reports, _world) = match config.method {
                Method::Local => run_local_only(train_shards, &cfg)?,
                Method::FedAvg => run_fedavg(train_shards, &cfg)?,
                _ => unreachable!("server methods handled above"),
            };
            write_outputs(config, &reports, Vec::new())
        }
    }
}

/// Resumes a checkpointed server-driven run to the configured round count;
/// metrics cover only the resumed rounds.
pub fn resume(config: &RunConfig, ckpt: &Path) -> Result<RunOutput> {
    if method_pipeline(&config.method).is_none() {
        return Err(Error::invalid(format!(
            "method {} does not produce checkpoints",
            config.method.name()
        )));
    }
    std::fs::create_dir_all(&config.out_dir)?;
    let (train_shards, _held) = split_held_out(config, build_shards(config)?);
    let mut cfg = config.fed_config();
    cfg.workers = env_workers();
    let mut world = checkpoint::load_world(ckpt, train_shards, &cfg)?;
    let start = world.server.as_ref().expect("loaded server").round;
    if start > cfg.rounds {
        return Err(Error::invalid(format!(
            "checkpoint is at round {start}, beyond the configured {} rounds",
            cfg.rounds
        )));
    }
    let mut reports = Vec::new();
    for _ in start..cfg.rounds {
        reports.push(step_round(&mut world, &cfg)?);
    }
    write_outputs(config, &reports, Vec::new())
}

#[derive(Debug, Serialize)]
pub struct NewClientsOutput {
    pub trained_mean_accuracy: f64,
    pub new_mean_accuracy: f64,
    pub per_new_client_accuracy: Vec<f64>,
}

/// Frozen-server generalization: rebuilds the held-out shards, loads the
/// checkpoint, and reports new-client accuracy next to the trained mean.
pub fn new_clients(config: &RunConfig, ckpt: &Path) -> Result<NewClientsOutput> {
    std::fs::create_dir_all(&config.out_dir)?;
    let (train_shards, held) = split_held_out(config, build_shards(config)?);
    if held.is_empty() {
        return Err(Error::config(
            "new_client_ratio",
            "no held-out clients; set a positive ratio",
        ));
    }
    let mut cfg = config.fed_config();
    cfg.workers = env_workers();
    let world = checkpoint::load_world(ckpt, train_shards, &cfg)?;
    let server = world.server.as_ref().expect("loaded server");

    let trained_mean = {
        let mut acc = 0.0;
        for c in &world.clients {
            acc += crate::client::evaluate(c, crate::client::Split::Test)?;
        }
        acc / world.clients.len() as f64
    };
    let report = add_new_clients(server, held, &cfg)?;
    let out = NewClientsOutput {
        trained_mean_accuracy: trained_mean,
        new_mean_accuracy: report.mean_accuracy(),
        per_new_client_accuracy: report.accuracies,
    };
    let json = serde_json::to_string_pretty(&out)
        .map_err(|e| Error::invalid(format!("new-clients serialization: {e}")))?;
    std::fs::write(config.out_dir.join("new_clients.json"), json + "\n")?;
    Ok(out)
}

/// Reads one or more metrics files and writes convergence columns.
pub fn emit_convergence_files(inputs: &[PathBuf], out: &Path) -> Result<()> {
    let mut named = Vec::new();
    for path in inputs {
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("metrics")
            .to_string();
        named.push((name, MetricsRecord::read(path)?));
    }
    let csv = emit_convergence(&named)?;
    std::fs::write(out, csv)?;
    Ok(())
}

/// Helper shared by tests and examples: `World::clients` test accuracies.
pub fn client_test_accuracies(world: &World) -> Result<Vec<f64>> {
    world
        .clients
        .iter()
        .map(|c| crate::client::evaluate(c, crate::client::Split::Test))
        .collect()
}
