//! Desk-scale simulator for personalized subgraph federated learning with
//! sheaf collaboration.
//!
//! Clients hold subgraphs of one latent graph and train two-layer GCNs. The
//! server embeds each client by its mean node embedding, links clients into
//! a KNN collaboration graph, enriches the embeddings with learnable
//! cellular-sheaf diffusion, and generates every client's backbone
//! parameters in one batch with an attention hypernetwork. Baselines
//! (local-only, FedAvg), ablation variants, malicious-embedding attacks and
//! a no-retraining new-client protocol ride on the same loop.
//!
//! The crate is organized around the pipeline:
//!
//! - [`autodiff`] — dense f64 tensors with a reverse-mode tape,
//! - [`graph`] — graph storage, loading, synthesis, partitioning, splits,
//! - [`client`] — the per-client GCN and its local training,
//! - [`sheaf`] — collaboration graph, sheaf Laplacian, diffusion stack,
//! - [`hypernet`] — attention + MLP parameter generation,
//! - [`orchestrator`] — the communication loop and experiment variants,
//! - [`config`] / [`metrics`] / [`checkpoint`] / [`runner`] — the CLI layer.
//!
//! See `examples/` for one runnable walkthrough per capability.

pub mod autodiff;
pub mod checkpoint;
pub mod client;
pub mod config;
pub mod error;
pub mod graph;
pub mod hypernet;
pub mod metrics;
pub mod orchestrator;
pub mod rng;
pub mod runner;
pub mod sheaf;

pub use error::{Error, Result};
