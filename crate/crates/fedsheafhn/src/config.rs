//! Run configuration: a flat `key = value` text format with `[section]`
//! headers, parsed without any external format dependency.
//!
//! Keys are globally unique (sections only organize the file); unknown and
//! duplicate keys are rejected, every range violation names its key, and
//! `seed` is mandatory. Everything else carries a default.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::autodiff::OptimizerKind;
use crate::error::{Error, Result};
use crate::graph::{PartitionMode, PartitionSpec};
use crate::orchestrator::{AblationVariant, AttackKind, AttackSpec, FedConfig};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Method {
    FedSheafHn,
    Local,
    FedAvg,
    Ablation(AblationVariant),
}

impl Method {
    pub fn parse(s: &str) -> Option<Method> {
        match s {
            "fedsheafhn" => Some(Method::FedSheafHn),
            "local" => Some(Method::Local),
            "fedavg" => Some(Method::FedAvg),
            _ => s
                .strip_prefix("ablation:")
                .and_then(AblationVariant::parse)
                .map(Method::Ablation),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Method::FedSheafHn => "fedsheafhn".into(),
            Method::Local => "local".into(),
            Method::FedAvg => "fedavg".into(),
            Method::Ablation(v) => format!("ablation:{}", v.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Sbm {
        blocks: Vec<usize>,
        p_in: f64,
        p_out: f64,
        features: usize,
    },
    Planetoid {
        dir: PathBuf,
    },
}

/// A fully validated run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    pub partition_mode: PartitionMode,
    pub num_clients: usize,
    pub samples_per_part: usize,
    pub method: Method,
    pub seed: u64,
    pub rounds: usize,
    pub local_epochs: usize,
    pub client_lr: f64,
    pub theta_lr: f64,
    pub phi_lr: f64,
    pub client_opt: OptimizerKind,
    pub server_opt: OptimizerKind,
    pub hidden: usize,
    pub stalk_dim: usize,
    pub sheaf_layers: usize,
    pub sheaf_mlp_hidden: usize,
    pub knn_k: usize,
    pub refresh_interval: usize,
    pub attack: Option<AttackSpec>,
    /// Fraction of clients held out of training and added afterwards.
    pub new_client_ratio: f64,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn partition_spec(&self) -> Result<PartitionSpec> {
        match self.partition_mode {
            PartitionMode::NonOverlapping => {
                Ok(PartitionSpec::non_overlapping(self.num_clients, self.seed))
            }
            PartitionMode::Overlapping => {
                PartitionSpec::overlapping_with(self.num_clients, self.samples_per_part, self.seed)
            }
        }
    }

    pub fn fed_config(&self) -> FedConfig {
        let mut cfg = FedConfig::new(self.seed);
        cfg.rounds = self.rounds;
        cfg.local_epochs = self.local_epochs;
        cfg.client_lr = self.client_lr;
        cfg.theta_lr = self.theta_lr;
        cfg.phi_lr = self.phi_lr;
        cfg.hidden = self.hidden;
        cfg.stalk_dim = self.stalk_dim;
        cfg.sheaf_layers = self.sheaf_layers;
        cfg.sheaf_mlp_hidden = self.sheaf_mlp_hidden;
        cfg.knn_k = self.knn_k;
        cfg.refresh_interval = self.refresh_interval;
        cfg.client_opt = self.client_opt;
        cfg.server_opt = self.server_opt;
        cfg.attack = self.attack;
        cfg
    }

    /// Number of clients held out for the new-client protocol.
    pub fn held_out_clients(&self) -> usize {
        ((self.new_client_ratio * self.num_clients as f64).round() as usize)
            .min(self.num_clients.saturating_sub(1))
    }
}

const KNOWN_KEYS: &[&str] = &[
    "dataset",
    "planetoid_dir",
    "sbm_blocks",
    "sbm_p_in",
    "sbm_p_out",
    "sbm_features",
    "partition",
    "num_clients",
    "samples_per_part",
    "method",
    "seed",
    "rounds",
    "local_epochs",
    "client_lr",
    "theta_lr",
    "phi_lr",
    "client_opt",
    "server_opt",
    "hidden",
    "stalk_dim",
    "sheaf_layers",
    "sheaf_mlp_hidden",
    "knn_k",
    "refresh_interval",
    "attack",
    "attack_ratio",
    "attack_tau",
    "new_client_ratio",
    "out_dir",
];

struct RawConfig {
    values: HashMap<String, String>,
}

impl RawConfig {
    fn take(&mut self, key: &str) -> Option<String> {
        self.values.remove(key)
    }

    fn parse_or<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.take(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse()
                .map_err(|_| Error::config(key, format!("cannot parse `{raw}`"))),
        }
    }
}

fn parse_raw(text: &str, path: &Path) -> Result<RawConfig> {
    let mut values = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line.starts_with('[') && line.ends_with(']') {
            continue; // section headers organize; keys are global
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Malformed {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: format!("expected `key = value`, got `{line}`"),
            });
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(Error::config(&key, "unknown key"));
        }
        if values.insert(key.clone(), value).is_some() {
            return Err(Error::config(&key, "duplicate key"));
        }
    }
    Ok(RawConfig { values })
}

/// Parses and validates a config file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Malformed {
        path: path.display().to_string(),
        line: 0,
        msg: format!("cannot read: {e}"),
    })?;
    parse_config_text(&text, path)
}

pub fn parse_config_text(text: &str, path: &Path) -> Result<RunConfig> {
    let mut raw = parse_raw(text, path)?;

    let seed: u64 = match raw.take("seed") {
        None => return Err(Error::config("seed", "missing required key")),
        Some(v) => v
            .parse()
            .map_err(|_| Error::config("seed", format!("cannot parse `{v}`")))?,
    };

    let dataset_kind = raw.take("dataset").unwrap_or_else(|| "sbm".into());
    let dataset = match dataset_kind.as_str() {
        "sbm" => {
            let blocks = match raw.take("sbm_blocks") {
                None => vec![60, 60, 60, 60],
                Some(v) => v
                    .split(',')
                    .map(|t| {
                        t.trim()
                            .parse::<usize>()
                            .map_err(|_| Error::config("sbm_blocks", format!("bad block size `{t}`")))
                    })
                    .collect::<Result<_>>()?,
            };
            DatasetSpec::Sbm {
                blocks,
                p_in: raw.parse_or("sbm_p_in", 0.2)?,
                p_out: raw.parse_or("sbm_p_out", 0.02)?,
                features: raw.parse_or("sbm_features", 16)?,
            }
        }
        "planetoid" => {
            let dir = raw
                .take("planetoid_dir")
                .ok_or_else(|| Error::config("planetoid_dir", "required for dataset = planetoid"))?;
            DatasetSpec::Planetoid { dir: PathBuf::from(dir) }
        }
        other => return Err(Error::config("dataset", format!("unknown dataset `{other}`"))),
    };

    let partition_mode = match raw.take("partition").as_deref() {
        None | Some("non_overlapping") => PartitionMode::NonOverlapping,
        Some("overlapping") => PartitionMode::Overlapping,
        Some(other) => {
            return Err(Error::config("partition", format!("unknown mode `{other}`")))
        }
    };

    let method_raw = raw.take("method").unwrap_or_else(|| "fedsheafhn".into());
    let method = Method::parse(&method_raw)
        .ok_or_else(|| Error::config("method", format!("unknown method `{method_raw}`")))?;

    let client_opt_raw = raw.take("client_opt").unwrap_or_else(|| "sgd".into());
    let client_opt = OptimizerKind::parse(&client_opt_raw)
        .ok_or_else(|| Error::config("client_opt", format!("unknown optimizer `{client_opt_raw}`")))?;
    let server_opt_raw = raw.take("server_opt").unwrap_or_else(|| "adam".into());
    let server_opt = OptimizerKind::parse(&server_opt_raw)
        .ok_or_else(|| Error::config("server_opt", format!("unknown optimizer `{server_opt_raw}`")))?;

    let attack = match raw.take("attack").as_deref() {
        None | Some("none") => None,
        Some(kind) => {
            let kind = AttackKind::parse(kind)
                .ok_or_else(|| Error::config("attack", format!("unknown attack `{kind}`")))?;
            Some(AttackSpec {
                kind,
                ratio: raw.parse_or("attack_ratio", 0.0)?,
                tau: raw.parse_or("attack_tau", 1.0)?,
            })
        }
    };
    if attack.is_none() {
        // Accept the auxiliary keys only alongside an attack kind.
        for key in ["attack_ratio", "attack_tau"] {
            if raw.take(key).is_some() {
                return Err(Error::config(key, "set without `attack`"));
            }
        }
    }

    let rounds_raw = raw.take("rounds");
    let rounds: i64 = match rounds_raw {
        None => 30,
        Some(v) => v
            .parse()
            .map_err(|_| Error::config("rounds", format!("cannot parse `{v}`")))?,
    };
    if rounds < 0 {
        return Err(Error::config("rounds", format!("must be >= 0, got {rounds}")));
    }

    let config = RunConfig {
        dataset,
        partition_mode,
        num_clients: raw.parse_or("num_clients", 8)?,
        samples_per_part: raw.parse_or("samples_per_part", 5)?,
        method,
        seed,
        rounds: rounds as usize,
        local_epochs: raw.parse_or("local_epochs", 3)?,
        client_lr: raw.parse_or("client_lr", 0.02)?,
        theta_lr: raw.parse_or("theta_lr", 0.01)?,
        phi_lr: raw.parse_or("phi_lr", 0.02)?,
        client_opt,
        server_opt,
        hidden: raw.parse_or("hidden", 128)?,
        stalk_dim: raw.parse_or("stalk_dim", 2)?,
        sheaf_layers: raw.parse_or("sheaf_layers", 2)?,
        sheaf_mlp_hidden: raw.parse_or("sheaf_mlp_hidden", 20)?,
        knn_k: raw.parse_or("knn_k", 0)?,
        refresh_interval: raw.parse_or("refresh_interval", 5)?,
        attack,
        new_client_ratio: raw.parse_or("new_client_ratio", 0.0)?,
        out_dir: PathBuf::from(raw.take("out_dir").unwrap_or_else(|| "out".into())),
    };
    debug_assert!(raw.values.is_empty(), "unconsumed keys: {:?}", raw.values);

    validate(&config)?;
    Ok(config)
}

fn validate(c: &RunConfig) -> Result<()> {
    if c.num_clients == 0 {
        return Err(Error::config("num_clients", "must be >= 1"));
    }
    if c.local_epochs == 0 {
        return Err(Error::config("local_epochs", "must be >= 1"));
    }
    if c.refresh_interval == 0 {
        return Err(Error::config("refresh_interval", "must be >= 1"));
    }
    if c.hidden == 0 {
        return Err(Error::config("hidden", "must be >= 1"));
    }
    if c.stalk_dim == 0 || !c.hidden.is_multiple_of(c.stalk_dim) {
        return Err(Error::config(
            "stalk_dim",
            format!("hidden {} must be divisible by stalk_dim {}", c.hidden, c.stalk_dim),
        ));
    }
    for (key, v) in [
        ("client_lr", c.client_lr),
        ("theta_lr", c.theta_lr),
        ("phi_lr", c.phi_lr),
    ] {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::config(key, format!("must be finite and >= 0, got {v}")));
        }
    }
    if let DatasetSpec::Sbm { blocks, p_in, p_out, features } = &c.dataset {
        if blocks.is_empty() || blocks.contains(&0) {
            return Err(Error::config("sbm_blocks", "blocks must be non-empty and positive"));
        }
        if *features == 0 {
            return Err(Error::config("sbm_features", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(p_out) || !(*p_out..=1.0).contains(p_in) {
            return Err(Error::config("sbm_p_in", "need 0 <= sbm_p_out <= sbm_p_in <= 1"));
        }
    }
    if let Some(a) = &c.attack {
        if !(0.0..=1.0).contains(&a.ratio) {
            return Err(Error::config("attack_ratio", "must be within [0, 1]"));
        }
        if a.tau < 0.0 {
            return Err(Error::config("attack_tau", "must be >= 0"));
        }
    }
    if !(0.0..=0.9).contains(&c.new_client_ratio) {
        return Err(Error::config("new_client_ratio", "must be within [0, 0.9]"));
    }
    if c.partition_mode == PartitionMode::Overlapping
        && (c.samples_per_part == 0 || !c.num_clients.is_multiple_of(c.samples_per_part))
    {
        return Err(Error::config(
            "samples_per_part",
            "num_clients must be a multiple of samples_per_part",
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig> {
        parse_config_text(text, Path::new("test.cfg"))
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let c = parse("seed = 7\n").unwrap();
        assert_eq!(c.refresh_interval, 5);
        assert_eq!(c.hidden, 128);
        assert_eq!(c.rounds, 30);
        assert_eq!(c.method, Method::FedSheafHn);
        assert_eq!(c.num_clients, 8);
        assert!(matches!(c.dataset, DatasetSpec::Sbm { .. }));
    }

    #[test]
    fn sections_are_organizational() {
        let c = parse("[train]\nseed = 1\n[server]\nhidden = 64\nstalk_dim = 4\n").unwrap();
        assert_eq!(c.hidden, 64);
        assert_eq!(c.stalk_dim, 4);
    }

    #[test]
    fn negative_rounds_error_names_the_key() {
        let err = parse("seed = 1\nrounds = -1\n").unwrap_err();
        assert!(err.to_string().contains("rounds"), "{err}");
    }

    #[test]
    fn duplicate_key_rejected() {
        let err = parse("seed = 1\nseed = 2\n").unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn unknown_key_rejected() {
        let err = parse("seed = 1\nbananas = 3\n").unwrap_err();
        assert!(err.to_string().contains("bananas"), "{err}");
    }

    #[test]
    fn missing_seed_rejected() {
        let err = parse("rounds = 3\n").unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
    }

    #[test]
    fn ablation_methods_parse() {
        let c = parse("seed = 1\nmethod = ablation:no_sheaf\n").unwrap();
        assert_eq!(c.method, Method::Ablation(AblationVariant::NoSheaf));
        assert!(parse("seed = 1\nmethod = ablation:bogus\n").is_err());
    }

    #[test]
    fn attack_block_parses() {
        let c = parse("seed = 1\nattack = same_value\nattack_ratio = 0.2\nattack_tau = 1.5\n").unwrap();
        let a = c.attack.unwrap();
        assert_eq!(a.kind, AttackKind::SameValue);
        assert_eq!(a.ratio, 0.2);
        assert_eq!(a.tau, 1.5);
        // Auxiliary attack keys without a kind are rejected.
        assert!(parse("seed = 1\nattack_ratio = 0.2\n").is_err());
    }

    #[test]
    fn zero_rates_are_allowed() {
        let c = parse("seed = 1\nclient_lr = 0\ntheta_lr = 0\nphi_lr = 0\n").unwrap();
        assert_eq!(c.client_lr, 0.0);
        assert!(parse("seed = 1\nclient_lr = -0.1\n").is_err());
    }

    #[test]
    fn stalk_dim_must_divide_hidden() {
        let err = parse("seed = 1\nhidden = 10\nstalk_dim = 4\n").unwrap_err();
        assert!(err.to_string().contains("stalk_dim"), "{err}");
    }

    #[test]
    fn held_out_clients_rounds_the_ratio() {
        let c = parse("seed = 1\nnum_clients = 8\nnew_client_ratio = 0.2\n").unwrap();
        assert_eq!(c.held_out_clients(), 2);
    }
}
