//! Metric persistence: the per-round CSV, the run summary JSON, and the
//! convergence-curve extraction.
//!
//! `metrics.csv` schema: `round,client_id,split,accuracy,loss`, one row per
//! (round, client) plus one aggregate row per round with `client_id = -1`.
//! Floats are written with Rust's shortest round-trip formatting, so equal
//! runs produce byte-identical files.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::orchestrator::RoundReport;

pub const CSV_HEADER: &str = "round,client_id,split,accuracy,loss";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub round: usize,
    pub client_id: i64,
    pub split: String,
    pub accuracy: f64,
    pub loss: f64,
}

/// Flattened round reports.
#[derive(Debug, Clone, Default)]
pub struct MetricsRecord {
    pub rows: Vec<MetricsRow>,
}

impl MetricsRecord {
    pub fn from_reports(reports: &[RoundReport]) -> Self {
        let mut rows = Vec::new();
        for rep in reports {
            for c in &rep.clients {
                rows.push(MetricsRow {
                    round: rep.round,
                    client_id: c.client_id as i64,
                    split: "test".into(),
                    accuracy: c.test_acc,
                    loss: c.train_loss,
                });
            }
            let mean_loss = if rep.clients.is_empty() {
                0.0
            } else {
                rep.clients.iter().map(|c| c.train_loss).sum::<f64>() / rep.clients.len() as f64
            };
            rows.push(MetricsRow {
                round: rep.round,
                client_id: -1,
                split: "test".into(),
                accuracy: rep.federated_accuracy,
                loss: mean_loss,
            });
        }
        MetricsRecord { rows }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.round, r.client_id, r.split, r.accuracy, r.loss
            ));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Malformed {
            path: path.display().to_string(),
            line: 0,
            msg: format!("cannot read: {e}"),
        })?;
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if lineno == 0 {
                if line != CSV_HEADER {
                    return Err(Error::Malformed {
                        path: path.display().to_string(),
                        line: 1,
                        msg: format!("unexpected header `{line}`"),
                    });
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(Error::Malformed {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    msg: "expected 5 fields".into(),
                });
            }
            let bad = |msg: String| Error::Malformed {
                path: path.display().to_string(),
                line: lineno + 1,
                msg,
            };
            rows.push(MetricsRow {
                round: fields[0].parse().map_err(|_| bad(format!("bad round `{}`", fields[0])))?,
                client_id: fields[1].parse().map_err(|_| bad(format!("bad client `{}`", fields[1])))?,
                split: fields[2].to_string(),
                accuracy: fields[3].parse().map_err(|_| bad(format!("bad accuracy `{}`", fields[3])))?,
                loss: fields[4].parse().map_err(|_| bad(format!("bad loss `{}`", fields[4])))?,
            });
        }
        Ok(MetricsRecord { rows })
    }

    /// Aggregate (client_id = -1) rows in round order.
    pub fn aggregate_rows(&self) -> Vec<&MetricsRow> {
        let mut rows: Vec<&MetricsRow> = self.rows.iter().filter(|r| r.client_id == -1).collect();
        rows.sort_by_key(|r| r.round);
        rows
    }
}

/// Final-state summary persisted as `summary.json`.
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub method: String,
    pub seed: u64,
    pub rounds: usize,
    pub num_clients: usize,
    pub federated_accuracy: f64,
    pub accuracy_std: f64,
    pub per_client_test_accuracy: Vec<f64>,
}

impl Summary {
    pub fn from_reports(method: &str, seed: u64, reports: &[RoundReport]) -> Option<Summary> {
        let last = reports.last()?;
        Some(Summary {
            method: method.to_string(),
            seed,
            rounds: reports.len(),
            num_clients: last.clients.len(),
            federated_accuracy: last.federated_accuracy,
            accuracy_std: last.accuracy_std,
            per_client_test_accuracy: last.clients.iter().map(|c| c.test_acc).collect(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::invalid(format!("summary serialization: {e}")))?;
        std::fs::write(path, json + "\n")?;
        Ok(())
    }
}

/// Round-versus-federated-accuracy columns, one per named input record.
/// All inputs must cover the same round set.
pub fn emit_convergence(inputs: &[(String, MetricsRecord)]) -> Result<String> {
    if inputs.is_empty() {
        return Err(Error::invalid("emit_convergence: no inputs"));
    }
    let first = inputs[0].1.aggregate_rows();
    if first.is_empty() {
        return Err(Error::invalid("emit_convergence: no aggregate rows"));
    }
    let rounds: Vec<usize> = first.iter().map(|r| r.round).collect();
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(inputs.len());
    for (name, rec) in inputs {
        let rows = rec.aggregate_rows();
        let got: Vec<usize> = rows.iter().map(|r| r.round).collect();
        if got != rounds {
            return Err(Error::invalid(format!(
                "emit_convergence: `{name}` covers rounds {got:?}, expected {rounds:?}"
            )));
        }
        columns.push(rows.iter().map(|r| r.accuracy).collect());
    }
    let mut out = String::from("round");
    for (name, _) in inputs {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (i, round) in rounds.iter().enumerate() {
        out.push_str(&format!("{round}"));
        for col in &columns {
            out.push_str(&format!(",{}", col[i]));
        }
        out.push('\n');
    }
    Ok(out)
}
