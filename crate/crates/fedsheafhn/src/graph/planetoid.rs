//! Loader for the plain-text node/edge fixture format.
//!
//! `nodes.txt`: one node per line, `<id> <f features> <label>`, features
//! whitespace-separated floats, label an arbitrary string token.
//! `edges.txt`: one `<id> <id>` pair per line. UTF-8, LF. Node ids may be
//! arbitrary integers; they are remapped to dense indices in file order.
//! Class indices are assigned to label strings in lexicographic order.

use std::collections::HashMap;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::graph::Graph;

pub fn load_planetoid(dir: &Path) -> Result<Graph> {
    let nodes_path = dir.join("nodes.txt");
    let edges_path = dir.join("edges.txt");
    let nodes_text = std::fs::read_to_string(&nodes_path).map_err(|e| Error::Malformed {
        path: nodes_path.display().to_string(),
        line: 0,
        msg: format!("cannot read: {e}"),
    })?;
    let edges_text = std::fs::read_to_string(&edges_path).map_err(|e| Error::Malformed {
        path: edges_path.display().to_string(),
        line: 0,
        msg: format!("cannot read: {e}"),
    })?;

    let malformed = |path: &Path, line: usize, msg: String| Error::Malformed {
        path: path.display().to_string(),
        line,
        msg,
    };

    let mut ids: HashMap<i64, usize> = HashMap::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut label_names: Vec<String> = Vec::new();
    let mut feature_dim = None;
    for (lineno, line) in nodes_text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() < 3 {
            return Err(malformed(
                &nodes_path,
                lineno + 1,
                "expected `<id> <features> <label>`".into(),
            ));
        }
        let id: i64 = tokens[0].parse().map_err(|_| {
            malformed(&nodes_path, lineno + 1, format!("bad node id `{}`", tokens[0]))
        })?;
        if ids.insert(id, rows.len()).is_some() {
            return Err(malformed(&nodes_path, lineno + 1, format!("duplicate node id {id}")));
        }
        let feats: Vec<f64> = tokens[1..tokens.len() - 1]
            .iter()
            .map(|t| {
                t.parse::<f64>().map_err(|_| {
                    malformed(&nodes_path, lineno + 1, format!("bad feature value `{t}`"))
                })
            })
            .collect::<Result<_>>()?;
        match feature_dim {
            None => feature_dim = Some(feats.len()),
            Some(f) if f != feats.len() => {
                return Err(malformed(
                    &nodes_path,
                    lineno + 1,
                    format!("expected {f} features, got {}", feats.len()),
                ))
            }
            _ => {}
        }
        rows.push(feats);
        label_names.push(tokens[tokens.len() - 1].to_string());
    }
    if rows.is_empty() {
        return Err(malformed(&nodes_path, 0, "no nodes".into()));
    }

    let mut classes: Vec<String> = label_names.clone();
    classes.sort();
    classes.dedup();
    let class_index: HashMap<&str, usize> = classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let labels: Vec<usize> = label_names
        .iter()
        .map(|name| class_index[name.as_str()])
        .collect();

    let mut edges = Vec::new();
    for (lineno, line) in edges_text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let (a, b) = match (it.next(), it.next(), it.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => {
                return Err(malformed(&edges_path, lineno + 1, "expected `<id> <id>`".into()));
            }
        };
        let pa: i64 = a
            .parse()
            .map_err(|_| malformed(&edges_path, lineno + 1, format!("bad node id `{a}`")))?;
        let pb: i64 = b
            .parse()
            .map_err(|_| malformed(&edges_path, lineno + 1, format!("bad node id `{b}`")))?;
        let la = *ids.get(&pa).ok_or_else(|| {
            malformed(&edges_path, lineno + 1, format!("edge endpoint {pa} is not a node"))
        })?;
        let lb = *ids.get(&pb).ok_or_else(|| {
            malformed(&edges_path, lineno + 1, format!("edge endpoint {pb} is not a node"))
        })?;
        if la == lb {
            return Err(malformed(&edges_path, lineno + 1, format!("self-loop at node {pa}")));
        }
        edges.push((la, lb));
    }

    let n = rows.len();
    let f = feature_dim.unwrap_or(0);
    let mut data = Vec::with_capacity(n * f);
    for row in &rows {
        data.extend_from_slice(row);
    }
    Graph::new(n, edges, Tensor::new(vec![n, f], data)?, labels, classes.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_fixture(dir: &Path, nodes: &str, edges: &str) {
        let mut nf = std::fs::File::create(dir.join("nodes.txt")).unwrap();
        nf.write_all(nodes.as_bytes()).unwrap();
        let mut ef = std::fs::File::create(dir.join("edges.txt")).unwrap();
        ef.write_all(edges.as_bytes()).unwrap();
    }

    #[test]
    fn loads_two_node_toy() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path(), "0 1.0 0.0 a\n1 0.0 1.0 b\n", "0 1\n");
        let g = load_planetoid(dir.path()).unwrap();
        assert_eq!(g.num_nodes, 2);
        assert_eq!(g.edges, vec![(0, 1)]);
        assert_eq!(g.num_classes, 2);
        assert_eq!(g.labels, vec![0, 1]);
    }

    #[test]
    fn duplicate_edge_lines_collapse() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path(), "0 1 a\n1 0 a\n", "0 1\n1 0\n");
        let g = load_planetoid(dir.path()).unwrap();
        assert_eq!(g.num_edges(), 1);
    }

    #[test]
    fn dangling_endpoint_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path(), "0 1 a\n1 0 a\n", "0 7\n");
        let err = load_planetoid(dir.path()).unwrap_err();
        assert!(err.to_string().contains("not a node"), "{err}");
    }

    #[test]
    fn malformed_node_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path(), "0 oops a\n", "");
        assert!(load_planetoid(dir.path()).is_err());
    }

    #[test]
    fn missing_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_planetoid(dir.path()).is_err());
    }

    #[test]
    fn cora_statistics_when_files_are_supplied() {
        // Gated: runs only when FSHN_CORA_DIR points at the converted
        // citation graph; otherwise there is nothing to load.
        let Ok(dir) = std::env::var("FSHN_CORA_DIR") else {
            return;
        };
        let g = load_planetoid(Path::new(&dir)).unwrap();
        assert_eq!(g.num_nodes, 2708);
        assert_eq!(g.num_classes, 7);
        assert_eq!(g.feature_dim(), 1433);
    }

    #[test]
    fn arbitrary_ids_remap_in_file_order() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path(), "31 0.5 b\n7 0.25 a\n", "31 7\n");
        let g = load_planetoid(dir.path()).unwrap();
        assert_eq!(g.edges, vec![(0, 1)]);
        // "a" < "b" lexicographically, so node 0 (label b) has class 1.
        assert_eq!(g.labels, vec![1, 0]);
    }
}
