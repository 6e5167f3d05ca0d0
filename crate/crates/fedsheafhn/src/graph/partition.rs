//! Seeded greedy edge-cut partitioner and the overlapping sampler.
//!
//! Non-overlapping mode grows `num_clients` regions by BFS from spread-out
//! seed nodes, then runs one boundary-refinement pass that moves a node to
//! an adjacent region when that strictly reduces the cut and both regions
//! stay within ten percent of the balanced size. Deterministic for a given
//! graph and spec. Overlapping mode partitions into base parts the same
//! way, then samples half of each part's nodes (rounded up) once per shard.

use std::collections::VecDeque;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::graph::{Graph, GraphShard, PartitionMode, PartitionSpec};
use crate::rng::{stream, STREAM_PARTITION};

pub fn partition(g: &Graph, spec: &PartitionSpec) -> Result<Vec<GraphShard>> {
    if spec.num_clients == 0 {
        return Err(Error::invalid("partition: num_clients must be >= 1"));
    }
    if spec.num_clients > g.num_nodes {
        return Err(Error::invalid(format!(
            "partition: {} clients exceed {} nodes",
            spec.num_clients, g.num_nodes
        )));
    }
    match spec.mode {
        PartitionMode::NonOverlapping => {
            let assignment = greedy_edge_cut(g, spec.num_clients);
            let mut shards = Vec::with_capacity(spec.num_clients);
            for c in 0..spec.num_clients {
                let nodes: Vec<usize> = (0..g.num_nodes).filter(|&v| assignment[v] == c).collect();
                let sub = g.induced(&nodes)?;
                shards.push(GraphShard::unmasked(c, sub, nodes));
            }
            Ok(shards)
        }
        PartitionMode::Overlapping => {
            if spec.base_parts == 0 || spec.base_parts * spec.samples_per_part != spec.num_clients {
                return Err(Error::invalid(
                    "partition: overlapping requires num_clients = base_parts * samples_per_part",
                ));
            }
            if spec.base_parts > g.num_nodes {
                return Err(Error::invalid("partition: more base parts than nodes"));
            }
            let assignment = greedy_edge_cut(g, spec.base_parts);
            let mut shards = Vec::with_capacity(spec.num_clients);
            for p in 0..spec.base_parts {
                let part: Vec<usize> = (0..g.num_nodes).filter(|&v| assignment[v] == p).collect();
                let half = part.len().div_ceil(2);
                for s in 0..spec.samples_per_part {
                    let mut rng = stream(spec.seed, &[STREAM_PARTITION, p as u64, s as u64]);
                    let mut pool = part.clone();
                    pool.shuffle(&mut rng);
                    let mut nodes: Vec<usize> = pool.into_iter().take(half).collect();
                    nodes.sort_unstable();
                    let sub = g.induced(&nodes)?;
                    let client_id = p * spec.samples_per_part + s;
                    shards.push(GraphShard::unmasked(client_id, sub, nodes));
                }
            }
            Ok(shards)
        }
    }
}

/// Number of cut edges under an assignment; the partition quality measure.
pub fn edge_cut(g: &Graph, assignment: &[usize]) -> usize {
    g.edges
        .iter()
        .filter(|&&(a, b)| assignment[a] != assignment[b])
        .count()
}

/// BFS-grown, boundary-refined assignment of nodes to `k` regions.
pub fn greedy_edge_cut(g: &Graph, k: usize) -> Vec<usize> {
    let n = g.num_nodes;
    if k == 1 {
        return vec![0; n];
    }
    let adj = g.adjacency();
    let seeds = spread_seeds(&adj, n, k);

    let mut assignment = vec![usize::MAX; n];
    let mut sizes = vec![0usize; k];
    let mut frontiers: Vec<VecDeque<usize>> = vec![VecDeque::new(); k];
    for (r, &s) in seeds.iter().enumerate() {
        assignment[s] = r;
        sizes[r] = 1;
        for &nb in &adj[s] {
            frontiers[r].push_back(nb);
        }
    }
    let mut remaining = n - k;
    while remaining > 0 {
        // Grow the currently smallest region that still has a frontier.
        let mut pick = None;
        for r in 0..k {
            if frontiers[r].is_empty() {
                continue;
            }
            if pick.is_none_or(|p: usize| sizes[r] < sizes[p]) {
                pick = Some(r);
            }
        }
        let Some(r) = pick else { break };
        let mut grew = false;
        while let Some(v) = frontiers[r].pop_front() {
            if assignment[v] != usize::MAX {
                continue;
            }
            assignment[v] = r;
            sizes[r] += 1;
            remaining -= 1;
            for &nb in &adj[v] {
                if assignment[nb] == usize::MAX {
                    frontiers[r].push_back(nb);
                }
            }
            grew = true;
            break;
        }
        if !grew {
            frontiers[r].clear();
        }
    }

    // Leftovers: nodes unreachable from any seed. Attach each to the
    // smallest adjacent region while progress is possible, then dump truly
    // isolated ones on the globally smallest region.
    loop {
        let mut changed = false;
        for v in 0..n {
            if assignment[v] != usize::MAX {
                continue;
            }
            let mut best: Option<usize> = None;
            for &nb in &adj[v] {
                let r = assignment[nb];
                if r == usize::MAX {
                    continue;
                }
                if best.is_none_or(|b| (sizes[r], r) < (sizes[b], b)) {
                    best = Some(r);
                }
            }
            if let Some(r) = best {
                assignment[v] = r;
                sizes[r] += 1;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    for slot in assignment.iter_mut() {
        if *slot == usize::MAX {
            let r = (0..k).min_by_key(|&r| (sizes[r], r)).expect("k >= 1");
            *slot = r;
            sizes[r] += 1;
        }
    }

    repair_balance(&adj, &mut assignment, &mut sizes, n, k);
    refine_boundary(g, &adj, &mut assignment, &mut sizes, k);
    assignment
}

/// Feeds starved regions (below the -10% balance bound) by stealing, one
/// node at a time, the donor node with the most edges into the starved
/// region, preferring loosely attached nodes in its current region.
fn repair_balance(adj: &[Vec<usize>], assignment: &mut [usize], sizes: &mut [usize], n: usize, k: usize) {
    let lo = (((0.9 * n as f64) / k as f64).floor() as usize).max(1);
    for _ in 0..n {
        let Some(starved) = (0..k).filter(|&r| sizes[r] < lo).min_by_key(|&r| (sizes[r], r)) else {
            break;
        };
        // Candidate donors: nodes outside the starved region whose region
        // can afford to lose one. Score by (edges into starved region,
        // fewest edges kept at home), all ties toward the lowest index.
        let mut best: Option<(usize, isize)> = None;
        for v in 0..n {
            let cur = assignment[v];
            if cur == starved || sizes[cur] <= lo {
                continue;
            }
            let into = adj[v].iter().filter(|&&nb| assignment[nb] == starved).count() as isize;
            let home = adj[v].iter().filter(|&&nb| assignment[nb] == cur).count() as isize;
            let score = 2 * into - home;
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((v, score));
            }
        }
        let Some((v, _)) = best else { break };
        sizes[assignment[v]] -= 1;
        assignment[v] = starved;
        sizes[starved] += 1;
    }
}

/// Farthest-point seed selection: start from the highest-degree node, then
/// repeatedly take the node at maximum BFS distance from the seed set.
fn spread_seeds(adj: &[Vec<usize>], n: usize, k: usize) -> Vec<usize> {
    let first = (0..n)
        .max_by_key(|&v| (adj[v].len(), usize::MAX - v))
        .expect("non-empty graph");
    let mut seeds = vec![first];
    while seeds.len() < k {
        let dist = multi_source_bfs(adj, n, &seeds);
        let far = (0..n)
            .filter(|v| !seeds.contains(v))
            .max_by_key(|&v| (dist[v], usize::MAX - v))
            .expect("num_clients <= num_nodes");
        seeds.push(far);
    }
    seeds
}

fn multi_source_bfs(adj: &[Vec<usize>], n: usize, sources: &[usize]) -> Vec<usize> {
    let mut dist = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    for &s in sources {
        dist[s] = 0;
        queue.push_back(s);
    }
    while let Some(v) = queue.pop_front() {
        for &nb in &adj[v] {
            if dist[nb] == usize::MAX {
                dist[nb] = dist[v] + 1;
                queue.push_back(nb);
            }
        }
    }
    dist
}

/// One pass over nodes in index order; move a node to the adjacent region
/// with the largest cut reduction when sizes stay within +-10% of balance.
fn refine_boundary(g: &Graph, adj: &[Vec<usize>], assignment: &mut [usize], sizes: &mut [usize], k: usize) {
    let n = g.num_nodes;
    let target = n as f64 / k as f64;
    let lo = ((0.9 * target).floor() as usize).max(1);
    let hi = (1.1 * target).ceil() as usize;
    let mut counts = vec![0usize; k];
    for v in 0..n {
        let cur = assignment[v];
        for c in counts.iter_mut() {
            *c = 0;
        }
        for &nb in &adj[v] {
            counts[assignment[nb]] += 1;
        }
        let mut best = cur;
        let mut best_gain = 0isize;
        for r in 0..k {
            if r == cur {
                continue;
            }
            let gain = counts[r] as isize - counts[cur] as isize;
            if gain > best_gain {
                best = r;
                best_gain = gain;
            }
        }
        if best != cur && sizes[cur] > lo && sizes[best] < hi {
            sizes[cur] -= 1;
            sizes[best] += 1;
            assignment[v] = best;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::sbm_generate;
    use rand::seq::SliceRandom;

    #[test]
    fn single_client_gets_whole_graph() {
        let g = sbm_generate(&[4, 4], 0.8, 0.2, 2, 3).unwrap();
        let shards = partition(&g, &PartitionSpec::non_overlapping(1, 3)).unwrap();
        assert_eq!(shards.len(), 1);
        assert_eq!(shards[0].num_nodes(), g.num_nodes);
        assert_eq!(shards[0].graph.num_edges(), g.num_edges());
    }

    #[test]
    fn non_overlapping_is_a_partition() {
        for seed in 0..5 {
            let g = sbm_generate(&[10, 10, 10], 0.5, 0.05, 4, seed).unwrap();
            let shards = partition(&g, &PartitionSpec::non_overlapping(3, seed)).unwrap();
            let mut seen = vec![false; g.num_nodes];
            for s in &shards {
                for &v in &s.global_ids {
                    assert!(!seen[v], "node {v} in two shards");
                    seen[v] = true;
                }
            }
            assert!(seen.iter().all(|&b| b), "not covering");
        }
    }

    #[test]
    fn too_many_clients_rejected() {
        let g = sbm_generate(&[3], 1.0, 1.0, 2, 1).unwrap();
        assert!(partition(&g, &PartitionSpec::non_overlapping(4, 1)).is_err());
    }

    #[test]
    fn greedy_beats_random_partitions_on_average() {
        let g = sbm_generate(&[4, 4, 4], 0.9, 0.05, 2, 17).unwrap();
        let greedy = edge_cut(&g, &greedy_edge_cut(&g, 3));
        let mut total = 0usize;
        let trials = 100;
        for seed in 0..trials {
            let mut rng = stream(seed, &[99]);
            let mut perm: Vec<usize> = (0..g.num_nodes).collect();
            perm.shuffle(&mut rng);
            let mut assignment = vec![0usize; g.num_nodes];
            for (rank, &v) in perm.iter().enumerate() {
                assignment[v] = rank % 3;
            }
            total += edge_cut(&g, &assignment);
        }
        let random_mean = total as f64 / trials as f64;
        assert!(
            (greedy as f64) <= random_mean,
            "greedy cut {greedy} vs random mean {random_mean}"
        );
    }

    #[test]
    fn overlapping_samples_half_of_each_part() {
        let g = sbm_generate(&[12, 12], 0.7, 0.1, 3, 5).unwrap();
        let spec = PartitionSpec::overlapping(10, 5).unwrap();
        let shards = partition(&g, &spec).unwrap();
        assert_eq!(shards.len(), 10);
        // Recover the base parts to size-check each sample.
        let assignment = greedy_edge_cut(&g, 2);
        for s in &shards {
            let part = s.client_id / 5;
            let part_size = assignment.iter().filter(|&&r| r == part).count();
            assert_eq!(s.num_nodes(), part_size.div_ceil(2));
            for &v in &s.global_ids {
                assert_eq!(assignment[v], part);
            }
        }
    }

    #[test]
    fn overlapping_shards_from_same_part_share_nodes() {
        let g = sbm_generate(&[20], 0.4, 0.4, 2, 9).unwrap();
        let spec = PartitionSpec::overlapping(5, 9).unwrap();
        let shards = partition(&g, &spec).unwrap();
        // Half-sampling 10 of 20 twice: disjoint samples are possible but
        // vanishingly unlikely across all pairs; assert at least one overlap.
        let mut overlaps = 0;
        for i in 0..shards.len() {
            for j in (i + 1)..shards.len() {
                let shared = shards[i]
                    .global_ids
                    .iter()
                    .filter(|v| shards[j].global_ids.contains(v))
                    .count();
                if shared > 0 {
                    overlaps += 1;
                }
            }
        }
        assert!(overlaps > 0);
    }

    #[test]
    fn deterministic_for_fixed_spec() {
        let g = sbm_generate(&[8, 8], 0.6, 0.1, 2, 21).unwrap();
        let spec = PartitionSpec::non_overlapping(4, 21);
        let a = partition(&g, &spec).unwrap();
        let b = partition(&g, &spec).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.global_ids, y.global_ids);
        }
    }
}
