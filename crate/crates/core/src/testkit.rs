//! Deterministic fixture generation: seeded corpora of structurally valid
//! call graphs with the quirks real traces exhibit (zero-duration calls,
//! tied start times, repeated destinations among siblings, skewed node
//! popularity), plus rendering back into the tabular trace-file shape for
//! end-to-end ingestion runs.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{check_structure, CallGraph, Edge, EdgeId, NodeId};

#[derive(Clone, Debug)]
pub struct FixtureConfig {
    pub graphs: usize,
    pub seed: u64,
    pub services: usize,
    pub microservices: usize,
    pub max_depth: u32,
    /// Extra edges sprinkled beyond the depth-defining chain, per graph.
    pub max_extra_edges: usize,
    /// Re-log every n-th graph under a new trace id (structural duplicate).
    pub duplicate_every: Option<usize>,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        FixtureConfig {
            graphs: 200,
            seed: 7,
            services: 12,
            microservices: 80,
            max_depth: 6,
            max_extra_edges: 8,
            duplicate_every: None,
        }
    }
}

const COMM_TYPES: &[(&str, u32)] = &[("RPC", 50), ("DB", 20), ("MC", 15), ("MQ", 10), ("HTTP", 5)];

fn weighted<'a, T>(items: &'a [(T, u32)], rng: &mut impl Rng) -> &'a T {
    let total: u32 = items.iter().map(|(_, w)| w).sum();
    let mut u = rng.gen_range(0..total);
    for (item, w) in items {
        if u < *w {
            return item;
        }
        u -= w;
    }
    &items[items.len() - 1].0
}

fn service_name(index: usize) -> NodeId {
    NodeId::new(format!("S_{:09}", 100_000_000 + index)).expect("valid service name")
}

fn microservice_name(index: usize) -> NodeId {
    NodeId::new(format!("MS_{:05}", 10_000 + index)).expect("valid microservice name")
}

/// Popularity-skewed microservice pick: low indices are heavy hitters.
fn pick_microservice(pool: usize, rng: &mut impl Rng) -> NodeId {
    let u: f64 = rng.gen();
    let index = ((u * u) * pool as f64) as usize;
    microservice_name(index.min(pool - 1))
}

/// One seeded, structurally valid graph. Node names and shapes follow the
/// fixture conventions; sibling ids are assigned in canonical (time) order.
pub fn random_graph(seed: u64) -> CallGraph {
    let cfg = FixtureConfig::default();
    build_one(&cfg, &mut ChaCha8Rng::seed_from_u64(seed), 0)
}

/// A seeded corpus of valid graphs.
pub fn fixture_graphs(cfg: &FixtureConfig) -> Vec<CallGraph> {
    let mut graphs = Vec::with_capacity(cfg.graphs);
    for i in 0..cfg.graphs {
        if let Some(every) = cfg.duplicate_every {
            if every > 0 && i > 0 && i % every == 0 {
                let mut dup = graphs[i - 1].clone();
                dup.trace_id = format!("fixture_{:06}", i);
                graphs.push(dup);
                continue;
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64);
        graphs.push(build_one(cfg, &mut rng, i));
    }
    graphs
}

fn build_one(cfg: &FixtureConfig, rng: &mut ChaCha8Rng, index: usize) -> CallGraph {
    let service_idx = rng.gen_range(0..cfg.services);
    let service = service_name(service_idx);

    let depth_weights: Vec<(u32, u32)> = (1..=cfg.max_depth)
        .map(|d| (d, [2u32, 6, 6, 4, 2, 1][(d as usize - 1).min(5)]))
        .collect();
    let target_depth = *weighted(&depth_weights, rng);

    // Per-service latency scale keeps the p90 threshold meaningful.
    let scale = 20 + 15 * service_idx as u64;
    let root_duration = scale + rng.gen_range(0..scale * 4) + rng.gen_range(0..(scale * 2)) * u64::from(rng.gen_bool(0.1));

    // Depth-defining chain.
    let mut edges: Vec<(Vec<u64>, Edge)> = Vec::new();
    let root = Edge {
        edge_id: EdgeId::root(0),
        source: NodeId::client(),
        destination: pick_microservice(cfg.microservices, rng),
        comm_type: "HTTP".to_string(),
        start_ms: 0,
        finish_ms: root_duration,
    };
    edges.push((vec![0], root));
    for _ in 1..target_depth {
        let (parent_path, parent) = {
            let (p, e) = edges.last().unwrap();
            (p.clone(), e.clone())
        };
        let window = parent.finish_ms - parent.start_ms;
        let start = parent.start_ms + if window > 0 { rng.gen_range(0..=window / 2) } else { 0 };
        let duration = if window > 0 {
            rng.gen_range(0..=(parent.finish_ms - start))
        } else {
            0
        };
        let mut path = parent_path;
        path.push(1);
        edges.push((
            path,
            Edge {
                edge_id: EdgeId::root(0), // rewritten at assembly
                source: parent.destination.clone(),
                destination: pick_microservice(cfg.microservices, rng),
                comm_type: weighted(COMM_TYPES, rng).to_string(),
                start_ms: start,
                finish_ms: start + duration,
            },
        ));
    }

    // Extra edges under random parents.
    let extras = rng.gen_range(0..=cfg.max_extra_edges);
    for _ in 0..extras {
        let parent_slot = rng.gen_range(0..edges.len());
        let (parent_path, parent) = {
            let (p, e) = &edges[parent_slot];
            (p.clone(), e.clone())
        };
        if parent_path.len() as u32 >= cfg.max_depth {
            continue;
        }
        let window = parent.finish_ms - parent.start_ms;
        let start = parent.start_ms + if window > 0 { rng.gen_range(0..=window) } else { 0 };
        let duration = if parent.finish_ms > start {
            rng.gen_range(0..=(parent.finish_ms - start))
        } else {
            0
        };
        // Occasionally reuse a sibling's destination so layers carry
        // repeated destinations.
        let destination = if rng.gen_bool(0.15) {
            parent.destination.clone()
        } else {
            pick_microservice(cfg.microservices, rng)
        };
        let next_index = edges
            .iter()
            .filter(|(p, _)| p.len() == parent_path.len() + 1 && p[..parent_path.len()] == parent_path[..])
            .count() as u64
            + 1;
        let mut path = parent_path;
        path.push(next_index);
        edges.push((
            path,
            Edge {
                edge_id: EdgeId::root(0),
                source: parent.destination.clone(),
                destination,
                comm_type: weighted(COMM_TYPES, rng).to_string(),
                start_ms: start,
                finish_ms: start + duration,
            },
        ));
    }

    let mut final_edges: Vec<Edge> = edges
        .into_iter()
        .map(|(path, mut e)| {
            e.edge_id = EdgeId::new(path).expect("non-empty path");
            e
        })
        .collect();
    final_edges.sort_by(|a, b| a.edge_id.cmp(&b.edge_id));
    let graph = CallGraph {
        trace_id: format!("fixture_{:06}", index),
        service_id: service,
        edges: final_edges,
    }
    .canonicalized();
    debug_assert!(check_structure(&graph).is_valid());
    graph
}

/// Renders graphs as a tabular trace file (Alibaba-shaped columns). Root
/// sources are logged under the `USER` alias, timestamps sit on an absolute
/// base, rows are shuffled within each trace, and every seventh graph gets
/// its sibling ids renumbered in reverse so ingestion has to canonicalize.
pub fn trace_csv(graphs: &[CallGraph], seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out =
        String::from("timestamp,traceid,service,rpc_id,rpctype,um,uminstanceid,dm,dminstanceid,interface,rt\n");
    for (i, g) in graphs.iter().enumerate() {
        let g = if i % 7 == 3 {
            reverse_sibling_ids(g)
        } else {
            g.clone()
        };
        let base: u64 = 1_700_000_000_000 + (i as u64) * 100_000;
        let mut rows: Vec<String> = g
            .edges
            .iter()
            .map(|e| {
                let um = if e.source.is_client() {
                    "USER".to_string()
                } else {
                    e.source.to_string()
                };
                format!(
                    "{},{},{},{},{},{},{}_inst,{},{}_inst,iface,{}",
                    base + e.start_ms,
                    g.trace_id,
                    g.service_id,
                    e.edge_id,
                    e.comm_type.to_lowercase(),
                    um,
                    um,
                    e.destination,
                    e.destination,
                    e.finish_ms - e.start_ms,
                )
            })
            .collect();
        rows.shuffle(&mut rng);
        for row in rows {
            out.push_str(&row);
            out.push('\n');
        }
    }
    out
}

/// Renumbers every sibling group in reverse order: still a valid graph, but
/// not in canonical sibling order.
fn reverse_sibling_ids(g: &CallGraph) -> CallGraph {
    use std::collections::HashMap;
    let mut children: HashMap<&[u64], Vec<&Edge>> = HashMap::new();
    let mut root = None;
    for e in &g.edges {
        match e.edge_id.parent() {
            Some(p) => children
                .entry(&e.edge_id.components()[..p.depth()])
                .or_default()
                .push(e),
            None => root = Some(e),
        }
    }
    let Some(root) = root else {
        return g.clone();
    };
    let mut out = Vec::with_capacity(g.edges.len());
    let mut stack = vec![(root, EdgeId::root(0))];
    while let Some((edge, new_id)) = stack.pop() {
        if let Some(kids) = children.get(edge.edge_id.components()) {
            let n = kids.len();
            for (j, kid) in kids.iter().enumerate() {
                stack.push((kid, new_id.child((n - j) as u64)));
            }
        }
        let mut e = edge.clone();
        e.edge_id = new_id;
        out.push(e);
    }
    out.sort_by(|a, b| a.edge_id.cmp(&b.edge_id));
    CallGraph {
        trace_id: g.trace_id.clone(),
        service_id: g.service_id.clone(),
        edges: out,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{assemble_graphs, parse_trace_file, ColumnSchema};
    use crate::model::canonical_hash;

    #[test]
    fn fixtures_are_valid_and_deterministic() {
        let cfg = FixtureConfig {
            graphs: 50,
            ..FixtureConfig::default()
        };
        let a = fixture_graphs(&cfg);
        let b = fixture_graphs(&cfg);
        assert_eq!(a, b);
        for g in &a {
            assert!(check_structure(g).is_valid());
            assert_eq!(g.root().start_ms, 0);
        }
        // Shape diversity: at least three distinct depths and some branching.
        let depths: std::collections::HashSet<u32> =
            a.iter().map(|g| g.attributes().depth).collect();
        assert!(depths.len() >= 3);
        assert!(a.iter().any(|g| g.edges.len() > g.attributes().depth as usize));
    }

    #[test]
    fn csv_roundtrip_preserves_structure() {
        let cfg = FixtureConfig {
            graphs: 30,
            ..FixtureConfig::default()
        };
        let graphs = fixture_graphs(&cfg);
        let csv = trace_csv(&graphs, 3);
        let reader = parse_trace_file(csv.as_bytes(), &ColumnSchema::default()).unwrap();
        let (ingested, summary) = assemble_graphs(reader);
        assert_eq!(summary.total_graphs_rejected(), 0, "{summary}");
        assert_eq!(ingested.len(), graphs.len());
        // Ingestion canonicalizes, so hashes match the canonical fixtures
        // even for the reverse-numbered traces.
        for (a, b) in ingested.iter().zip(&graphs) {
            assert_eq!(canonical_hash(a), canonical_hash(b), "trace {}", b.trace_id);
        }
    }
}
