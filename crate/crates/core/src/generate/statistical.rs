//! The probabilistic baseline generator and the statistical text backend.
//!
//! Both are driven by a [`ProbModel`] fitted from corpus statistics: child
//! counts per depth level, communication types, response times per type, and
//! destinations conditioned on (source, type). The baseline samples whole
//! graphs top-down; the text backend answers layer prompts with
//! budget-feasible layers so the full recursive pipeline runs with no model
//! hosting at all.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::backend::{BackendError, CompletionBackend};
use super::CompletionParams;
use crate::codec::encode_layer;
use crate::ingest::{CorpusStats, Discrete, StatsError};
use crate::model::{CallGraph, Edge, EdgeId, LayerConditions, LayerEdge, NodeId};

use std::collections::BTreeMap;

/// Weighted categorical distribution with temperature and top-k sampling.
#[derive(Clone, Debug)]
pub struct WeightedChoice<T> {
    items: Vec<T>,
    probs: Vec<f64>,
}

impl<T: Clone> WeightedChoice<T> {
    fn new(items: Vec<T>, probs: Vec<f64>) -> Option<Self> {
        if items.is_empty() || items.len() != probs.len() {
            return None;
        }
        Some(WeightedChoice { items, probs })
    }

    fn from_discrete<U: Ord + Clone>(d: &Discrete<U>) -> Option<WeightedChoice<U>> {
        WeightedChoice::new(d.items.clone(), d.probs.clone())
    }

    /// The most probable item; first on ties, so deterministic.
    fn argmax(&self) -> T {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        self.items[best].clone()
    }

    /// Plain draw at temperature 1 with no truncation.
    fn sample(&self, rng: &mut impl Rng) -> T {
        self.sample_with(1.0, None, rng)
    }

    /// Draw with temperature scaling (`p^(1/t)`) and optional top-k
    /// truncation. Temperature 0 is greedy.
    fn sample_with(&self, temperature: f64, top_k: Option<u32>, rng: &mut impl Rng) -> T {
        if temperature <= 0.0 {
            return self.argmax();
        }
        let mut indexed: Vec<(usize, f64)> = self
            .probs
            .iter()
            .enumerate()
            .map(|(i, &p)| (i, p.max(0.0).powf(1.0 / temperature)))
            .collect();
        if let Some(k) = top_k {
            indexed.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            indexed.truncate((k as usize).max(1));
        }
        let total: f64 = indexed.iter().map(|(_, w)| w).sum();
        if total <= 0.0 {
            return self.argmax();
        }
        let mut u = rng.gen::<f64>() * total;
        for (i, w) in &indexed {
            u -= w;
            if u <= 0.0 {
                return self.items[*i].clone();
            }
        }
        self.items[indexed.last().unwrap().0].clone()
    }
}

/// Sampling distributions fitted from corpus statistics.
pub struct ProbModel {
    child_count_by_level: BTreeMap<u32, WeightedChoice<u64>>,
    /// Level-agnostic child-count distribution for layer prompts that carry
    /// no absolute level.
    child_count_any: WeightedChoice<u64>,
    comm_types: WeightedChoice<String>,
    response_time_by_type: BTreeMap<String, WeightedChoice<u64>>,
    response_time_any: WeightedChoice<u64>,
    /// Destinations conditioned on (source, comm type). Pairs unseen in the
    /// corpus have no entry and fall back to the aggregate distribution.
    destinations: BTreeMap<(NodeId, String), WeightedChoice<NodeId>>,
    destinations_any: WeightedChoice<NodeId>,
    services: WeightedChoice<NodeId>,
}

impl ProbModel {
    fn child_count(&self, level: u32) -> &WeightedChoice<u64> {
        self.child_count_by_level
            .get(&level)
            .unwrap_or(&self.child_count_any)
    }

    fn response_time(&self, comm_type: &str) -> &WeightedChoice<u64> {
        self.response_time_by_type
            .get(comm_type)
            .unwrap_or(&self.response_time_any)
    }

    fn destination(&self, source: &NodeId, comm_type: &str) -> &WeightedChoice<NodeId> {
        self.destinations
            .get(&(source.clone(), comm_type.to_string()))
            .unwrap_or(&self.destinations_any)
    }
}

/// Normalizes corpus statistics into sampling distributions.
pub fn fit_probabilistic(stats: &CorpusStats) -> Result<ProbModel, StatsError> {
    if stats.total_graphs == 0 || stats.total_edges == 0 {
        return Err(StatsError::EmptyCorpus);
    }
    let mut child_count_by_level = BTreeMap::new();
    let mut child_any_counts: BTreeMap<u64, u64> = BTreeMap::new();
    for (level, dist) in &stats.child_count_dist {
        if let Some(w) = WeightedChoice::<u64>::from_discrete(dist) {
            child_count_by_level.insert(*level, w);
        }
        for (item, prob) in dist.items.iter().zip(&dist.probs) {
            // Aggregate by probability mass scaled to a common resolution.
            *child_any_counts.entry(*item).or_default() += (prob * 1e6) as u64 + 1;
        }
    }
    let child_count_any = WeightedChoice::from_discrete(
        &Discrete::from_counts(&child_any_counts).ok_or(StatsError::EmptyCorpus)?,
    )
    .ok_or(StatsError::EmptyCorpus)?;

    let comm_types = WeightedChoice::<String>::from_discrete(&stats.comm_type_dist)
        .ok_or(StatsError::EmptyCorpus)?;

    let mut response_time_by_type = BTreeMap::new();
    let mut rt_any: BTreeMap<u64, u64> = BTreeMap::new();
    for (t, dist) in &stats.response_time_dist {
        if let Some(w) = WeightedChoice::<u64>::from_discrete(dist) {
            response_time_by_type.insert(t.clone(), w);
        }
        for (item, prob) in dist.items.iter().zip(&dist.probs) {
            *rt_any.entry(*item).or_default() += (prob * 1e6) as u64 + 1;
        }
    }
    let response_time_any = WeightedChoice::from_discrete(
        &Discrete::from_counts(&rt_any).ok_or(StatsError::EmptyCorpus)?,
    )
    .ok_or(StatsError::EmptyCorpus)?;

    let mut by_pair: BTreeMap<(NodeId, String), BTreeMap<NodeId, u64>> = BTreeMap::new();
    let mut dest_any: BTreeMap<NodeId, u64> = BTreeMap::new();
    for (triple, count) in &stats.call_freq {
        *by_pair
            .entry((triple.source.clone(), triple.comm_type.clone()))
            .or_default()
            .entry(triple.destination.clone())
            .or_default() += count;
        *dest_any.entry(triple.destination.clone()).or_default() += count;
    }
    let destinations = by_pair
        .into_iter()
        .filter_map(|(pair, counts)| {
            let d = Discrete::from_counts(&counts)?;
            Some((pair, WeightedChoice::<NodeId>::from_discrete(&d)?))
        })
        .collect();
    let destinations_any = WeightedChoice::from_discrete(
        &Discrete::from_counts(&dest_any).ok_or(StatsError::EmptyCorpus)?,
    )
    .ok_or(StatsError::EmptyCorpus)?;

    let services = WeightedChoice::from_discrete(
        &Discrete::from_counts(&stats.service_graph_count).ok_or(StatsError::EmptyCorpus)?,
    )
    .ok_or(StatsError::EmptyCorpus)?;

    Ok(ProbModel {
        child_count_by_level,
        child_count_any,
        comm_types,
        response_time_by_type,
        response_time_any,
        destinations,
        destinations_any,
        services,
    })
}

/// Draws a duration that fits the window, resampling up to 8 times and then
/// clamping.
fn fitted_duration(
    dist: &WeightedChoice<u64>,
    window: u64,
    rng: &mut impl Rng,
) -> u64 {
    for _ in 0..8 {
        let d = dist.sample(rng);
        if d <= window {
            return d;
        }
    }
    dist.sample(rng).min(window)
}

/// Hidden guard against runaway fan-out on degenerate fitted models.
const MAX_SAMPLED_EDGES: usize = 100_000;

/// Samples one call graph top-down: per level draw the child count, then per
/// child a communication type, destination, and response time, nesting every
/// child interval inside its parent. `root` is the root edge's source
/// (normally `Client`). The result always passes the structural check.
pub fn sample_probabilistic(
    model: &ProbModel,
    root: &NodeId,
    max_depth: u32,
    seed: u64,
) -> CallGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let service = model.services.sample(&mut rng);

    let root_type = model.comm_types.sample(&mut rng);
    let root_dest = model.destination(root, &root_type).sample(&mut rng);
    let root_duration = model.response_time(&root_type).sample(&mut rng);
    let root_edge = Edge {
        edge_id: EdgeId::root(0),
        source: root.clone(),
        destination: root_dest,
        comm_type: root_type,
        start_ms: 0,
        finish_ms: root_duration,
    };

    let mut edges = vec![root_edge];
    let mut frontier = vec![0usize]; // indices into `edges` at the current level
    let mut level = 1u32;
    while !frontier.is_empty() && level < max_depth && edges.len() < MAX_SAMPLED_EDGES {
        let mut next = Vec::new();
        for parent_idx in frontier {
            let parent = edges[parent_idx].clone();
            let count = model.child_count(level).sample(&mut rng) as usize;
            let mut kids = Vec::with_capacity(count);
            for _ in 0..count {
                if edges.len() + kids.len() >= MAX_SAMPLED_EDGES {
                    break;
                }
                let t = model.comm_types.sample(&mut rng);
                let dest = model.destination(&parent.destination, &t).sample(&mut rng);
                let window = parent.finish_ms - parent.start_ms;
                let duration = fitted_duration(model.response_time(&t), window, &mut rng);
                let start = parent.start_ms + sample_offset(window - duration, &mut rng);
                kids.push(Edge {
                    edge_id: EdgeId::root(0), // assigned after sibling ordering
                    source: parent.destination.clone(),
                    destination: dest,
                    comm_type: t,
                    start_ms: start,
                    finish_ms: start + duration,
                });
            }
            kids.sort_by(|a, b| {
                a.start_ms
                    .cmp(&b.start_ms)
                    .then_with(|| a.destination.cmp(&b.destination))
            });
            for (k, mut kid) in kids.into_iter().enumerate() {
                kid.edge_id = parent.edge_id.child(k as u64 + 1);
                edges.push(kid);
                next.push(edges.len() - 1);
            }
        }
        frontier = next;
        level += 1;
    }

    edges.sort_by(|a, b| a.edge_id.cmp(&b.edge_id));
    CallGraph {
        trace_id: String::new(),
        service_id: service,
        edges,
    }
}

fn sample_offset(bound: u64, rng: &mut impl Rng) -> u64 {
    if bound == 0 {
        0
    } else {
        rng.gen_range(0..=bound)
    }
}

// ---------------------------------------------------------------------------
// Statistical text backend
// ---------------------------------------------------------------------------

/// Answers layer prompts by sampling a consistent layer and child conditions
/// from the fitted model and rendering them in the layer format. Budgets,
/// depths, and time windows are laid out to satisfy the full constraint
/// catalog, so the recursive driver completes without model hosting.
pub struct StatisticalBackend {
    model: ProbModel,
}

impl StatisticalBackend {
    pub fn new(model: ProbModel) -> Self {
        StatisticalBackend { model }
    }
}

struct ParsedPrompt {
    conds: LayerConditions,
}

fn parse_prompt(prompt: &str) -> Result<ParsedPrompt, BackendError> {
    let mut start_node = None;
    let mut caller = None;
    let mut remaining_depth = None;
    let mut num_edges = None;
    let mut start_edge_id = None;
    let mut latency = None;
    let mut start_comm = None;
    let mut service = None;
    for line in prompt.lines() {
        let Some((name, value)) = line.trim().split_once(':') else {
            continue;
        };
        let value = value.trim();
        match name.trim() {
            "start_node" => start_node = NodeId::new(value).ok(),
            "caller" => caller = NodeId::new(value).ok(),
            "remaining_depth" => remaining_depth = value.parse::<u32>().ok(),
            "num_edges" => num_edges = value.parse::<u64>().ok(),
            "start_edge_id" => start_edge_id = value.parse::<u64>().ok(),
            "latency" => latency = value.parse::<u64>().ok(),
            "start_communication_at" => start_comm = value.parse::<u64>().ok(),
            "service_id" => service = NodeId::new(value).ok(),
            _ => {}
        }
    }
    let missing = |what: &str| BackendError::UnparsablePrompt(format!("missing {what}"));
    let start_node = start_node.ok_or_else(|| missing("start_node"))?;
    Ok(ParsedPrompt {
        conds: LayerConditions {
            caller: caller.unwrap_or_else(|| start_node.clone()),
            start_node,
            remaining_depth: remaining_depth.ok_or_else(|| missing("remaining_depth"))?,
            num_edges: num_edges.ok_or_else(|| missing("num_edges"))?,
            start_edge_id: start_edge_id.ok_or_else(|| missing("start_edge_id"))?,
            latency_ms: latency.ok_or_else(|| missing("latency"))?,
            start_communication_at_ms: start_comm.unwrap_or(0),
            service_id: service.unwrap_or_else(|| NodeId::new("S_0").expect("static name")),
            parent_edge_id: None,
        },
    })
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn mix64(mut x: u64) -> u64 {
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

impl CompletionBackend for StatisticalBackend {
    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<String, BackendError> {
        let ParsedPrompt { conds } = parse_prompt(prompt)?;
        let d = conds.remaining_depth;
        let n = conds.num_edges;
        if d == 0 || n == 0 || n < u64::from(d) {
            return Err(BackendError::UnparsablePrompt(format!(
                "infeasible budget: {n} edges for depth {d}"
            )));
        }
        if conds.start_communication_at_ms > conds.latency_ms {
            return Err(BackendError::UnparsablePrompt(
                "start time after latency deadline".into(),
            ));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(mix64(params.seed ^ fnv1a(prompt)));
        let greedy = params.temperature <= 0.0;
        let model = &self.model;

        // Edge count for this layer, leaving room for a depth-(d-1) chain.
        let k = if d == 1 {
            n
        } else {
            let k_max = n - u64::from(d - 1);
            let drawn = model
                .child_count_any
                .sample_with(params.temperature, params.top_k, &mut rng);
            drawn.clamp(1, k_max)
        };
        let budget_left = n - k;

        // Edges.
        let window_end = conds.latency_ms;
        let window_start = conds.start_communication_at_ms;
        let mut edges = Vec::with_capacity(k as usize);
        for i in 0..k {
            let t = model
                .comm_types
                .sample_with(params.temperature, params.top_k, &mut rng);
            let dest = model
                .destination(&conds.start_node, &t)
                .sample_with(params.temperature, params.top_k, &mut rng);
            let window = window_end - window_start;
            let duration = if greedy {
                model.response_time(&t).argmax().min(window)
            } else {
                fitted_duration(model.response_time(&t), window, &mut rng)
            };
            let start = if greedy {
                window_start
            } else {
                window_start + sample_offset(window - duration, &mut rng)
            };
            edges.push(LayerEdge {
                flat_edge_id: conds.start_edge_id + i,
                destination: dest,
                comm_type: t,
                start_ms: start as i64,
                finish_ms: (start + duration) as i64,
            });
        }

        // Child blocks: partition the remaining budget, keeping the first
        // block on the depth-(d-1) chain.
        let mut children: Vec<LayerConditions> = Vec::new();
        if budget_left > 0 {
            let c_max = k.min(budget_left - u64::from(d - 1) + 1);
            let c = if greedy {
                1
            } else {
                model
                    .child_count_any
                    .sample_with(params.temperature, params.top_k, &mut rng)
                    .clamp(1, c_max)
            };
            let mut budgets = vec![1u64; c as usize];
            budgets[0] = u64::from(d - 1);
            let mut leftover = budget_left - budgets.iter().sum::<u64>();
            while leftover > 0 {
                let idx = if greedy {
                    0
                } else {
                    rng.gen_range(0..budgets.len())
                };
                budgets[idx] += 1;
                leftover -= 1;
            }

            let carriers: Vec<usize> = if greedy || c as usize == edges.len() {
                (0..c as usize).collect()
            } else {
                let mut idx: Vec<usize> = (0..edges.len()).collect();
                idx.shuffle(&mut rng);
                let mut chosen: Vec<usize> = idx.into_iter().take(c as usize).collect();
                chosen.sort_unstable();
                chosen
            };

            let mut next_start = conds.start_edge_id + k;
            for (b, &edge_idx) in carriers.iter().enumerate() {
                let parent = &edges[edge_idx];
                let budget = budgets[b];
                let depth = if b == 0 {
                    d - 1
                } else {
                    let cap = u64::from(d - 1).min(budget) as u32;
                    if greedy {
                        cap
                    } else {
                        rng.gen_range(1..=cap)
                    }
                };
                children.push(LayerConditions {
                    start_node: parent.destination.clone(),
                    caller: conds.start_node.clone(),
                    remaining_depth: depth,
                    num_edges: budget,
                    start_edge_id: next_start,
                    latency_ms: parent.finish_ms as u64,
                    start_communication_at_ms: parent.start_ms as u64,
                    service_id: conds.service_id.clone(),
                    parent_edge_id: Some(parent.flat_edge_id),
                });
                next_start += budget;
            }
        }

        Ok(encode_layer(&conds, &edges, &children, false))
    }

    fn supports_concurrent_sessions(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::compute_stats;
    use crate::model::{build_graph, check_structure, EdgeRecord};

    fn rec(id: &str, src: &str, dst: &str, t: &str, s: u64, f: u64) -> EdgeRecord {
        EdgeRecord {
            edge_id: id.into(),
            source: Some(src.into()),
            destination: Some(dst.into()),
            comm_type: Some(t.into()),
            start_ms: Some(s),
            finish_ms: Some(f),
        }
    }

    fn small_corpus() -> Vec<CallGraph> {
        let service = NodeId::new("S_1").unwrap();
        vec![
            build_graph(
                "a",
                service.clone(),
                [
                    rec("0", "Client", "MS_1", "HTTP", 0, 30),
                    rec("0.1", "MS_1", "MS_2", "RPC", 2, 12),
                    rec("0.2", "MS_1", "MS_3", "DB", 14, 28),
                ],
            )
            .unwrap(),
            build_graph(
                "b",
                service.clone(),
                [
                    rec("0", "Client", "MS_1", "HTTP", 0, 40),
                    rec("0.1", "MS_1", "MS_2", "RPC", 5, 25),
                    rec("0.1.1", "MS_2", "MS_4", "MC", 6, 20),
                ],
            )
            .unwrap(),
            build_graph(
                "c",
                service,
                [rec("0", "Client", "MS_5", "HTTP", 0, 8)],
            )
            .unwrap(),
        ]
    }

    #[test]
    fn fitted_model_samples_valid_graphs() {
        let stats = compute_stats(&small_corpus()).unwrap();
        let model = fit_probabilistic(&stats).unwrap();
        let client = NodeId::client();
        for seed in 0..50 {
            let g = sample_probabilistic(&model, &client, 4, seed);
            assert!(
                check_structure(&g).is_valid(),
                "invalid sample at seed {seed}"
            );
        }
    }

    #[test]
    fn max_depth_one_gives_single_edge() {
        let stats = compute_stats(&small_corpus()).unwrap();
        let model = fit_probabilistic(&stats).unwrap();
        let g = sample_probabilistic(&model, &NodeId::client(), 1, 7);
        assert_eq!(g.edges.len(), 1);
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let stats = compute_stats(&small_corpus()).unwrap();
        let model = fit_probabilistic(&stats).unwrap();
        let a = sample_probabilistic(&model, &NodeId::client(), 4, 42);
        let b = sample_probabilistic(&model, &NodeId::client(), 4, 42);
        assert_eq!(a, b);
    }

    #[test]
    fn backend_is_deterministic_per_seed_and_prompt() {
        let stats = compute_stats(&small_corpus()).unwrap();
        let backend = StatisticalBackend::new(fit_probabilistic(&stats).unwrap());
        let prompt = "start_node: Client\ncaller: Client\nremaining_depth: 2\nnum_edges: 4\nstart_edge_id: 0\nlatency: 100\nstart_communication_at: 0\n";
        let params = CompletionParams {
            temperature: 0.8,
            ..CompletionParams::default()
        };
        let a = backend.complete(prompt, &params).unwrap();
        let b = backend.complete(prompt, &params).unwrap();
        assert_eq!(a, b);

        let zero = CompletionParams {
            temperature: 0.0,
            ..CompletionParams::default()
        };
        let c = backend.complete(prompt, &zero).unwrap();
        let d = backend.complete(prompt, &zero).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn infeasible_prompt_rejected() {
        let stats = compute_stats(&small_corpus()).unwrap();
        let backend = StatisticalBackend::new(fit_probabilistic(&stats).unwrap());
        let prompt = "start_node: Client\nremaining_depth: 5\nnum_edges: 2\nstart_edge_id: 0\nlatency: 100\nstart_communication_at: 0\n";
        assert!(matches!(
            backend.complete(prompt, &CompletionParams::default()),
            Err(BackendError::UnparsablePrompt(_))
        ));
    }
}
