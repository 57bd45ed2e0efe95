//! Similarity and accuracy metrics between real and synthetic trace corpora:
//! popular-call KL divergence, heavy-hitter overlap, normalized earth mover's
//! distance, degree distributions, memorization rate, and the generation
//! accuracy grid.
//!
//! All metrics are deterministic given their inputs; multi-run protocols vary
//! only through explicit seeds.

use std::collections::{BTreeMap, HashSet};
use std::ops::RangeInclusive;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::generate::{
    recursive_generate, CompletionBackend, CompletionParams, GenerationLimits,
};
use crate::ingest::CallTriple;
use crate::model::{CallGraph, Digest, LayerConditions, NodeId};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("need {needed} distinct microservices, found {found}")]
    InsufficientSupport { needed: usize, found: usize },
    #[error("empty sample set")]
    EmptySamples,
}

/// A frequency distribution over call triples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CallDistribution {
    pub support: Vec<CallTriple>,
    pub probs: Vec<f64>,
}

fn triple_counts(graphs: &[CallGraph]) -> BTreeMap<CallTriple, u64> {
    let mut counts = BTreeMap::new();
    for g in graphs {
        for e in &g.edges {
            *counts.entry(CallTriple::of_edge(e)).or_default() += 1;
        }
    }
    counts
}

/// The `top_n` most frequent call triples of the corpus, renormalized. Ties
/// break lexicographically on the triple.
pub fn popular_call_distribution(
    graphs: &[CallGraph],
    top_n: usize,
) -> Result<CallDistribution, MetricError> {
    if graphs.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    let counts = triple_counts(graphs);
    let mut entries: Vec<(&CallTriple, u64)> = counts.iter().map(|(t, &c)| (t, c)).collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    entries.truncate(top_n.max(1));
    let total: u64 = entries.iter().map(|(_, c)| c).sum();
    Ok(CallDistribution {
        support: entries.iter().map(|(t, _)| (*t).clone()).collect(),
        probs: entries
            .iter()
            .map(|(_, c)| *c as f64 / total as f64)
            .collect(),
    })
}

/// KL(P || Q) over the real corpus's `top_n` support, natural log. Synthetic
/// probabilities are restricted to that support, renormalized, floored at
/// `eps`, and renormalized again so missing triples stay finite.
pub fn kl_popular_calls(
    real: &[CallGraph],
    synthetic: &[CallGraph],
    top_n: usize,
    eps: f64,
) -> Result<f64, MetricError> {
    if synthetic.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    let p = popular_call_distribution(real, top_n)?;
    let syn_counts = triple_counts(synthetic);
    let raw: Vec<f64> = p
        .support
        .iter()
        .map(|t| syn_counts.get(t).copied().unwrap_or(0) as f64)
        .collect();
    let total: f64 = raw.iter().sum();
    let mut q: Vec<f64> = if total > 0.0 {
        raw.iter().map(|c| (c / total).max(eps)).collect()
    } else {
        vec![eps; raw.len()]
    };
    let qsum: f64 = q.iter().sum();
    for v in &mut q {
        *v /= qsum;
    }
    Ok(p
        .probs
        .iter()
        .zip(&q)
        .map(|(&pi, &qi)| pi * (pi / qi).ln())
        .sum())
}

fn invocation_counts(graphs: &[CallGraph]) -> BTreeMap<NodeId, u64> {
    let mut counts = BTreeMap::new();
    for g in graphs {
        for e in &g.edges {
            if !e.destination.is_client() {
                *counts.entry(e.destination.clone()).or_default() += 1;
            }
        }
    }
    counts
}

fn top_k_invoked(counts: &BTreeMap<NodeId, u64>, k: usize) -> Vec<NodeId> {
    let mut entries: Vec<(&NodeId, u64)> = counts.iter().map(|(n, &c)| (n, c)).collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    entries.truncate(k);
    entries.into_iter().map(|(n, _)| n.clone()).collect()
}

/// Overlap fraction of the top-K most-invoked microservices (ranked by
/// appearances as an edge destination) between the two corpora.
pub fn heavy_hitter_similarity(
    real: &[CallGraph],
    synthetic: &[CallGraph],
    k: usize,
) -> Result<f64, MetricError> {
    let real_counts = invocation_counts(real);
    let syn_counts = invocation_counts(synthetic);
    for counts in [&real_counts, &syn_counts] {
        if counts.len() < k {
            return Err(MetricError::InsufficientSupport {
                needed: k,
                found: counts.len(),
            });
        }
    }
    let real_top: HashSet<NodeId> = top_k_invoked(&real_counts, k).into_iter().collect();
    let syn_top = top_k_invoked(&syn_counts, k);
    let overlap = syn_top.iter().filter(|n| real_top.contains(n)).count();
    Ok(overlap as f64 / k as f64)
}

/// Multi-run heavy-hitter protocol: each run bootstraps the synthetic corpus
/// (same size, sampled with replacement) and reports the mean and standard
/// error over runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeavyHitterRuns {
    pub k: usize,
    pub runs: u32,
    pub mean: f64,
    pub stderr: f64,
    pub values: Vec<f64>,
}

pub fn heavy_hitter_runs(
    real: &[CallGraph],
    synthetic: &[CallGraph],
    k: usize,
    runs: u32,
    seed: u64,
) -> Result<HeavyHitterRuns, MetricError> {
    if synthetic.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    let mut values = Vec::with_capacity(runs as usize);
    for r in 0..runs.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(u64::from(r)));
        let resampled: Vec<CallGraph> = (0..synthetic.len())
            .map(|_| synthetic[rng.gen_range(0..synthetic.len())].clone())
            .collect();
        values.push(heavy_hitter_similarity(real, &resampled, k)?);
    }
    let (mean, stderr) = mean_stderr(&values);
    Ok(HeavyHitterRuns {
        k,
        runs: runs.max(1),
        mean,
        stderr,
        values,
    })
}

/// Sample mean and standard error.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// One-dimensional earth mover's distance between two empirical
/// distributions (the area between their CDFs), normalized by the pooled
/// value range. Zero when the pooled range is zero. Always in [0, 1].
pub fn emd_normalized(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::EmptySamples);
    }
    let mut xs: Vec<f64> = a.iter().chain(b).copied().collect();
    xs.sort_by(|x, y| x.partial_cmp(y).expect("finite samples"));
    let (min, max) = (xs[0], xs[xs.len() - 1]);
    let range = max - min;
    if range == 0.0 {
        return Ok(0.0);
    }
    xs.dedup();

    let mut sa: Vec<f64> = a.to_vec();
    let mut sb: Vec<f64> = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).expect("finite samples"));
    sb.sort_by(|x, y| x.partial_cmp(y).expect("finite samples"));

    let mut area = 0.0;
    let (mut ia, mut ib) = (0usize, 0usize);
    for w in xs.windows(2) {
        while ia < sa.len() && sa[ia] <= w[0] {
            ia += 1;
        }
        while ib < sb.len() && sb[ib] <= w[0] {
            ib += 1;
        }
        let fa = ia as f64 / sa.len() as f64;
        let fb = ib as f64 / sb.len() as f64;
        area += (fa - fb).abs() * (w[1] - w[0]);
    }
    Ok(area / range)
}

/// Per-microservice communication totals across the corpus: counts received
/// (in-degree) and initiated (out-degree), as numeric sample sets for
/// [`emd_normalized`]. The reserved `Client` node is not a microservice and
/// is excluded.
pub fn degree_distributions(graphs: &[CallGraph]) -> Result<(Vec<f64>, Vec<f64>), MetricError> {
    if graphs.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    let mut in_deg: BTreeMap<NodeId, u64> = BTreeMap::new();
    let mut out_deg: BTreeMap<NodeId, u64> = BTreeMap::new();
    for g in graphs {
        for e in &g.edges {
            if !e.destination.is_client() {
                *in_deg.entry(e.destination.clone()).or_default() += 1;
            }
            if !e.source.is_client() {
                *out_deg.entry(e.source.clone()).or_default() += 1;
            }
        }
    }
    Ok((
        in_deg.values().map(|&c| c as f64).collect(),
        out_deg.values().map(|&c| c as f64).collect(),
    ))
}

/// Pooled per-edge durations, for the response-time EMD.
pub fn response_time_samples(graphs: &[CallGraph]) -> Vec<f64> {
    graphs
        .iter()
        .flat_map(|g| g.edges.iter().map(|e| e.duration_ms() as f64))
        .collect()
}

/// Fraction of synthetic graphs whose canonical hash appears in the training
/// set.
pub fn memorization_rate(synthetic: &[CallGraph], training_hashes: &HashSet<Digest>) -> f64 {
    if synthetic.is_empty() {
        return 0.0;
    }
    let hits = synthetic
        .iter()
        .filter(|g| training_hashes.contains(&crate::model::canonical_hash(g)))
        .count();
    hits as f64 / synthetic.len() as f64
}

// ---------------------------------------------------------------------------
// Accuracy grid
// ---------------------------------------------------------------------------

/// Result of one grid session.
#[derive(Clone, Debug)]
pub struct CellOutcome {
    pub valid: bool,
    /// Diagnostic note (backend error, violation codes) recorded as a cell
    /// annotation.
    pub note: Option<String>,
}

/// Supplies and runs one generation session per (num_edges, depth, sample)
/// coordinate. `None` marks an uncovered coordinate (no prompt available),
/// which is excluded from the cell's denominator.
pub trait GridSessionProvider: Sync {
    fn run_cell_sample(&self, num_edges: u64, depth: u32, sample: u32) -> Option<CellOutcome>;

    /// Whether sessions may run in parallel.
    fn concurrent(&self) -> bool {
        false
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub num_edges: u64,
    pub depth: u32,
    /// Valid fraction over attempted sessions.
    pub fraction: f64,
    pub attempted: u32,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub annotation: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyGrid {
    pub samples_per_cell: u32,
    pub cells: Vec<GridCell>,
}

impl AccuracyGrid {
    pub fn cell(&self, num_edges: u64, depth: u32) -> Option<&GridCell> {
        self.cells
            .iter()
            .find(|c| c.num_edges == num_edges && c.depth == depth)
    }

    /// CSV heatmap: one row per depth, one column per edge count.
    pub fn to_csv(&self) -> String {
        let mut edges: Vec<u64> = self.cells.iter().map(|c| c.num_edges).collect();
        edges.sort_unstable();
        edges.dedup();
        let mut depths: Vec<u32> = self.cells.iter().map(|c| c.depth).collect();
        depths.sort_unstable();
        depths.dedup();

        let mut out = String::from("depth\\num_edges");
        for e in &edges {
            out.push_str(&format!(",{e}"));
        }
        out.push('\n');
        for d in &depths {
            out.push_str(&d.to_string());
            for e in &edges {
                match self.cell(*e, *d) {
                    Some(cell) if cell.attempted > 0 => {
                        out.push_str(&format!(",{:.4}", cell.fraction))
                    }
                    _ => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Runs `samples_per_cell` sessions for every (num_edges, depth) cell and
/// records the valid fraction. Cells run in parallel when the provider
/// allows it; per-cell results are deterministic because session seeds
/// derive from the coordinates.
pub fn accuracy_grid(
    provider: &dyn GridSessionProvider,
    edges_range: RangeInclusive<u64>,
    depth_range: RangeInclusive<u32>,
    samples_per_cell: u32,
) -> AccuracyGrid {
    let coords: Vec<(u64, u32)> = edges_range
        .flat_map(|n| depth_range.clone().map(move |d| (n, d)))
        .collect();

    let run_cell = |&(n, d): &(u64, u32)| -> GridCell {
        let mut attempted = 0u32;
        let mut valid = 0u32;
        let mut annotation = None;
        for i in 0..samples_per_cell {
            match provider.run_cell_sample(n, d, i) {
                None => continue,
                Some(outcome) => {
                    attempted += 1;
                    if outcome.valid {
                        valid += 1;
                    } else if annotation.is_none() {
                        annotation = outcome.note;
                    }
                }
            }
        }
        GridCell {
            num_edges: n,
            depth: d,
            fraction: if attempted > 0 {
                f64::from(valid) / f64::from(attempted)
            } else {
                0.0
            },
            attempted,
            annotation,
        }
    };

    let cells: Vec<GridCell> = if provider.concurrent() {
        coords.par_iter().map(run_cell).collect()
    } else {
        coords.iter().map(run_cell).collect()
    };
    AccuracyGrid {
        samples_per_cell,
        cells,
    }
}

/// Grid provider that prompts one backend with synthetic conditions built
/// from each cell's (num_edges, depth) plus fixed service, start node, and
/// latency budget.
pub struct BackendGridProvider<'a> {
    pub backend: &'a dyn CompletionBackend,
    pub params: CompletionParams,
    pub limits: GenerationLimits,
    pub service_id: NodeId,
    pub start_node: NodeId,
    pub latency_ms: u64,
}

impl<'a> BackendGridProvider<'a> {
    pub fn new(backend: &'a dyn CompletionBackend, service_id: NodeId) -> Self {
        BackendGridProvider {
            backend,
            params: CompletionParams::default(),
            limits: GenerationLimits {
                max_retries: 0,
                ..GenerationLimits::default()
            },
            service_id,
            start_node: NodeId::client(),
            latency_ms: 10_000,
        }
    }

    fn prompt(&self, num_edges: u64, depth: u32) -> LayerConditions {
        LayerConditions {
            start_node: self.start_node.clone(),
            caller: self.start_node.clone(),
            remaining_depth: depth,
            num_edges,
            start_edge_id: 0,
            latency_ms: self.latency_ms,
            start_communication_at_ms: 0,
            service_id: self.service_id.clone(),
            parent_edge_id: None,
        }
    }
}

fn mix64(mut x: u64) -> u64 {
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

impl GridSessionProvider for BackendGridProvider<'_> {
    fn run_cell_sample(&self, num_edges: u64, depth: u32, sample: u32) -> Option<CellOutcome> {
        let params = CompletionParams {
            seed: mix64(
                self.params
                    .seed
                    .wrapping_add(num_edges.wrapping_mul(0x9e37_79b9))
                    .wrapping_add(u64::from(depth) << 32)
                    .wrapping_add(u64::from(sample)),
            ),
            ..self.params.clone()
        };
        match recursive_generate(self.backend, self.prompt(num_edges, depth), &params, &self.limits)
        {
            Ok(_) => Some(CellOutcome {
                valid: true,
                note: None,
            }),
            Err(failure) => Some(CellOutcome {
                valid: false,
                note: Some(format!("{:?}", failure.reason)),
            }),
        }
    }

    fn concurrent(&self) -> bool {
        self.backend.supports_concurrent_sessions()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_graph, canonical_hash, EdgeRecord};

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

    fn one_edge(trace: &str, dst: &str, t: &str) -> CallGraph {
        build_graph(
            trace,
            NodeId::new("S_1").unwrap(),
            [rec("0", "Client", dst, t, 0, 10)],
        )
        .unwrap()
    }

    #[test]
    fn popular_calls_counting_and_ties() {
        let graphs = vec![
            one_edge("a", "MS_1", "RPC"),
            one_edge("b", "MS_1", "RPC"),
            one_edge("c", "MS_1", "RPC"),
            one_edge("d", "MS_2", "DB"),
        ];
        let dist = popular_call_distribution(&graphs, 2).unwrap();
        assert_eq!(dist.probs, vec![0.75, 0.25]);
        let top1 = popular_call_distribution(&graphs, 1).unwrap();
        assert_eq!(top1.probs, vec![1.0]);
        assert_eq!(top1.support[0].destination.as_str(), "MS_1");

        let single = popular_call_distribution(&[one_edge("a", "MS_9", "RPC")], 10).unwrap();
        assert_eq!(single.probs, vec![1.0]);
    }

    #[test]
    fn kl_matches_direct_evaluation() {
        // P = {a: 0.75, b: 0.25}, Q = {a: 0.5, b: 0.5}.
        let real = vec![
            one_edge("a", "MS_1", "RPC"),
            one_edge("b", "MS_1", "RPC"),
            one_edge("c", "MS_1", "RPC"),
            one_edge("d", "MS_2", "DB"),
        ];
        let synthetic = vec![
            one_edge("a", "MS_1", "RPC"),
            one_edge("b", "MS_2", "DB"),
        ];
        let kl = kl_popular_calls(&real, &synthetic, 100, 1e-6).unwrap();
        let expected = 0.75 * (0.75f64 / 0.5).ln() + 0.25 * (0.25f64 / 0.5).ln();
        assert!((kl - expected).abs() < 1e-9);

        // Self-comparison is zero.
        let kl = kl_popular_calls(&real, &real, 100, 1e-6).unwrap();
        assert!(kl.abs() < 1e-9);

        // Missing support stays finite through the eps floor.
        let disjoint = vec![one_edge("z", "MS_9", "MC")];
        let kl = kl_popular_calls(&real, &disjoint, 100, 1e-6).unwrap();
        assert!(kl.is_finite() && kl > 0.0);
    }

    #[test]
    fn heavy_hitters() {
        let real = vec![
            one_edge("a", "MS_1", "RPC"),
            one_edge("b", "MS_1", "RPC"),
            one_edge("c", "MS_2", "RPC"),
        ];
        assert_eq!(heavy_hitter_similarity(&real, &real, 2).unwrap(), 1.0);

        let synthetic = vec![
            one_edge("a", "MS_1", "RPC"),
            one_edge("b", "MS_1", "RPC"),
            one_edge("c", "MS_3", "RPC"),
        ];
        assert_eq!(heavy_hitter_similarity(&real, &synthetic, 2).unwrap(), 0.5);
        assert!(heavy_hitter_similarity(&real, &synthetic, 5).is_err());

        // Duplicating every graph does not move the metric.
        let mut doubled = real.clone();
        doubled.extend(real.clone());
        assert_eq!(
            heavy_hitter_similarity(&real, &doubled, 2).unwrap(),
            heavy_hitter_similarity(&real, &real, 2).unwrap()
        );
    }

    #[test]
    fn emd_examples() {
        assert_eq!(emd_normalized(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(emd_normalized(&[0.0, 1.0], &[1.0, 0.0]).unwrap(), 0.0);
        let same = emd_normalized(&[3.0, 5.0, 9.0], &[3.0, 5.0, 9.0]).unwrap();
        assert_eq!(same, 0.0);
        assert_eq!(emd_normalized(&[4.0], &[4.0]).unwrap(), 0.0);
        assert!(emd_normalized(&[], &[1.0]).is_err());
    }

    #[test]
    fn degree_samples() {
        let g = build_graph(
            "t",
            NodeId::new("S_1").unwrap(),
            [
                rec("0", "Client", "MS_1", "RPC", 0, 10),
                rec("0.1", "MS_1", "MS_2", "RPC", 1, 5),
            ],
        )
        .unwrap();
        let (in_deg, out_deg) = degree_distributions(&[g]).unwrap();
        // In: MS_1 and MS_2 each invoked once. Out: MS_1 initiated once
        // (Client excluded).
        assert_eq!(in_deg, vec![1.0, 1.0]);
        assert_eq!(out_deg, vec![1.0]);
    }

    #[test]
    fn memorization() {
        let graphs: Vec<CallGraph> = (0..10)
            .map(|i| one_edge(&format!("t{i}"), &format!("MS_{i}"), "RPC"))
            .collect();
        let hashes: HashSet<Digest> = graphs.iter().map(canonical_hash).collect();
        assert_eq!(memorization_rate(&graphs, &hashes), 1.0);

        let mut perturbed = graphs.clone();
        for g in &mut perturbed {
            for e in &mut g.edges {
                e.finish_ms += 1;
            }
        }
        assert_eq!(memorization_rate(&perturbed, &hashes), 0.0);

        let mixed: Vec<CallGraph> = graphs[..3]
            .iter()
            .cloned()
            .chain(perturbed[..7].iter().cloned())
            .collect();
        assert!((memorization_rate(&mixed, &hashes) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn grid_counts_and_csv() {
        struct EvenValid;
        impl GridSessionProvider for EvenValid {
            fn run_cell_sample(&self, n: u64, d: u32, _s: u32) -> Option<CellOutcome> {
                if d > 2 {
                    return None;
                }
                Some(CellOutcome {
                    valid: n % 2 == 0,
                    note: None,
                })
            }
        }
        let grid = accuracy_grid(&EvenValid, 1..=4, 1..=3, 5);
        assert_eq!(grid.cell(2, 1).unwrap().fraction, 1.0);
        assert_eq!(grid.cell(3, 2).unwrap().fraction, 0.0);
        assert_eq!(grid.cell(3, 3).unwrap().attempted, 0);
        let csv = grid.to_csv();
        assert!(csv.starts_with("depth\\num_edges,1,2,3,4"));
    }
}
