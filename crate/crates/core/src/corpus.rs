//! Pre-training and instruction-tuning corpus construction.
//!
//! Pre-training samples are full recursive-layer renderings with graph
//! attributes independently dropped (service id always kept) so the model
//! learns to work from any prompt subset. Instruction samples are per-layer:
//! the layer's conditions plus a natural-language restatement form the
//! prompt, and the layer body with arithmetic scratchpads forms the
//! completion. A small fraction of graphs is sampled for instruction tuning,
//! and qualifying samples carry at most one special instruction — high
//! latency or uncommon communication, never both.

use rand::seq::index::sample as index_sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{
    encode_layer_body, encode_prompt, encode_recursive_sample, encode_tabular_sample,
    AttrDropMask, TextSample, FORMAT_VERSION,
};
use crate::ingest::{CallTriple, CorpusStats};
use crate::model::{canonical_hash, decompose_layers, CallGraph, Digest, Layer};
use crate::validator::InstructionTag;

/// Fixed system prompt for instruction samples.
pub const SYSTEM_PROMPT: &str = "You are a microservice call graph generator. \
Continue the trace by producing the next call graph layer that satisfies the given conditions.";

/// High-latency instruction wording.
pub const HIGH_LATENCY_INSTRUCTION: &str = "Build a call graph with high latency";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CorpusError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("p_drop {0} outside [0, 1]")]
    InvalidPDrop(f64),
    #[error("fraction {0} outside (0, 1]")]
    InvalidFraction(f64),
}

/// Header line written at the top of every corpus file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusFileHeader {
    pub format_version: u32,
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub p_drop: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fraction: Option<f64>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub source_stats_digest: Option<String>,
}

impl CorpusFileHeader {
    pub fn new(kind: &str, seed: u64) -> Self {
        CorpusFileHeader {
            format_version: FORMAT_VERSION,
            kind: kind.to_string(),
            p_drop: None,
            fraction: None,
            seed,
            source_stats_digest: None,
        }
    }
}

/// One instruction-tuning example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstructionSample {
    pub system_prompt: String,
    pub instruction: String,
    pub output: String,
    /// Byte index into `system_prompt + instruction + output` where the
    /// completion begins; everything before it is fixed prompt, excluded
    /// from the loss.
    pub loss_mask_boundary: usize,
    pub tags: Vec<InstructionTag>,
    pub origin_hash: Digest,
}

fn per_graph_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn sample_mask(rng: &mut impl Rng, p_drop: f64) -> AttrDropMask {
    AttrDropMask {
        drop_num_edges: rng.gen::<f64>() < p_drop,
        drop_depth: rng.gen::<f64>() < p_drop,
        drop_latency: rng.gen::<f64>() < p_drop,
    }
}

/// Emits one recursive-format sample per graph, attributes independently
/// dropped with probability `p_drop` (service id always kept). Deterministic
/// under the seed; sample order follows input order.
pub fn build_pretraining_corpus(
    graphs: &[CallGraph],
    p_drop: f64,
    seed: u64,
) -> Result<impl Iterator<Item = TextSample> + '_, CorpusError> {
    if !(0.0..=1.0).contains(&p_drop) {
        return Err(CorpusError::InvalidPDrop(p_drop));
    }
    Ok(graphs.iter().enumerate().map(move |(i, g)| {
        let mut rng = per_graph_rng(seed, i as u64);
        let mask = sample_mask(&mut rng, p_drop);
        encode_recursive_sample(&g.clone().canonicalized(), &mask)
    }))
}

/// As [`build_pretraining_corpus`] but rendering the tabular whole-graph
/// format, with clause order shuffled per edge.
pub fn build_tabular_corpus(
    graphs: &[CallGraph],
    p_drop: f64,
    seed: u64,
) -> Result<impl Iterator<Item = TextSample> + '_, CorpusError> {
    if !(0.0..=1.0).contains(&p_drop) {
        return Err(CorpusError::InvalidPDrop(p_drop));
    }
    Ok(graphs.iter().enumerate().map(move |(i, g)| {
        let mut rng = per_graph_rng(seed, i as u64);
        let mask = sample_mask(&mut rng, p_drop);
        let shuffle_seed = rng.gen::<u64>();
        encode_tabular_sample(&g.clone().canonicalized(), shuffle_seed, &mask)
    }))
}

/// Which special instruction a graph's samples carry, if any.
enum TagRoute {
    None,
    HighLatency,
    /// Uncommon triples by layer index.
    Uncommon(Vec<(usize, CallTriple)>),
}

fn uncommon_layers(layers: &[Layer], stats: &CorpusStats, g: &CallGraph) -> Vec<(usize, CallTriple)> {
    let mut found = Vec::new();
    for (i, layer) in layers.iter().enumerate() {
        for e in &layer.edges {
            let triple = CallTriple {
                source: layer.conditions.start_node.clone(),
                destination: e.destination.clone(),
                comm_type: e.comm_type.clone(),
            };
            if stats.is_uncommon(&g.service_id, &triple) == Some(true) {
                found.push((i, triple));
                break;
            }
        }
    }
    found
}

fn prose_augmentation(layer: &Layer, is_first: bool, rng: &mut impl Rng) -> String {
    let c = &layer.conditions;
    let variant = rng.gen_range(0..2u8);
    if is_first {
        match variant {
            0 => format!(
                "This call graph belongs to service {}. It should contain {} edges and reach depth {}. \
                 All communication must finish within {} ms.",
                c.service_id, c.num_edges, c.remaining_depth, c.latency_ms
            ),
            _ => format!(
                "Generate a call graph for service {} with {} edges and depth {}, finishing within {} ms.",
                c.service_id, c.num_edges, c.remaining_depth, c.latency_ms
            ),
        }
    } else {
        match variant {
            0 => format!(
                "This layer starts from {}, which was called by {}. Generate {} edges here and below, \
                 with remaining depth {}.",
                c.start_node, c.caller, c.num_edges, c.remaining_depth
            ),
            _ => format!(
                "Continue from {} (called by {}); {} edges remain across depth {}.",
                c.start_node, c.caller, c.num_edges, c.remaining_depth
            ),
        }
    }
}

fn uncommon_instruction(triple: &CallTriple) -> String {
    format!(
        "Include an edge from {} to {} with {} communication type",
        triple.source, triple.destination, triple.comm_type
    )
}

/// Builds per-layer instruction samples over a sampled fraction of graphs.
///
/// Instructions carry the layer conditions, a prose restatement, and at most
/// one special instruction. Outputs carry the layer body with intermediate
/// scratchpads. A graph qualifying for both special instructions gets exactly
/// one, chosen by seeded coin flip.
pub fn build_instruction_corpus(
    graphs: &[CallGraph],
    stats: &CorpusStats,
    fraction: f64,
    seed: u64,
) -> Result<Vec<InstructionSample>, CorpusError> {
    if graphs.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CorpusError::InvalidFraction(fraction));
    }
    let count = ((fraction * graphs.len() as f64).ceil() as usize).clamp(1, graphs.len());
    let mut select_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut selected: Vec<usize> = index_sample(&mut select_rng, graphs.len(), count).into_vec();
    selected.sort_unstable();

    let mut samples = Vec::new();
    for idx in selected {
        let g = graphs[idx].clone().canonicalized();
        let origin = canonical_hash(&g);
        let layers = decompose_layers(&g);
        let mut rng = per_graph_rng(seed, idx as u64);

        let high_latency = stats
            .per_service_p90_latency
            .get(&g.service_id)
            .map_or(false, |p90| g.attributes().latency_ms >= *p90);
        let uncommon = uncommon_layers(&layers, stats, &g);
        let route = match (high_latency, uncommon.is_empty()) {
            (true, true) => TagRoute::HighLatency,
            (false, false) => TagRoute::Uncommon(uncommon),
            (true, false) => {
                if rng.gen_bool(0.5) {
                    TagRoute::HighLatency
                } else {
                    TagRoute::Uncommon(uncommon)
                }
            }
            (false, true) => TagRoute::None,
        };

        for (k, layer) in layers.iter().enumerate() {
            let mut instruction = encode_prompt(&layer.conditions);
            instruction.push_str(&prose_augmentation(layer, k == 0, &mut rng));
            instruction.push('\n');

            let mut tags = Vec::new();
            match &route {
                TagRoute::HighLatency if k == 0 => {
                    instruction.push_str(HIGH_LATENCY_INSTRUCTION);
                    instruction.push('\n');
                    tags.push(InstructionTag::HighLatency);
                }
                TagRoute::Uncommon(found) => {
                    if let Some((_, triple)) = found.iter().find(|(i, _)| *i == k) {
                        instruction.push_str(&uncommon_instruction(triple));
                        instruction.push('\n');
                        tags.push(InstructionTag::UncommonComm {
                            source: triple.source.clone(),
                            destination: triple.destination.clone(),
                            comm_type: triple.comm_type.clone(),
                        });
                    }
                }
                _ => {}
            }

            let output = encode_layer_body(&layer.conditions, &layer.edges, &layer.children, true);
            samples.push(InstructionSample {
                system_prompt: SYSTEM_PROMPT.to_string(),
                loss_mask_boundary: SYSTEM_PROMPT.len() + instruction.len(),
                instruction,
                output,
                tags,
                origin_hash: origin,
            });
        }
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{parse_recursive_sample, parse_tabular_sample, SampleFormat};
    use crate::ingest::compute_stats;
    use crate::model::{build_graph, EdgeRecord, NodeId};
    use crate::validator::check_instruction_compliance;

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

    fn graph(trace: &str, service: &str, latency: u64) -> CallGraph {
        build_graph(
            trace,
            NodeId::new(service).unwrap(),
            [
                rec("0", "Client", "MS_1", "HTTP", 0, latency),
                rec("0.1", "MS_1", "MS_2", "RPC", 1, latency / 2),
            ],
        )
        .unwrap()
    }

    fn corpus() -> Vec<CallGraph> {
        (0..20)
            .map(|i| graph(&format!("t{i}"), "S_1", 10 + i as u64 * 10))
            .collect()
    }

    #[test]
    fn p_drop_extremes() {
        let graphs = corpus();
        let all_kept: Vec<_> = build_pretraining_corpus(&graphs, 0.0, 1)
            .unwrap()
            .collect();
        for s in &all_kept {
            assert_eq!(s.format, SampleFormat::RecursiveLayer);
            assert!(s.text.contains("num_edges: "));
            assert!(s.text.contains("remaining_depth: "));
            assert!(s.text.contains("latency: "));
        }

        let none_kept: Vec<_> = build_pretraining_corpus(&graphs, 1.0, 1)
            .unwrap()
            .collect();
        for s in &none_kept {
            assert!(s.text.starts_with("service_id: "));
            // First header carries no droppable attributes; later headers
            // always do, so inspect only the text before the first block.
            let first_header: String = s
                .text
                .lines()
                .take_while(|l| !l.starts_with('<'))
                .collect::<Vec<_>>()
                .join("\n");
            assert!(!first_header.contains("num_edges"));
            assert!(!first_header.contains("remaining_depth"));
            assert!(!first_header.contains("latency"));
        }

        assert!(build_pretraining_corpus(&graphs, 1.5, 1).is_err());
    }

    #[test]
    fn samples_reconstruct_their_source() {
        let graphs = corpus();
        for sample in build_pretraining_corpus(&graphs, 0.9, 7).unwrap() {
            let g = parse_recursive_sample(&sample.text).unwrap();
            assert_eq!(Some(canonical_hash(&g)), sample.origin_hash);
        }
        for sample in build_tabular_corpus(&graphs, 0.9, 7).unwrap() {
            let g = parse_tabular_sample(&sample.text).unwrap();
            assert_eq!(Some(canonical_hash(&g)), sample.origin_hash);
        }
    }

    #[test]
    fn corpora_are_reproducible() {
        let graphs = corpus();
        let a: Vec<_> = build_tabular_corpus(&graphs, 0.5, 9).unwrap().collect();
        let b: Vec<_> = build_tabular_corpus(&graphs, 0.5, 9).unwrap().collect();
        assert_eq!(a, b);
        assert!(build_tabular_corpus(&[], 0.5, 9).unwrap().next().is_none());
    }

    #[test]
    fn instruction_tags_are_exclusive_and_compliant() {
        // Service with one dominant triple and one rare one, plus a latency
        // spread wide enough for a meaningful p90.
        let mut graphs = corpus();
        graphs.push(
            build_graph(
                "rare",
                NodeId::new("S_1").unwrap(),
                [
                    rec("0", "Client", "MS_1", "HTTP", 0, 500),
                    rec("0.1", "MS_1", "MS_99", "MQ", 1, 400),
                ],
            )
            .unwrap(),
        );
        let stats = compute_stats(&graphs).unwrap();
        let samples = build_instruction_corpus(&graphs, &stats, 1.0, 3).unwrap();
        assert!(!samples.is_empty());

        let mut tagged = 0;
        for s in &samples {
            assert!(s.tags.len() <= 1, "sample with both tags: {:?}", s.tags);
            assert_eq!(s.loss_mask_boundary, s.system_prompt.len() + s.instruction.len());
            for tag in &s.tags {
                tagged += 1;
                let g = graphs
                    .iter()
                    .find(|g| canonical_hash(&g.clone().clone().canonicalized()) == s.origin_hash)
                    .unwrap()
                    .clone()
                    .canonicalized();
                assert_eq!(
                    check_instruction_compliance(&g, tag, &stats),
                    Ok(true),
                    "tagged sample does not comply: {tag:?}"
                );
                match tag {
                    InstructionTag::HighLatency => {
                        assert!(s.instruction.contains(HIGH_LATENCY_INSTRUCTION));
                    }
                    InstructionTag::UncommonComm { .. } => {
                        assert!(s.instruction.contains("Include an edge from"));
                    }
                }
            }
        }
        assert!(tagged > 0, "fixture produced no tagged samples");
    }

    #[test]
    fn instruction_outputs_carry_scratchpads() {
        let graphs = corpus();
        let stats = compute_stats(&graphs).unwrap();
        let samples = build_instruction_corpus(&graphs, &stats, 0.5, 3).unwrap();
        let with_blocks = samples
            .iter()
            .find(|s| s.output.contains("<subgraph>"))
            .expect("two-layer graphs produce subgraph blocks");
        assert!(with_blocks.output.contains("num generated edges"));
        assert!(with_blocks.output.contains("Child's remaining depth"));
    }

    #[test]
    fn selection_fraction_and_reproducibility() {
        let graphs = corpus();
        let stats = compute_stats(&graphs).unwrap();
        let a = build_instruction_corpus(&graphs, &stats, 0.25, 11).unwrap();
        let b = build_instruction_corpus(&graphs, &stats, 0.25, 11).unwrap();
        assert_eq!(a, b);
        // ceil(0.25 * 20) = 5 graphs, two layers each.
        let distinct: std::collections::HashSet<_> =
            a.iter().map(|s| s.origin_hash).collect();
        assert_eq!(distinct.len(), 5);
        assert!(build_instruction_corpus(&graphs, &stats, 0.0, 1).is_err());
        assert!(build_instruction_corpus(&[], &stats, 0.5, 1).is_err());
    }
}
