//! The complete constraint catalog for generated layers, the whole-generation
//! accuracy verdict, and instruction-compliance checks.
//!
//! Every rule of the catalog maps to exactly one [`ViolationCode`]:
//!
//! | code | rule |
//! |------|------|
//! | `F_FORMAT` | output carries well-formed `<edges>`/`<subgraph>` blocks |
//! | `E_FIELDS` | each edge line carries exactly the 5 fields |
//! | `E_COUNT` | flat edge ids run contiguously from `start_edge_id` |
//! | `E_START_LOW` | edge start >= condition start time |
//! | `E_START_ORDER` | edge start <= edge finish |
//! | `E_FINISH_LATENCY` | edge finish <= condition latency |
//! | `S_UNEXPECTED` | no subgraph blocks when depth or edge budget is spent |
//! | `S_EDGE_REF` | block extends an edge generated in this layer |
//! | `S_DEPTH_LT` | block depth < condition depth |
//! | `S_DEPTH_ONE` | some block depth == condition depth - 1 |
//! | `S_START_NODE` | block start node == parent edge destination |
//! | `S_CALLER` | block caller == condition start node |
//! | `S_LATENCY` | block latency <= parent edge finish |
//! | `S_START_TIME` | block start time >= parent edge start |
//! | `T_EDGE_SUM` | edges generated + declared child budgets == condition budget |
//!
//! Validation reports every violation found, not the first failure.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::codec::{parse_layer_output, ParseError};
use crate::ingest::CorpusStats;
use crate::model::{
    check_structure, CallGraph, LayerConditions, LayerEdge, NodeId, Violation, ViolationCode,
    ViolationLocation,
};

/// A user-requested trait of a training or generation sample.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "tag", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum InstructionTag {
    /// The graph's end-to-end latency reaches its service's p90.
    HighLatency,
    /// The graph contains a call triple rare within its service.
    UncommonComm {
        source: NodeId,
        destination: NodeId,
        comm_type: String,
    },
}

/// Checks one parsed layer against its conditions. Returns every violation;
/// an empty list means the layer is fully conformant.
pub fn validate_layer(
    edges: &[LayerEdge],
    children: &[LayerConditions],
    conds: &LayerConditions,
) -> Vec<Violation> {
    let mut out = Vec::new();

    // Edge rules.
    let mut flat_ids: HashMap<u64, usize> = HashMap::new();
    for (i, e) in edges.iter().enumerate() {
        let expected = conds.start_edge_id + i as u64;
        if e.flat_edge_id != expected {
            out.push(
                Violation::new(
                    ViolationCode::ECount,
                    format!(
                        "edge id {} breaks the contiguous run expected at {}",
                        e.flat_edge_id, expected
                    ),
                )
                .at(ViolationLocation::Edge(i)),
            );
        }
        flat_ids.entry(e.flat_edge_id).or_insert(i);
        if e.start_ms < conds.start_communication_at_ms as i64 {
            out.push(
                Violation::new(
                    ViolationCode::EStartLow,
                    format!(
                        "edge starts at {} before the condition start time {}",
                        e.start_ms, conds.start_communication_at_ms
                    ),
                )
                .at(ViolationLocation::Edge(i)),
            );
        }
        if e.start_ms > e.finish_ms {
            out.push(
                Violation::new(
                    ViolationCode::EStartOrder,
                    format!(
                        "edge starts at {} after finishing at {}",
                        e.start_ms, e.finish_ms
                    ),
                )
                .at(ViolationLocation::Edge(i)),
            );
        }
        if e.finish_ms > conds.latency_ms as i64 {
            out.push(
                Violation::new(
                    ViolationCode::EFinishLatency,
                    format!(
                        "edge finishes at {} beyond the condition latency {}",
                        e.finish_ms, conds.latency_ms
                    ),
                )
                .at(ViolationLocation::Edge(i)),
            );
        }
    }

    // Subgraph rules.
    let budget_left = conds.num_edges.saturating_sub(edges.len() as u64);
    let blocks_allowed = conds.remaining_depth >= 2 && budget_left > 0;
    if !children.is_empty() && !blocks_allowed {
        out.push(Violation::new(
            ViolationCode::SUnexpected,
            format!(
                "subgraph blocks generated with remaining depth {} and {} edges left in budget",
                conds.remaining_depth, budget_left
            ),
        ));
    }

    for (j, child) in children.iter().enumerate() {
        let parent = child
            .parent_edge_id
            .and_then(|flat| flat_ids.get(&flat).map(|&i| &edges[i]));
        match (child.parent_edge_id, parent) {
            (Some(flat), None) => {
                out.push(
                    Violation::new(
                        ViolationCode::SEdgeRef,
                        format!("block extends edge {flat}, not generated in this layer"),
                    )
                    .at(ViolationLocation::Subgraph(j)),
                );
            }
            (None, _) => {
                out.push(
                    Violation::new(
                        ViolationCode::SEdgeRef,
                        "block carries no parent edge reference".to_string(),
                    )
                    .at(ViolationLocation::Subgraph(j)),
                );
            }
            (Some(_), Some(parent_edge)) => {
                if child.start_node != parent_edge.destination {
                    out.push(
                        Violation::new(
                            ViolationCode::SStartNode,
                            format!(
                                "block start node {} differs from parent edge destination {}",
                                child.start_node, parent_edge.destination
                            ),
                        )
                        .at(ViolationLocation::Subgraph(j)),
                    );
                }
                if child.latency_ms as i64 > parent_edge.finish_ms {
                    out.push(
                        Violation::new(
                            ViolationCode::SLatency,
                            format!(
                                "block latency {} exceeds parent edge finish {}",
                                child.latency_ms, parent_edge.finish_ms
                            ),
                        )
                        .at(ViolationLocation::Subgraph(j)),
                    );
                }
                if (child.start_communication_at_ms as i64) < parent_edge.start_ms {
                    out.push(
                        Violation::new(
                            ViolationCode::SStartTime,
                            format!(
                                "block start time {} earlier than parent edge start {}",
                                child.start_communication_at_ms, parent_edge.start_ms
                            ),
                        )
                        .at(ViolationLocation::Subgraph(j)),
                    );
                }
            }
        }
        if child.caller != conds.start_node {
            out.push(
                Violation::new(
                    ViolationCode::SCaller,
                    format!(
                        "block caller {} differs from the condition start node {}",
                        child.caller, conds.start_node
                    ),
                )
                .at(ViolationLocation::Subgraph(j)),
            );
        }
        if child.remaining_depth >= conds.remaining_depth {
            out.push(
                Violation::new(
                    ViolationCode::SDepthLt,
                    format!(
                        "block depth {} not less than the condition depth {}",
                        child.remaining_depth, conds.remaining_depth
                    ),
                )
                .at(ViolationLocation::Subgraph(j)),
            );
        }
    }

    if blocks_allowed {
        let target = conds.remaining_depth - 1;
        let any_reduced_by_one = children.iter().any(|c| c.remaining_depth == target);
        if !any_reduced_by_one {
            out.push(Violation::new(
                ViolationCode::SDepthOne,
                format!("no subgraph block carries remaining depth {target}"),
            ));
        }
    }

    // Edge budget: the layer's edges plus every declared child budget must
    // account for exactly the conditioned number of edges.
    let declared: u64 = children.iter().map(|c| c.num_edges).sum();
    let total = edges.len() as u64 + declared;
    if total != conds.num_edges {
        out.push(Violation::new(
            ViolationCode::TEdgeSum,
            format!(
                "{} edges generated plus {} declared in blocks != budget {}",
                edges.len(),
                declared,
                conds.num_edges
            ),
        ));
    }

    out
}

/// Parses raw completion text and validates it. Parse failures map onto the
/// two format codes: a bad edge line is `E_FIELDS`, any other malformation is
/// `F_FORMAT`.
pub fn validate_layer_text(text: &str, conds: &LayerConditions) -> Vec<Violation> {
    match parse_layer_output(text) {
        Ok(parsed) => {
            let children = parsed.children_conditions(&conds.service_id);
            validate_layer(&parsed.edges, &children, conds)
        }
        Err(ParseError::BadEdgeLine { line }) => vec![Violation::new(
            ViolationCode::EFields,
            format!("edge line lacks the 5 fields: {line:?}"),
        )],
        Err(e) => vec![Violation::new(ViolationCode::FFormat, e.to_string())],
    }
}

/// The attributes a generation was prompted with. Unset attributes are not
/// judged.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptAttributes {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub service_id: Option<NodeId>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub num_edges: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub depth: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub latency_ms: Option<u64>,
}

impl PromptAttributes {
    /// The prompt implied by initial layer conditions: edge count and depth
    /// are exact targets. Latency acts as a bound during generation rather
    /// than an exact target, so it is not judged here.
    pub fn from_conditions(conds: &LayerConditions) -> Self {
        PromptAttributes {
            service_id: Some(conds.service_id.clone()),
            num_edges: Some(conds.num_edges),
            depth: Some(conds.remaining_depth),
            latency_ms: None,
        }
    }
}

/// Accuracy verdict for one completed generation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccuracyVerdict {
    pub valid: bool,
    pub matched_num_edges: bool,
    pub matched_depth: bool,
    pub violations: Vec<Violation>,
}

/// Judges an assembled generation: structurally sound and matching every
/// prompted attribute exactly.
pub fn validate_generation(g: &CallGraph, prompt: &PromptAttributes) -> AccuracyVerdict {
    let report = check_structure(g);
    let structural_ok = report.is_valid();

    let (num_edges, depth, latency) = if structural_ok {
        let attrs = g.attributes();
        (attrs.num_edges, attrs.depth, attrs.latency_ms)
    } else {
        (
            g.edges.len() as u64,
            g.edges
                .iter()
                .map(|e| e.edge_id.depth() as u32)
                .max()
                .unwrap_or(0),
            0,
        )
    };

    let matched_num_edges = prompt.num_edges.map_or(true, |n| n == num_edges);
    let matched_depth = prompt.depth.map_or(true, |d| d == depth);
    let matched_latency = prompt
        .latency_ms
        .map_or(true, |l| structural_ok && l == latency);
    let matched_service = prompt
        .service_id
        .as_ref()
        .map_or(true, |s| *s == g.service_id);

    AccuracyVerdict {
        valid: structural_ok
            && matched_num_edges
            && matched_depth
            && matched_latency
            && matched_service,
        matched_num_edges,
        matched_depth,
        violations: report.violations,
    }
}

/// Errors from instruction-compliance checks.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ComplianceError {
    #[error("service {service} absent from corpus statistics")]
    UnknownService { service: NodeId },
}

/// Does the graph satisfy the instruction it was tagged with?
///
/// High latency means the graph's latency reaches its service's p90 from the
/// training statistics. An uncommon-communication tag names an exact triple
/// that must appear as an edge.
pub fn check_instruction_compliance(
    g: &CallGraph,
    tag: &InstructionTag,
    stats: &CorpusStats,
) -> Result<bool, ComplianceError> {
    match tag {
        InstructionTag::HighLatency => {
            let p90 = stats.per_service_p90_latency.get(&g.service_id).ok_or(
                ComplianceError::UnknownService {
                    service: g.service_id.clone(),
                },
            )?;
            Ok(g.attributes().latency_ms >= *p90)
        }
        InstructionTag::UncommonComm {
            source,
            destination,
            comm_type,
        } => Ok(g.edges.iter().any(|e| {
            e.source == *source && e.destination == *destination && e.comm_type == *comm_type
        })),
    }
}

/// Compliance for a set of tags is the conjunction of the individual checks;
/// used to judge novel instruction combinations.
pub fn check_combined_compliance(
    g: &CallGraph,
    tags: &[InstructionTag],
    stats: &CorpusStats,
) -> Result<bool, ComplianceError> {
    for tag in tags {
        if !check_instruction_compliance(g, tag, stats)? {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_graph, decompose_layers, EdgeRecord};

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

    fn branching() -> CallGraph {
        build_graph(
            "t",
            NodeId::new("S_1").unwrap(),
            [
                rec("0", "Client", "MS_1", "HTTP", 0, 24),
                rec("0.1", "MS_1", "MS_2", "RPC", 1, 5),
                rec("0.2", "MS_1", "MS_3", "RPC", 6, 20),
                rec("0.2.1", "MS_3", "MS_4", "DB", 7, 12),
                rec("0.2.2", "MS_3", "MS_5", "MC", 13, 19),
            ],
        )
        .unwrap()
    }

    #[test]
    fn decomposed_layers_validate_clean() {
        let g = branching();
        for layer in decompose_layers(&g) {
            let violations = validate_layer(&layer.edges, &layer.children, &layer.conditions);
            assert!(violations.is_empty(), "unexpected violations: {violations:?}");
        }
    }

    #[test]
    fn unexpected_block_on_leaf_layer() {
        let g = branching();
        let layers = decompose_layers(&g);
        let leaf = layers.last().unwrap();
        assert!(leaf.children.is_empty());
        // Attach a structurally-perfect block to the leaf layer; only the
        // termination rule should fire.
        let parent = &leaf.edges[0];
        let conds = leaf.conditions.clone();
        let block = LayerConditions {
            start_node: parent.destination.clone(),
            caller: conds.start_node.clone(),
            remaining_depth: 0,
            num_edges: 0,
            start_edge_id: 99,
            latency_ms: parent.finish_ms as u64,
            start_communication_at_ms: parent.start_ms as u64,
            service_id: conds.service_id.clone(),
            parent_edge_id: Some(parent.flat_edge_id),
        };
        let codes: Vec<_> = validate_layer(&leaf.edges, &[block], &conds)
            .into_iter()
            .map(|v| v.code)
            .collect();
        assert_eq!(codes, vec![ViolationCode::SUnexpected]);
    }

    #[test]
    fn depth_must_step_down_by_one_somewhere() {
        let g = branching();
        let layers = decompose_layers(&g);
        let layer = layers.iter().find(|l| !l.children.is_empty()).unwrap();
        let mut conds = layer.conditions.clone();
        conds.remaining_depth += 1; // every child now sits at depth - 2
        let violations = validate_layer(&layer.edges, &layer.children, &conds);
        assert!(violations.iter().any(|v| v.code == ViolationCode::SDepthOne));
        assert!(violations.iter().all(|v| v.code == ViolationCode::SDepthOne));
    }

    #[test]
    fn generation_verdict() {
        let g = branching();
        let prompt = PromptAttributes {
            num_edges: Some(5),
            depth: Some(3),
            ..Default::default()
        };
        let verdict = validate_generation(&g, &prompt);
        assert!(verdict.valid && verdict.matched_num_edges && verdict.matched_depth);

        let verdict = validate_generation(
            &g,
            &PromptAttributes {
                num_edges: Some(4),
                depth: Some(3),
                ..Default::default()
            },
        );
        assert!(!verdict.valid && !verdict.matched_num_edges && verdict.matched_depth);

        let mut bad = branching();
        bad.edges[1].start_ms = 0;
        bad.edges[1].finish_ms = 25;
        let verdict = validate_generation(&bad, &PromptAttributes::default());
        assert!(!verdict.valid);
        assert!(verdict
            .violations
            .iter()
            .any(|v| v.code == ViolationCode::GTimeNest));
    }

    #[test]
    fn text_path_maps_parse_failures() {
        let g = branching();
        let layer = &decompose_layers(&g)[0];
        let violations = validate_layer_text("no blocks here", &layer.conditions);
        assert_eq!(violations.len(), 1);
        assert_eq!(violations[0].code, ViolationCode::FFormat);

        let text = "<edges>\nEdge ID is 0, Destination is MS_1, Type is RPC, Communication starts at 0 ms\n</edges>\n";
        let violations = validate_layer_text(text, &layer.conditions);
        assert_eq!(violations.len(), 1);
        assert_eq!(violations[0].code, ViolationCode::EFields);
    }
}
