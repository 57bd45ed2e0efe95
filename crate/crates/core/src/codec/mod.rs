//! Bit-exact rendering and parsing of the text formats.
//!
//! Two formats exist. `TABULAR` renders a whole graph: an attribute header of
//! `name: value` lines followed by one `<edges>` block whose lines carry all
//! six edge features as natural-language clauses. `RECURSIVE_LAYER` renders a
//! graph as its layer sequence: each layer is a condition header, an `<edges>`
//! block of five-clause lines (no source, flat integer ids), and one
//! `<subgraph>` block per child layer. The grammar here is normative and
//! versioned via [`FORMAT_VERSION`]; parsing accepts clauses and header lines
//! in any order.

mod parse;

pub use parse::{
    parse_layer, parse_layer_output, parse_recursive_sample, parse_tabular_sample, ChildBlock,
    ParseError, ParsedLayer,
};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{
    canonical_hash, decompose_layers, CallGraph, Digest, Edge, LayerConditions, LayerEdge,
};

/// Version tag written into corpus file headers.
pub const FORMAT_VERSION: u32 = 1;

pub(crate) const TAG_EDGES_OPEN: &str = "<edges>";
pub(crate) const TAG_EDGES_CLOSE: &str = "</edges>";
pub(crate) const TAG_SUBGRAPH_OPEN: &str = "<subgraph>";
pub(crate) const TAG_SUBGRAPH_CLOSE: &str = "</subgraph>";

pub(crate) const FIELD_SERVICE: &str = "service_id";
pub(crate) const FIELD_START_NODE: &str = "start_node";
pub(crate) const FIELD_CALLER: &str = "caller";
pub(crate) const FIELD_REMAINING_DEPTH: &str = "remaining_depth";
pub(crate) const FIELD_NUM_EDGES: &str = "num_edges";
pub(crate) const FIELD_START_EDGE_ID: &str = "start_edge_id";
pub(crate) const FIELD_LATENCY: &str = "latency";
pub(crate) const FIELD_START_COMM: &str = "start_communication_at";
pub(crate) const FIELD_EDGE_REF: &str = "edge_id";
pub(crate) const FIELD_DEPTH: &str = "depth";

pub(crate) const CLAUSE_EDGE_ID: &str = "Edge ID is ";
pub(crate) const CLAUSE_SOURCE: &str = "Source is ";
pub(crate) const CLAUSE_DESTINATION: &str = "Destination is ";
pub(crate) const CLAUSE_TYPE: &str = "Type is ";
pub(crate) const CLAUSE_START: &str = "Communication starts at ";
pub(crate) const CLAUSE_FINISH: &str = "Communication finishes at ";
pub(crate) const MS_SUFFIX: &str = " ms";

pub(crate) const SCRATCHPAD_EDGE_COUNT: &str = "num generated edges";
pub(crate) const SCRATCHPAD_CHILD_DEPTH: &str = "Child's remaining depth";

/// A rendered training or evaluation sample.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextSample {
    pub text: String,
    pub format: SampleFormat,
    /// Canonical hash of the source graph; absent for model output.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub origin_hash: Option<Digest>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SampleFormat {
    #[serde(rename = "TABULAR")]
    Tabular,
    #[serde(rename = "RECURSIVE_LAYER")]
    RecursiveLayer,
}

/// The six features of a full (tabular) edge line.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeField {
    EdgeId,
    Source,
    Destination,
    CommType,
    Start,
    Finish,
}

impl EdgeField {
    pub const ALL: [EdgeField; 6] = [
        EdgeField::EdgeId,
        EdgeField::Source,
        EdgeField::Destination,
        EdgeField::CommType,
        EdgeField::Start,
        EdgeField::Finish,
    ];
}

/// Which droppable graph attributes to leave out of a sample header. The
/// service id is never dropped.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AttrDropMask {
    pub drop_num_edges: bool,
    pub drop_depth: bool,
    pub drop_latency: bool,
}

impl AttrDropMask {
    pub fn keep_all() -> Self {
        AttrDropMask::default()
    }

    pub fn drop_all() -> Self {
        AttrDropMask {
            drop_num_edges: true,
            drop_depth: true,
            drop_latency: true,
        }
    }
}

/// One edge rendered as comma-separated natural-language clauses in the given
/// feature order. `order` must be a permutation of all six features.
pub fn encode_edge_nl(e: &Edge, order: &[EdgeField]) -> String {
    debug_assert_eq!(order.len(), 6, "order must cover all six edge features");
    let clauses: Vec<String> = order
        .iter()
        .map(|f| match f {
            EdgeField::EdgeId => format!("{CLAUSE_EDGE_ID}{}", e.edge_id),
            EdgeField::Source => format!("{CLAUSE_SOURCE}{}", e.source),
            EdgeField::Destination => format!("{CLAUSE_DESTINATION}{}", e.destination),
            EdgeField::CommType => format!("{CLAUSE_TYPE}{}", e.comm_type),
            EdgeField::Start => format!("{CLAUSE_START}{}{MS_SUFFIX}", e.start_ms),
            EdgeField::Finish => format!("{CLAUSE_FINISH}{}{MS_SUFFIX}", e.finish_ms),
        })
        .collect();
    clauses.join(", ")
}

/// One layer edge in canonical clause order: flat id, destination, type,
/// start, finish.
pub fn encode_layer_edge(e: &LayerEdge) -> String {
    format!(
        "{CLAUSE_EDGE_ID}{}, {CLAUSE_DESTINATION}{}, {CLAUSE_TYPE}{}, {CLAUSE_START}{}{MS_SUFFIX}, {CLAUSE_FINISH}{}{MS_SUFFIX}",
        e.flat_edge_id, e.destination, e.comm_type, e.start_ms, e.finish_ms
    )
}

/// Controls which lines a condition header carries. Structural fields
/// (start node, caller, start edge id, start communication time) are always
/// rendered; the three droppable attributes follow the mask.
#[derive(Clone, Copy, Debug)]
pub struct ConditionHeader {
    pub include_service_id: bool,
    pub mask: AttrDropMask,
}

impl ConditionHeader {
    /// All seven condition fields, no service line: the plain layer header.
    pub fn full() -> Self {
        ConditionHeader {
            include_service_id: false,
            mask: AttrDropMask::keep_all(),
        }
    }

    /// Service line plus all seven fields: the driver prompt shape.
    pub fn prompt() -> Self {
        ConditionHeader {
            include_service_id: true,
            mask: AttrDropMask::keep_all(),
        }
    }
}

/// Renders a condition header as `name: value` lines in fixed order.
pub fn encode_conditions_with(c: &LayerConditions, header: &ConditionHeader) -> String {
    let mut out = String::new();
    if header.include_service_id {
        out.push_str(&format!("{FIELD_SERVICE}: {}\n", c.service_id));
    }
    out.push_str(&format!("{FIELD_START_NODE}: {}\n", c.start_node));
    out.push_str(&format!("{FIELD_CALLER}: {}\n", c.caller));
    if !header.mask.drop_depth {
        out.push_str(&format!("{FIELD_REMAINING_DEPTH}: {}\n", c.remaining_depth));
    }
    if !header.mask.drop_num_edges {
        out.push_str(&format!("{FIELD_NUM_EDGES}: {}\n", c.num_edges));
    }
    out.push_str(&format!("{FIELD_START_EDGE_ID}: {}\n", c.start_edge_id));
    if !header.mask.drop_latency {
        out.push_str(&format!("{FIELD_LATENCY}: {}\n", c.latency_ms));
    }
    out.push_str(&format!("{FIELD_START_COMM}: {}\n", c.start_communication_at_ms));
    out
}

/// The seven-line condition header.
pub fn encode_conditions(c: &LayerConditions) -> String {
    encode_conditions_with(c, &ConditionHeader::full())
}

/// The rendered prompt a driver sends to a backend: service line plus the
/// full condition header.
pub fn encode_prompt(c: &LayerConditions) -> String {
    encode_conditions_with(c, &ConditionHeader::prompt())
}

/// Renders the generated portion of a layer: the `<edges>` block and one
/// `<subgraph>` block per child. With `with_intermediate`, an arithmetic
/// scratchpad line follows the last edge, and each subgraph block opens with
/// the derived child-depth line.
pub fn encode_layer_body(
    conds: &LayerConditions,
    edges: &[LayerEdge],
    children: &[LayerConditions],
    with_intermediate: bool,
) -> String {
    let mut out = String::new();
    out.push_str(TAG_EDGES_OPEN);
    out.push('\n');
    for e in edges {
        out.push_str(&encode_layer_edge(e));
        out.push('\n');
    }
    if with_intermediate && !edges.is_empty() {
        let first = edges.first().map(|e| e.flat_edge_id).unwrap_or(0);
        let last = edges.last().map(|e| e.flat_edge_id).unwrap_or(0);
        out.push_str(&format!(
            "{SCRATCHPAD_EDGE_COUNT} = the last edge id - the first edge id + 1 = {last} - {first} + 1 = {}\n",
            edges.len()
        ));
    }
    out.push_str(TAG_EDGES_CLOSE);
    out.push('\n');
    for child in children {
        out.push_str(TAG_SUBGRAPH_OPEN);
        out.push('\n');
        if with_intermediate {
            out.push_str(&format!(
                "{SCRATCHPAD_CHILD_DEPTH} = current remaining depth - 1 = {}\n",
                conds.remaining_depth.saturating_sub(1)
            ));
        }
        out.push_str(&format!(
            "{FIELD_EDGE_REF}: {}\n",
            child.parent_edge_id.unwrap_or(0)
        ));
        out.push_str(&encode_conditions(child));
        out.push_str(TAG_SUBGRAPH_CLOSE);
        out.push('\n');
    }
    out
}

/// A complete layer rendering: condition header plus generated body.
pub fn encode_layer(
    conds: &LayerConditions,
    edges: &[LayerEdge],
    children: &[LayerConditions],
    with_intermediate: bool,
) -> String {
    let mut out = encode_conditions(conds);
    out.push_str(&encode_layer_body(conds, edges, children, with_intermediate));
    out
}

/// Renders a whole graph in the tabular format: shuffled attribute header,
/// then one `<edges>` block with per-edge shuffled clause order. The seed
/// drives only the shuffles; attribute presence comes from `mask`.
pub fn encode_tabular_sample(g: &CallGraph, seed: u64, mask: &AttrDropMask) -> TextSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let attrs = g.attributes();

    let mut attr_lines = vec![format!("{FIELD_SERVICE}: {}", g.service_id)];
    if !mask.drop_num_edges {
        attr_lines.push(format!("{FIELD_NUM_EDGES}: {}", attrs.num_edges));
    }
    if !mask.drop_depth {
        attr_lines.push(format!("{FIELD_DEPTH}: {}", attrs.depth));
    }
    if !mask.drop_latency {
        attr_lines.push(format!("{FIELD_LATENCY}: {}", attrs.latency_ms));
    }
    attr_lines.shuffle(&mut rng);

    let mut text = String::new();
    for line in &attr_lines {
        text.push_str(line);
        text.push('\n');
    }
    text.push_str(TAG_EDGES_OPEN);
    text.push('\n');
    for e in &g.edges {
        let mut order = EdgeField::ALL;
        order.shuffle(&mut rng);
        text.push_str(&encode_edge_nl(e, &order));
        text.push('\n');
    }
    text.push_str(TAG_EDGES_CLOSE);
    text.push('\n');

    TextSample {
        text,
        format: SampleFormat::Tabular,
        origin_hash: Some(canonical_hash(g)),
    }
}

/// Renders a whole graph in the recursive format: a service line, then every
/// layer of the decomposition in pre-order. The mask applies to the first
/// (graph-level) header only; later headers always carry all seven fields.
pub fn encode_recursive_sample(g: &CallGraph, mask: &AttrDropMask) -> TextSample {
    let layers = decompose_layers(g);
    let mut text = format!("{FIELD_SERVICE}: {}\n", g.service_id);
    for (i, layer) in layers.iter().enumerate() {
        let header = if i == 0 {
            ConditionHeader {
                include_service_id: false,
                mask: *mask,
            }
        } else {
            ConditionHeader::full()
        };
        text.push_str(&encode_conditions_with(&layer.conditions, &header));
        text.push_str(&encode_layer_body(
            &layer.conditions,
            &layer.edges,
            &layer.children,
            false,
        ));
    }
    TextSample {
        text,
        format: SampleFormat::RecursiveLayer,
        origin_hash: Some(canonical_hash(g)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{edge, NodeId};

    fn fig_edge() -> Edge {
        edge("0", "Client", "Front end", "HTTP", 0, 24)
    }

    #[test]
    fn worked_example_identity_order() {
        let text = encode_edge_nl(&fig_edge(), &EdgeField::ALL);
        assert_eq!(
            text,
            "Edge ID is 0, Source is Client, Destination is Front end, Type is HTTP, \
             Communication starts at 0 ms, Communication finishes at 24 ms"
        );
    }

    #[test]
    fn reversed_order_reverses_clauses() {
        let mut order = EdgeField::ALL;
        order.reverse();
        let text = encode_edge_nl(&fig_edge(), &order);
        let identity = encode_edge_nl(&fig_edge(), &EdgeField::ALL);
        let mut forward: Vec<&str> = identity.split(", ").collect();
        forward.reverse();
        assert_eq!(text, forward.join(", "));
    }

    #[test]
    fn layer_scratchpad_arithmetic() {
        let conds = LayerConditions {
            start_node: NodeId::new("MS_1").unwrap(),
            caller: NodeId::client(),
            remaining_depth: 1,
            num_edges: 3,
            start_edge_id: 4,
            latency_ms: 100,
            start_communication_at_ms: 0,
            service_id: NodeId::new("S_1").unwrap(),
            parent_edge_id: Some(0),
        };
        let edges: Vec<LayerEdge> = (4..7)
            .map(|i| LayerEdge {
                flat_edge_id: i,
                destination: NodeId::new("MS_2").unwrap(),
                comm_type: "RPC".into(),
                start_ms: 1,
                finish_ms: 2,
            })
            .collect();
        let body = encode_layer_body(&conds, &edges, &[], true);
        assert!(body.contains(
            "num generated edges = the last edge id - the first edge id + 1 = 6 - 4 + 1 = 3"
        ));
        // Without the scratchpad the rendering is byte-identical minus that line.
        let plain = encode_layer_body(&conds, &edges, &[], false);
        let stripped: String = body
            .lines()
            .filter(|l| !l.starts_with(SCRATCHPAD_EDGE_COUNT))
            .map(|l| format!("{l}\n"))
            .collect();
        assert_eq!(plain, stripped);
    }
}
