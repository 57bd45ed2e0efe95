//! Parsing of model output and rendered samples. Model output is untrusted:
//! parsing is strict about block structure and edge clause counts, lenient
//! about clause order, header line order, scratchpad lines, and unknown
//! tokens (novel node names or comm types parse fine and are judged by the
//! validator, not here).

use std::collections::HashMap;

use super::*;
use crate::model::{
    assemble_layers, check_structure, EdgeId, LayerConditions, LayerEdge, NodeId,
    ValidationReport,
};

/// Errors raised while parsing rendered text.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseError {
    /// No `<edges>` block, or a closing tag appeared before one opened.
    #[error("MISSING_EDGES_BLOCK: no <edges> block found")]
    MissingEdgesBlock,
    /// A block was opened but never closed.
    #[error("UNCLOSED_BLOCK: <{tag}> block not closed")]
    UnclosedBlock { tag: String },
    /// An edge line does not carry exactly the expected clauses.
    #[error("BAD_EDGE_LINE: {line:?}")]
    BadEdgeLine { line: String },
    /// A condition or subgraph field is missing, duplicated, malformed, or a
    /// tag appeared where a field was expected.
    #[error("BAD_SUBGRAPH_FIELD: {name:?}")]
    BadSubgraphField { name: String },
    /// The text parsed but the reconstructed graph violates structure.
    #[error("structural violations: {0:?}")]
    Structural(ValidationReport),
}

fn bad_field(name: impl Into<String>) -> ParseError {
    ParseError::BadSubgraphField { name: name.into() }
}

fn bad_line(line: &str) -> ParseError {
    ParseError::BadEdgeLine {
        line: line.to_string(),
    }
}

/// One `<subgraph>` block: the edge it extends plus the child conditions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChildBlock {
    pub parent_edge_id: u64,
    pub start_node: NodeId,
    pub caller: NodeId,
    pub remaining_depth: u32,
    pub num_edges: u64,
    pub start_edge_id: u64,
    pub latency_ms: u64,
    pub start_communication_at_ms: u64,
}

impl ChildBlock {
    /// Completes the block into layer conditions by attaching the service id
    /// carried by the enclosing session or sample.
    pub fn into_conditions(self, service_id: &NodeId) -> LayerConditions {
        LayerConditions {
            start_node: self.start_node,
            caller: self.caller,
            remaining_depth: self.remaining_depth,
            num_edges: self.num_edges,
            start_edge_id: self.start_edge_id,
            latency_ms: self.latency_ms,
            start_communication_at_ms: self.start_communication_at_ms,
            service_id: service_id.clone(),
            parent_edge_id: Some(self.parent_edge_id),
        }
    }
}

/// A parsed layer completion: edges plus raw child blocks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedLayer {
    pub edges: Vec<LayerEdge>,
    pub children: Vec<ChildBlock>,
}

impl ParsedLayer {
    pub fn children_conditions(&self, service_id: &NodeId) -> Vec<LayerConditions> {
        self.children
            .iter()
            .cloned()
            .map(|c| c.into_conditions(service_id))
            .collect()
    }
}

fn parse_u64(s: &str) -> Option<u64> {
    let s = s.trim();
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

fn parse_i64(s: &str) -> Option<i64> {
    let s = s.trim();
    let digits = s.strip_prefix('-').unwrap_or(s);
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

fn parse_node(s: &str) -> Option<NodeId> {
    NodeId::new(s.trim()).ok()
}

fn parse_token(s: &str) -> Option<String> {
    let t = s.trim();
    if t.is_empty() || t.contains(',') || t.contains('\n') {
        None
    } else {
        Some(t.to_string())
    }
}

fn time_clause(rest: &str) -> Option<i64> {
    parse_i64(rest.trim().strip_suffix(MS_SUFFIX)?)
}

/// Parses a five-clause layer edge line in any clause order.
fn parse_layer_edge_line(line: &str) -> Result<LayerEdge, ParseError> {
    let mut flat: Option<u64> = None;
    let mut dest: Option<NodeId> = None;
    let mut comm: Option<String> = None;
    let mut start: Option<i64> = None;
    let mut finish: Option<i64> = None;
    let mut clauses = 0usize;
    for clause in line.split(',') {
        let clause = clause.trim();
        if clause.is_empty() {
            return Err(bad_line(line));
        }
        clauses += 1;
        if let Some(rest) = clause.strip_prefix(CLAUSE_EDGE_ID) {
            if flat.replace(parse_u64(rest).ok_or_else(|| bad_line(line))?).is_some() {
                return Err(bad_line(line));
            }
        } else if let Some(rest) = clause.strip_prefix(CLAUSE_DESTINATION) {
            if dest.replace(parse_node(rest).ok_or_else(|| bad_line(line))?).is_some() {
                return Err(bad_line(line));
            }
        } else if let Some(rest) = clause.strip_prefix(CLAUSE_TYPE) {
            if comm.replace(parse_token(rest).ok_or_else(|| bad_line(line))?).is_some() {
                return Err(bad_line(line));
            }
        } else if let Some(rest) = clause.strip_prefix(CLAUSE_START) {
            if start.replace(time_clause(rest).ok_or_else(|| bad_line(line))?).is_some() {
                return Err(bad_line(line));
            }
        } else if let Some(rest) = clause.strip_prefix(CLAUSE_FINISH) {
            if finish.replace(time_clause(rest).ok_or_else(|| bad_line(line))?).is_some() {
                return Err(bad_line(line));
            }
        } else {
            return Err(bad_line(line));
        }
    }
    if clauses != 5 {
        return Err(bad_line(line));
    }
    Ok(LayerEdge {
        flat_edge_id: flat.ok_or_else(|| bad_line(line))?,
        destination: dest.ok_or_else(|| bad_line(line))?,
        comm_type: comm.ok_or_else(|| bad_line(line))?,
        start_ms: start.ok_or_else(|| bad_line(line))?,
        finish_ms: finish.ok_or_else(|| bad_line(line))?,
    })
}

/// Parses a six-clause tabular edge line (dot-decimal id, with source).
fn parse_tabular_edge_line(line: &str) -> Result<crate::model::Edge, ParseError> {
    let mut id: Option<EdgeId> = None;
    let mut source: Option<NodeId> = None;
    let mut dest: Option<NodeId> = None;
    let mut comm: Option<String> = None;
    let mut start: Option<i64> = None;
    let mut finish: Option<i64> = None;
    let mut clauses = 0usize;
    for clause in line.split(',') {
        let clause = clause.trim();
        if clause.is_empty() {
            return Err(bad_line(line));
        }
        clauses += 1;
        if let Some(rest) = clause.strip_prefix(CLAUSE_EDGE_ID) {
            let parsed: EdgeId = rest.trim().parse().map_err(|_| bad_line(line))?;
            if id.replace(parsed).is_some() {
                return Err(bad_line(line));
            }
        } else if let Some(rest) = clause.strip_prefix(CLAUSE_SOURCE) {
            if source.replace(parse_node(rest).ok_or_else(|| bad_line(line))?).is_some() {
                return Err(bad_line(line));
            }
        } else if let Some(rest) = clause.strip_prefix(CLAUSE_DESTINATION) {
            if dest.replace(parse_node(rest).ok_or_else(|| bad_line(line))?).is_some() {
                return Err(bad_line(line));
            }
        } else if let Some(rest) = clause.strip_prefix(CLAUSE_TYPE) {
            if comm.replace(parse_token(rest).ok_or_else(|| bad_line(line))?).is_some() {
                return Err(bad_line(line));
            }
        } else if let Some(rest) = clause.strip_prefix(CLAUSE_START) {
            if start.replace(time_clause(rest).ok_or_else(|| bad_line(line))?).is_some() {
                return Err(bad_line(line));
            }
        } else if let Some(rest) = clause.strip_prefix(CLAUSE_FINISH) {
            if finish.replace(time_clause(rest).ok_or_else(|| bad_line(line))?).is_some() {
                return Err(bad_line(line));
            }
        } else {
            return Err(bad_line(line));
        }
    }
    if clauses != 6 {
        return Err(bad_line(line));
    }
    let start = start.ok_or_else(|| bad_line(line))?;
    let finish = finish.ok_or_else(|| bad_line(line))?;
    if start < 0 || finish < 0 {
        return Err(bad_line(line));
    }
    Ok(crate::model::Edge {
        edge_id: id.ok_or_else(|| bad_line(line))?,
        source: source.ok_or_else(|| bad_line(line))?,
        destination: dest.ok_or_else(|| bad_line(line))?,
        comm_type: comm.ok_or_else(|| bad_line(line))?,
        start_ms: start as u64,
        finish_ms: finish as u64,
    })
}

#[derive(Default)]
struct BlockFields {
    map: HashMap<&'static str, u64>,
    start_node: Option<NodeId>,
    caller: Option<NodeId>,
}

impl BlockFields {
    fn set(&mut self, name: &str, value: &str) -> Result<(), ParseError> {
        match name {
            FIELD_START_NODE => {
                let node = parse_node(value).ok_or_else(|| bad_field(name))?;
                if self.start_node.replace(node).is_some() {
                    return Err(bad_field(name));
                }
            }
            FIELD_CALLER => {
                let node = parse_node(value).ok_or_else(|| bad_field(name))?;
                if self.caller.replace(node).is_some() {
                    return Err(bad_field(name));
                }
            }
            FIELD_EDGE_REF | FIELD_REMAINING_DEPTH | FIELD_NUM_EDGES | FIELD_START_EDGE_ID
            | FIELD_LATENCY | FIELD_START_COMM => {
                let key = match name {
                    FIELD_EDGE_REF => FIELD_EDGE_REF,
                    FIELD_REMAINING_DEPTH => FIELD_REMAINING_DEPTH,
                    FIELD_NUM_EDGES => FIELD_NUM_EDGES,
                    FIELD_START_EDGE_ID => FIELD_START_EDGE_ID,
                    FIELD_LATENCY => FIELD_LATENCY,
                    _ => FIELD_START_COMM,
                };
                let v = parse_u64(value).ok_or_else(|| bad_field(name))?;
                if self.map.insert(key, v).is_some() {
                    return Err(bad_field(name));
                }
            }
            other => return Err(bad_field(other)),
        }
        Ok(())
    }

    fn finish(self) -> Result<ChildBlock, ParseError> {
        let need = |key: &'static str| self.map.get(key).copied().ok_or_else(|| bad_field(key));
        Ok(ChildBlock {
            parent_edge_id: need(FIELD_EDGE_REF)?,
            start_node: self.start_node.ok_or_else(|| bad_field(FIELD_START_NODE))?,
            caller: self.caller.ok_or_else(|| bad_field(FIELD_CALLER))?,
            remaining_depth: need(FIELD_REMAINING_DEPTH)? as u32,
            num_edges: need(FIELD_NUM_EDGES)?,
            start_edge_id: need(FIELD_START_EDGE_ID)?,
            latency_ms: need(FIELD_LATENCY)?,
            start_communication_at_ms: need(FIELD_START_COMM)?,
        })
    }
}

fn is_tag(line: &str) -> bool {
    matches!(
        line,
        TAG_EDGES_OPEN | TAG_EDGES_CLOSE | TAG_SUBGRAPH_OPEN | TAG_SUBGRAPH_CLOSE
    )
}

/// Parses one layer completion: exactly one `<edges>` block followed by zero
/// or more `<subgraph>` blocks. Text before the `<edges>` block (an echoed
/// header, say) is ignored; scratchpad lines are recognized and skipped.
pub fn parse_layer_output(text: &str) -> Result<ParsedLayer, ParseError> {
    enum State {
        Preamble,
        Edges,
        AfterEdges,
        Subgraph(BlockFields),
    }
    let mut state = State::Preamble;
    let mut edges = Vec::new();
    let mut children = Vec::new();

    for raw in text.lines() {
        let line = raw.trim();
        state = match state {
            State::Preamble => {
                if line == TAG_EDGES_OPEN {
                    State::Edges
                } else if is_tag(line) {
                    return Err(ParseError::MissingEdgesBlock);
                } else {
                    State::Preamble
                }
            }
            State::Edges => {
                if line == TAG_EDGES_CLOSE {
                    State::AfterEdges
                } else if line.is_empty() || line.starts_with(SCRATCHPAD_EDGE_COUNT) {
                    State::Edges
                } else if is_tag(line) {
                    return Err(ParseError::UnclosedBlock {
                        tag: "edges".into(),
                    });
                } else {
                    edges.push(parse_layer_edge_line(line)?);
                    State::Edges
                }
            }
            State::AfterEdges => {
                if line == TAG_SUBGRAPH_OPEN {
                    State::Subgraph(BlockFields::default())
                } else if is_tag(line) {
                    return Err(bad_field(line));
                } else {
                    // Blank lines and trailing prose are tolerated.
                    State::AfterEdges
                }
            }
            State::Subgraph(mut fields) => {
                if line == TAG_SUBGRAPH_CLOSE {
                    children.push(fields.finish()?);
                    State::AfterEdges
                } else if line.is_empty() || line.starts_with(SCRATCHPAD_CHILD_DEPTH) {
                    State::Subgraph(fields)
                } else if is_tag(line) {
                    return Err(ParseError::UnclosedBlock {
                        tag: "subgraph".into(),
                    });
                } else if let Some((name, value)) = line.split_once(':') {
                    fields.set(name.trim(), value)?;
                    State::Subgraph(fields)
                } else {
                    return Err(bad_field(line));
                }
            }
        };
    }
    match state {
        State::Preamble => Err(ParseError::MissingEdgesBlock),
        State::Edges => Err(ParseError::UnclosedBlock {
            tag: "edges".into(),
        }),
        State::Subgraph(_) => Err(ParseError::UnclosedBlock {
            tag: "subgraph".into(),
        }),
        State::AfterEdges => Ok(ParsedLayer { edges, children }),
    }
}

/// [`parse_layer_output`] plus service-id completion from the prompting
/// conditions.
pub fn parse_layer(
    text: &str,
    conds: &LayerConditions,
) -> Result<(Vec<LayerEdge>, Vec<LayerConditions>), ParseError> {
    let parsed = parse_layer_output(text)?;
    let children = parsed.children_conditions(&conds.service_id);
    Ok((parsed.edges, children))
}

/// Parses a tabular sample back into a call graph. Inverse of
/// `encode_tabular_sample` up to attribute dropping and clause order; the
/// reconstructed graph must pass the structural check.
pub fn parse_tabular_sample(text: &str) -> Result<crate::model::CallGraph, ParseError> {
    enum State {
        Header,
        Edges,
        Trailer,
    }
    let mut state = State::Header;
    let mut service: Option<NodeId> = None;
    let mut edges = Vec::new();
    for raw in text.lines() {
        let line = raw.trim();
        state = match state {
            State::Header => {
                if line == TAG_EDGES_OPEN {
                    State::Edges
                } else if is_tag(line) {
                    return Err(ParseError::MissingEdgesBlock);
                } else if let Some((name, value)) = line.split_once(':') {
                    if name.trim() == FIELD_SERVICE {
                        let node = parse_node(value).ok_or_else(|| bad_field(FIELD_SERVICE))?;
                        if service.replace(node).is_some() {
                            return Err(bad_field(FIELD_SERVICE));
                        }
                    }
                    // num_edges / depth / latency header values are prompts,
                    // not structure; reconstruction ignores them.
                    State::Header
                } else {
                    State::Header
                }
            }
            State::Edges => {
                if line == TAG_EDGES_CLOSE {
                    State::Trailer
                } else if line.is_empty() {
                    State::Edges
                } else if is_tag(line) {
                    return Err(ParseError::UnclosedBlock {
                        tag: "edges".into(),
                    });
                } else {
                    edges.push(parse_tabular_edge_line(line)?);
                    State::Edges
                }
            }
            State::Trailer => {
                if is_tag(line) {
                    return Err(bad_field(line));
                }
                State::Trailer
            }
        };
    }
    match state {
        State::Header => Err(ParseError::MissingEdgesBlock),
        State::Edges => Err(ParseError::UnclosedBlock {
            tag: "edges".into(),
        }),
        State::Trailer => {
            let service_id = service.ok_or_else(|| bad_field(FIELD_SERVICE))?;
            edges.sort_by(|a, b| a.edge_id.cmp(&b.edge_id));
            let graph = crate::model::CallGraph {
                trace_id: String::new(),
                service_id,
                edges,
            };
            let report = check_structure(&graph);
            if !report.is_valid() {
                return Err(ParseError::Structural(report));
            }
            Ok(graph)
        }
    }
}

#[derive(Default)]
struct PartialHeader {
    start_node: Option<NodeId>,
    start_edge_id: Option<u64>,
    caller: Option<NodeId>,
}

struct TextLayer {
    header: PartialHeader,
    parsed: ParsedLayer,
}

/// Parses a full recursive sample (service line plus layer sequence) back
/// into a call graph. Layers are linked to their parent edges by matching
/// each header's `start_edge_id` against the subgraph blocks emitted before
/// it, then folded with the standard assembly.
pub fn parse_recursive_sample(text: &str) -> Result<crate::model::CallGraph, ParseError> {
    let mut lines = text.lines().peekable();

    // Leading service line.
    let mut service: Option<NodeId> = None;
    for line in lines.by_ref() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match line.split_once(':') {
            Some((name, value)) if name.trim() == FIELD_SERVICE => {
                service = Some(parse_node(value).ok_or_else(|| bad_field(FIELD_SERVICE))?);
            }
            _ => return Err(bad_field(FIELD_SERVICE)),
        }
        break;
    }
    let service_id = service.ok_or_else(|| bad_field(FIELD_SERVICE))?;

    // Layer sequence.
    enum State {
        Header(PartialHeader),
        Edges(PartialHeader, Vec<LayerEdge>),
        AfterEdges(TextLayer),
        Subgraph(TextLayer, BlockFields),
    }
    let mut layers: Vec<TextLayer> = Vec::new();
    let mut state = State::Header(PartialHeader::default());

    fn header_set(h: &mut PartialHeader, name: &str, value: &str) -> Result<(), ParseError> {
        match name {
            FIELD_START_NODE => {
                h.start_node = Some(parse_node(value).ok_or_else(|| bad_field(name))?);
            }
            FIELD_CALLER => {
                h.caller = Some(parse_node(value).ok_or_else(|| bad_field(name))?);
            }
            FIELD_START_EDGE_ID => {
                h.start_edge_id = Some(parse_u64(value).ok_or_else(|| bad_field(name))?);
            }
            FIELD_REMAINING_DEPTH | FIELD_NUM_EDGES | FIELD_LATENCY | FIELD_START_COMM
            | FIELD_SERVICE => {
                // Prompt attributes; structure does not depend on them.
            }
            other => return Err(bad_field(other)),
        }
        Ok(())
    }

    for raw in lines {
        let line = raw.trim();
        state = match state {
            State::Header(mut h) => {
                if line == TAG_EDGES_OPEN {
                    State::Edges(h, Vec::new())
                } else if is_tag(line) {
                    return Err(ParseError::MissingEdgesBlock);
                } else if line.is_empty() {
                    State::Header(h)
                } else if let Some((name, value)) = line.split_once(':') {
                    header_set(&mut h, name.trim(), value)?;
                    State::Header(h)
                } else {
                    return Err(bad_field(line));
                }
            }
            State::Edges(h, mut edges) => {
                if line == TAG_EDGES_CLOSE {
                    State::AfterEdges(TextLayer {
                        header: h,
                        parsed: ParsedLayer {
                            edges,
                            children: Vec::new(),
                        },
                    })
                } else if line.is_empty() || line.starts_with(SCRATCHPAD_EDGE_COUNT) {
                    State::Edges(h, edges)
                } else if is_tag(line) {
                    return Err(ParseError::UnclosedBlock {
                        tag: "edges".into(),
                    });
                } else {
                    edges.push(parse_layer_edge_line(line)?);
                    State::Edges(h, edges)
                }
            }
            State::AfterEdges(layer) => {
                if line == TAG_SUBGRAPH_OPEN {
                    State::Subgraph(layer, BlockFields::default())
                } else if line.is_empty() {
                    State::AfterEdges(layer)
                } else if is_tag(line) {
                    return Err(bad_field(line));
                } else if let Some((name, value)) = line.split_once(':') {
                    // Start of the next layer's header.
                    layers.push(layer);
                    let mut h = PartialHeader::default();
                    header_set(&mut h, name.trim(), value)?;
                    State::Header(h)
                } else {
                    return Err(bad_field(line));
                }
            }
            State::Subgraph(mut layer, mut fields) => {
                if line == TAG_SUBGRAPH_CLOSE {
                    layer.parsed.children.push(fields.finish()?);
                    State::AfterEdges(layer)
                } else if line.is_empty() || line.starts_with(SCRATCHPAD_CHILD_DEPTH) {
                    State::Subgraph(layer, fields)
                } else if is_tag(line) {
                    return Err(ParseError::UnclosedBlock {
                        tag: "subgraph".into(),
                    });
                } else if let Some((name, value)) = line.split_once(':') {
                    fields.set(name.trim(), value)?;
                    State::Subgraph(layer, fields)
                } else {
                    return Err(bad_field(line));
                }
            }
        };
    }
    match state {
        State::Header(_) => return Err(ParseError::MissingEdgesBlock),
        State::Edges(..) => {
            return Err(ParseError::UnclosedBlock {
                tag: "edges".into(),
            })
        }
        State::Subgraph(..) => {
            return Err(ParseError::UnclosedBlock {
                tag: "subgraph".into(),
            })
        }
        State::AfterEdges(layer) => layers.push(layer),
    }

    // Link each non-first layer to the block that declared it.
    let mut block_by_start: HashMap<u64, ChildBlock> = HashMap::new();
    for layer in &layers {
        for block in &layer.parsed.children {
            if block_by_start
                .insert(block.start_edge_id, block.clone())
                .is_some()
            {
                return Err(bad_field(FIELD_START_EDGE_ID));
            }
        }
    }
    let mut assembled: Vec<(LayerConditions, Vec<LayerEdge>)> = Vec::new();
    for (i, layer) in layers.iter().enumerate() {
        let start_edge_id = layer
            .header
            .start_edge_id
            .ok_or_else(|| bad_field(FIELD_START_EDGE_ID))?;
        let conds = if i == 0 {
            let start_node = layer
                .header
                .start_node
                .clone()
                .ok_or_else(|| bad_field(FIELD_START_NODE))?;
            LayerConditions {
                caller: layer.header.caller.clone().unwrap_or_else(|| start_node.clone()),
                start_node,
                remaining_depth: 0,
                num_edges: 0,
                start_edge_id,
                latency_ms: 0,
                start_communication_at_ms: 0,
                service_id: service_id.clone(),
                parent_edge_id: None,
            }
        } else {
            block_by_start
                .get(&start_edge_id)
                .cloned()
                .ok_or_else(|| bad_field(FIELD_START_EDGE_ID))?
                .into_conditions(&service_id)
        };
        assembled.push((conds, layer.parsed.edges.clone()));
    }

    let graph = assemble_layers(
        String::new(),
        service_id,
        assembled.iter().map(|(c, e)| (c, e.as_slice())),
    )
    .map_err(|e| bad_field(e.to_string()))?;
    let report = check_structure(&graph);
    if !report.is_valid() {
        return Err(ParseError::Structural(report));
    }
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_graph, canonical_hash, decompose_layers, EdgeRecord, ViolationCode};

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

    fn branching() -> crate::model::CallGraph {
        build_graph(
            "t",
            NodeId::new("S_1").unwrap(),
            [
                rec("0", "Client", "MS_1", "HTTP", 0, 24),
                rec("0.1", "MS_1", "MS_2", "RPC", 1, 5),
                rec("0.2", "MS_1", "MS_3", "RPC", 6, 20),
                rec("0.2.1", "MS_3", "MS_4", "DB", 7, 12),
            ],
        )
        .unwrap()
    }

    #[test]
    fn layer_roundtrip() {
        let g = branching();
        for layer in decompose_layers(&g) {
            for with_intermediate in [false, true] {
                let text = encode_layer_body(
                    &layer.conditions,
                    &layer.edges,
                    &layer.children,
                    with_intermediate,
                );
                let (edges, children) = parse_layer(&text, &layer.conditions).unwrap();
                assert_eq!(edges, layer.edges);
                assert_eq!(children, layer.children);
            }
        }
    }

    #[test]
    fn missing_edges_block() {
        assert_eq!(
            parse_layer_output("start_node: MS_1").unwrap_err(),
            ParseError::MissingEdgesBlock
        );
    }

    #[test]
    fn four_field_edge_line_rejected() {
        let text = "<edges>\nEdge ID is 0, Destination is MS_1, Type is RPC, Communication starts at 0 ms\n</edges>\n";
        assert!(matches!(
            parse_layer_output(text).unwrap_err(),
            ParseError::BadEdgeLine { .. }
        ));
    }

    #[test]
    fn unclosed_block() {
        assert!(matches!(
            parse_layer_output("<edges>\n").unwrap_err(),
            ParseError::UnclosedBlock { .. }
        ));
        assert!(matches!(
            parse_layer_output("<edges>\n</edges>\n<subgraph>\nedge_id: 0\n").unwrap_err(),
            ParseError::UnclosedBlock { .. }
        ));
    }

    #[test]
    fn second_edges_block_rejected() {
        let text = "<edges>\n</edges>\n<edges>\n</edges>\n";
        assert!(parse_layer_output(text).is_err());
    }

    #[test]
    fn clause_order_independence() {
        let text = "<edges>\nCommunication finishes at 24 ms, Type is HTTP, Edge ID is 0, Communication starts at 0 ms, Destination is MS_1\n</edges>\n";
        let parsed = parse_layer_output(text).unwrap();
        assert_eq!(parsed.edges[0].flat_edge_id, 0);
        assert_eq!(parsed.edges[0].finish_ms, 24);
    }

    #[test]
    fn tabular_roundtrip_hash() {
        let g = branching();
        for seed in 0..5 {
            let sample = encode_tabular_sample(&g, seed, &AttrDropMask::keep_all());
            let parsed = parse_tabular_sample(&sample.text).unwrap();
            assert_eq!(canonical_hash(&parsed), canonical_hash(&g));
        }
    }

    #[test]
    fn tabular_bad_edge_id() {
        let text = "service_id: S_1\n<edges>\nEdge ID is zero, Source is Client, Destination is MS_1, Type is HTTP, Communication starts at 0 ms, Communication finishes at 5 ms\n</edges>\n";
        assert!(matches!(
            parse_tabular_sample(text).unwrap_err(),
            ParseError::BadEdgeLine { .. }
        ));
    }

    #[test]
    fn tabular_structural_violation() {
        let text = "service_id: S_1\n<edges>\nEdge ID is 0, Source is Client, Destination is MS_1, Type is HTTP, Communication starts at 0 ms, Communication finishes at 10 ms\nEdge ID is 0.1, Source is MS_1, Destination is MS_2, Type is RPC, Communication starts at 0 ms, Communication finishes at 11 ms\n</edges>\n";
        match parse_tabular_sample(text).unwrap_err() {
            ParseError::Structural(report) => {
                assert!(report.has(ViolationCode::GTimeNest));
            }
            other => panic!("expected structural violation, got {other:?}"),
        }
    }

    #[test]
    fn recursive_roundtrip_hash() {
        let g = branching().canonicalized();
        let sample = encode_recursive_sample(&g, &AttrDropMask::keep_all());
        let parsed = parse_recursive_sample(&sample.text).unwrap();
        assert_eq!(canonical_hash(&parsed), canonical_hash(&g));

        // Dropping optional attributes does not lose structure.
        let sample = encode_recursive_sample(&g, &AttrDropMask::drop_all());
        let parsed = parse_recursive_sample(&sample.text).unwrap();
        assert_eq!(canonical_hash(&parsed), canonical_hash(&g));
    }
}
