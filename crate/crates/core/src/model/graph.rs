//! Call graphs: construction, structural checks, attributes, and canonical
//! ordering.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::id::{EdgeId, NodeId};
use super::violation::{ValidationReport, Violation, ViolationCode, ViolationLocation};

/// One RPC communication between two nodes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub edge_id: EdgeId,
    pub source: NodeId,
    pub destination: NodeId,
    /// Uppercase token, e.g. `HTTP`, `RPC`, `MQ`, `DB`, `MC`.
    pub comm_type: String,
    pub start_ms: u64,
    pub finish_ms: u64,
}

impl Edge {
    pub fn duration_ms(&self) -> u64 {
        self.finish_ms.saturating_sub(self.start_ms)
    }
}

/// The full DAG of calls triggered by one user request.
///
/// A structurally valid graph has exactly one root edge (path length 1), a
/// parent for every other edge via the dot-decimal prefix chain, child sources
/// matching parent destinations, and child intervals nested inside parent
/// intervals. [`build_graph`] enforces this; [`check_structure`] reports every
/// violation of it for arbitrary assembled graphs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallGraph {
    pub trace_id: String,
    pub service_id: NodeId,
    pub edges: Vec<Edge>,
}

/// Graph-level summary used as the generation prompt.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphAttributes {
    pub service_id: NodeId,
    pub num_edges: u64,
    /// Maximum number of layers along any root-to-leaf path; 1 for a
    /// single-edge graph.
    pub depth: u32,
    /// Root edge finish minus root edge start.
    pub latency_ms: u64,
}

impl CallGraph {
    /// The unique root edge. Panics on structurally invalid graphs; use
    /// [`check_structure`] first when the origin is untrusted.
    pub fn root(&self) -> &Edge {
        self.edges
            .iter()
            .find(|e| e.edge_id.is_root())
            .expect("valid call graph has a root edge")
    }

    pub fn attributes(&self) -> GraphAttributes {
        let root = self.root();
        GraphAttributes {
            service_id: self.service_id.clone(),
            num_edges: self.edges.len() as u64,
            depth: self
                .edges
                .iter()
                .map(|e| e.edge_id.depth() as u32)
                .max()
                .unwrap_or(0),
            latency_ms: root.finish_ms - root.start_ms,
        }
    }

    /// Rewrites the graph into canonical form: all times shifted so the root
    /// starts at 0, and sibling edges renumbered in layer order (ascending
    /// start time, ties by destination name). Layer decomposition emits edges
    /// in exactly this order, so canonical graphs survive a
    /// decompose/reassemble cycle bit-for-bit.
    ///
    /// Returns the graph unchanged if it is not structurally valid.
    pub fn canonicalized(self) -> CallGraph {
        if !check_structure(&self).is_valid() {
            return self;
        }
        let base = self.root().start_ms;
        let mut children: HashMap<&[u64], Vec<&Edge>> = HashMap::new();
        let mut root = None;
        for e in &self.edges {
            match e.edge_id.parent() {
                Some(_) => {
                    let comps = e.edge_id.components();
                    children
                        .entry(&comps[..comps.len() - 1])
                        .or_default()
                        .push(e);
                }
                None => root = Some(e),
            }
        }
        let root = root.expect("checked");
        let mut out: Vec<Edge> = Vec::with_capacity(self.edges.len());
        let mut stack: Vec<(&Edge, EdgeId)> = vec![(root, EdgeId::root(0))];
        while let Some((edge, new_id)) = stack.pop() {
            let mut kids: Vec<&Edge> = children
                .get(edge.edge_id.components())
                .map(|v| v.clone())
                .unwrap_or_default();
            kids.sort_by(sibling_order);
            for (k, kid) in kids.into_iter().enumerate().rev() {
                stack.push((kid, new_id.child(k as u64 + 1)));
            }
            out.push(Edge {
                edge_id: new_id,
                source: edge.source.clone(),
                destination: edge.destination.clone(),
                comm_type: edge.comm_type.clone(),
                start_ms: edge.start_ms - base,
                finish_ms: edge.finish_ms - base,
            });
        }
        out.sort_by(|a, b| a.edge_id.cmp(&b.edge_id));
        CallGraph {
            trace_id: self.trace_id,
            service_id: self.service_id,
            edges: out,
        }
    }
}

/// Canonical order of edges sharing a parent: ascending start time, ties by
/// destination name, then by existing id for stability.
pub(crate) fn sibling_order(a: &&Edge, b: &&Edge) -> std::cmp::Ordering {
    a.start_ms
        .cmp(&b.start_ms)
        .then_with(|| a.destination.cmp(&b.destination))
        .then_with(|| a.edge_id.cmp(&b.edge_id))
}

/// A raw edge row before validation. Optional fields model missing cells in
/// dirty trace data.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EdgeRecord {
    /// Dot-decimal id string, e.g. "0.1".
    pub edge_id: String,
    pub source: Option<String>,
    pub destination: Option<String>,
    pub comm_type: Option<String>,
    pub start_ms: Option<u64>,
    pub finish_ms: Option<u64>,
}

/// Errors raised while building a call graph from raw records.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BuildGraphError {
    #[error("record {edge_id:?} lacks required field {field}")]
    MissingField { edge_id: String, field: &'static str },
    #[error("edge {edge_id} has no parent edge in the graph")]
    Disconnected { edge_id: EdgeId },
    #[error("duplicate edge id {edge_id}")]
    DuplicateEdgeId { edge_id: EdgeId },
    #[error("edge {edge_id} violates time nesting: {detail}")]
    TimeNestingViolation { edge_id: EdgeId, detail: String },
    #[error("expected exactly one root edge, found {count}")]
    MultipleRoots { count: usize },
    #[error("edge {edge_id} source does not match its parent's destination")]
    SourceMismatch { edge_id: EdgeId },
}

/// Builds a [`CallGraph`] from raw records, enforcing every structural
/// invariant. Edges come out sorted by dot-decimal id in numeric component
/// order. Times are kept as given; see [`CallGraph::canonicalized`] for
/// root-at-zero normalization.
pub fn build_graph(
    trace_id: impl Into<String>,
    service_id: NodeId,
    records: impl IntoIterator<Item = EdgeRecord>,
) -> Result<CallGraph, BuildGraphError> {
    let mut edges = Vec::new();
    for rec in records {
        let missing = |field: &'static str| BuildGraphError::MissingField {
            edge_id: rec.edge_id.clone(),
            field,
        };
        let edge_id: EdgeId = rec.edge_id.parse().map_err(|_| missing("edge_id"))?;
        let source = rec
            .source
            .as_deref()
            .ok_or_else(|| missing("source"))
            .and_then(|s| NodeId::new(s).map_err(|_| missing("source")))?;
        let destination = rec
            .destination
            .as_deref()
            .ok_or_else(|| missing("destination"))
            .and_then(|s| NodeId::new(s).map_err(|_| missing("destination")))?;
        let comm_type = rec.comm_type.clone().ok_or_else(|| missing("comm_type"))?;
        if comm_type.trim().is_empty() || comm_type.contains(',') || comm_type.contains('\n') {
            return Err(missing("comm_type"));
        }
        let start_ms = rec.start_ms.ok_or_else(|| missing("start_ms"))?;
        let finish_ms = rec.finish_ms.ok_or_else(|| missing("finish_ms"))?;
        if start_ms > finish_ms {
            return Err(BuildGraphError::TimeNestingViolation {
                edge_id,
                detail: format!("start {start_ms} after finish {finish_ms}"),
            });
        }
        edges.push(Edge {
            edge_id,
            source,
            destination,
            comm_type,
            start_ms,
            finish_ms,
        });
    }

    edges.sort_by(|a, b| a.edge_id.cmp(&b.edge_id));
    let mut seen: HashSet<&EdgeId> = HashSet::new();
    for e in &edges {
        if !seen.insert(&e.edge_id) {
            return Err(BuildGraphError::DuplicateEdgeId {
                edge_id: e.edge_id.clone(),
            });
        }
    }

    let roots = edges.iter().filter(|e| e.edge_id.is_root()).count();
    if roots != 1 {
        return Err(BuildGraphError::MultipleRoots { count: roots });
    }

    let by_id: HashMap<&EdgeId, &Edge> = edges.iter().map(|e| (&e.edge_id, e)).collect();
    for e in &edges {
        if let Some(parent_id) = e.edge_id.parent() {
            let parent = by_id
                .get(&parent_id)
                .ok_or_else(|| BuildGraphError::Disconnected {
                    edge_id: e.edge_id.clone(),
                })?;
            if e.source != parent.destination {
                return Err(BuildGraphError::SourceMismatch {
                    edge_id: e.edge_id.clone(),
                });
            }
            if e.start_ms < parent.start_ms || e.finish_ms > parent.finish_ms {
                return Err(BuildGraphError::TimeNestingViolation {
                    edge_id: e.edge_id.clone(),
                    detail: format!(
                        "child [{}, {}] not nested in parent [{}, {}]",
                        e.start_ms, e.finish_ms, parent.start_ms, parent.finish_ms
                    ),
                });
            }
        }
    }

    Ok(CallGraph {
        trace_id: trace_id.into(),
        service_id,
        edges,
    })
}

/// Reports every structural violation in an arbitrary assembled graph. The
/// report is empty exactly when [`build_graph`] would have accepted the same
/// edges.
pub fn check_structure(g: &CallGraph) -> ValidationReport {
    let mut violations = Vec::new();

    let mut seen: HashSet<&EdgeId> = HashSet::new();
    for e in &g.edges {
        if !seen.insert(&e.edge_id) {
            violations.push(
                Violation::new(
                    ViolationCode::GDupId,
                    format!("duplicate edge id {}", e.edge_id),
                )
                .at(ViolationLocation::GraphEdge(e.edge_id.clone())),
            );
        }
        if e.start_ms > e.finish_ms {
            violations.push(
                Violation::new(
                    ViolationCode::GEdgeTime,
                    format!(
                        "edge {} starts at {} after finishing at {}",
                        e.edge_id, e.start_ms, e.finish_ms
                    ),
                )
                .at(ViolationLocation::GraphEdge(e.edge_id.clone())),
            );
        }
    }

    let roots = g.edges.iter().filter(|e| e.edge_id.is_root()).count();
    if roots != 1 {
        violations.push(Violation::new(
            ViolationCode::GRoot,
            format!("expected exactly one root edge, found {roots}"),
        ));
    }

    let mut by_id: HashMap<&EdgeId, &Edge> = HashMap::new();
    for e in &g.edges {
        by_id.entry(&e.edge_id).or_insert(e);
    }
    for e in &g.edges {
        let Some(parent_id) = e.edge_id.parent() else {
            continue;
        };
        let Some(parent) = by_id.get(&parent_id) else {
            violations.push(
                Violation::new(
                    ViolationCode::GParentLink,
                    format!("edge {} has no parent {} in the graph", e.edge_id, parent_id),
                )
                .at(ViolationLocation::GraphEdge(e.edge_id.clone())),
            );
            continue;
        };
        if e.source != parent.destination {
            violations.push(
                Violation::new(
                    ViolationCode::GSourceMatch,
                    format!(
                        "edge {} source {} does not match parent destination {}",
                        e.edge_id, e.source, parent.destination
                    ),
                )
                .at(ViolationLocation::GraphEdge(e.edge_id.clone())),
            );
        }
        if e.start_ms < parent.start_ms || e.finish_ms > parent.finish_ms {
            violations.push(
                Violation::new(
                    ViolationCode::GTimeNest,
                    format!(
                        "edge {} interval [{}, {}] not nested in parent [{}, {}]",
                        e.edge_id, e.start_ms, e.finish_ms, parent.start_ms, parent.finish_ms
                    ),
                )
                .at(ViolationLocation::GraphEdge(e.edge_id.clone())),
            );
        }
    }

    ValidationReport { violations }
}

/// Serializes a graph back into raw records (the inverse of [`build_graph`]).
pub fn to_records(g: &CallGraph) -> Vec<EdgeRecord> {
    g.edges
        .iter()
        .map(|e| EdgeRecord {
            edge_id: e.edge_id.to_string(),
            source: Some(e.source.to_string()),
            destination: Some(e.destination.to_string()),
            comm_type: Some(e.comm_type.clone()),
            start_ms: Some(e.start_ms),
            finish_ms: Some(e.finish_ms),
        })
        .collect()
}

/// Convenience constructor used across tests and fixtures.
pub fn edge(
    id: &str,
    source: &str,
    destination: &str,
    comm_type: &str,
    start_ms: u64,
    finish_ms: u64,
) -> Edge {
    Edge {
        edge_id: id.parse().expect("edge id"),
        source: NodeId::new(source).expect("source"),
        destination: NodeId::new(destination).expect("destination"),
        comm_type: comm_type.to_string(),
        start_ms,
        finish_ms,
    }
}

/// Ordered map from parent path to indices of its child edges, in canonical
/// sibling order. Shared by decomposition and canonicalization.
pub(crate) fn child_index(g: &CallGraph) -> BTreeMap<Vec<u64>, Vec<usize>> {
    let mut children: BTreeMap<Vec<u64>, Vec<usize>> = BTreeMap::new();
    for (i, e) in g.edges.iter().enumerate() {
        if let Some(parent) = e.edge_id.parent() {
            children
                .entry(parent.components().to_vec())
                .or_default()
                .push(i);
        }
    }
    for kids in children.values_mut() {
        kids.sort_by(|&a, &b| sibling_order(&&g.edges[a], &&g.edges[b]));
    }
    children
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(
        id: &str,
        source: &str,
        destination: &str,
        comm_type: &str,
        start: u64,
        finish: u64,
    ) -> EdgeRecord {
        EdgeRecord {
            edge_id: id.to_string(),
            source: Some(source.to_string()),
            destination: Some(destination.to_string()),
            comm_type: Some(comm_type.to_string()),
            start_ms: Some(start),
            finish_ms: Some(finish),
        }
    }

    fn service() -> NodeId {
        NodeId::new("S_123456789").unwrap()
    }

    #[test]
    fn single_edge_graph() {
        let g = build_graph(
            "t1",
            service(),
            [record("0", "Client", "Front end", "HTTP", 0, 24)],
        )
        .unwrap();
        let attrs = g.attributes();
        assert_eq!(attrs.num_edges, 1);
        assert_eq!(attrs.depth, 1);
        assert_eq!(attrs.latency_ms, 24);
        assert!(check_structure(&g).is_valid());
    }

    #[test]
    fn empty_records_fail_with_root_count() {
        let err = build_graph("t1", service(), []).unwrap_err();
        assert_eq!(err, BuildGraphError::MultipleRoots { count: 0 });
    }

    #[test]
    fn three_edge_chain_builds_and_checks() {
        let g = build_graph(
            "t1",
            service(),
            [
                record("0", "Client", "MS_1", "RPC", 0, 10),
                record("0.1", "MS_1", "MS_2", "RPC", 2, 8),
                record("0.1.1", "MS_2", "MS_3", "DB", 3, 7),
            ],
        )
        .unwrap();
        // Exhaustive pairwise parent/child inspection.
        for e in &g.edges {
            if let Some(pid) = e.edge_id.parent() {
                let p = g.edges.iter().find(|x| x.edge_id == pid).unwrap();
                assert_eq!(e.source, p.destination);
                assert!(p.start_ms <= e.start_ms && e.finish_ms <= p.finish_ms);
            }
        }
        let attrs = g.attributes();
        assert_eq!(
            (attrs.num_edges, attrs.depth, attrs.latency_ms),
            (3, 3, 10)
        );
        assert!(check_structure(&g).is_valid());
    }

    #[test]
    fn root_with_two_children_depth() {
        let g = build_graph(
            "t1",
            service(),
            [
                record("0", "Client", "MS_1", "HTTP", 0, 20),
                record("0.1", "MS_1", "MS_2", "RPC", 1, 5),
                record("0.2", "MS_1", "MS_3", "RPC", 6, 15),
            ],
        )
        .unwrap();
        let attrs = g.attributes();
        assert_eq!(attrs.depth, 2);
        assert_eq!(attrs.num_edges, 3);
    }

    #[test]
    fn build_errors() {
        let err = build_graph(
            "t",
            service(),
            [
                record("0", "Client", "MS_1", "RPC", 0, 10),
                record("0.1.1", "MS_2", "MS_3", "DB", 3, 7),
            ],
        )
        .unwrap_err();
        assert!(matches!(err, BuildGraphError::Disconnected { .. }));

        let err = build_graph(
            "t",
            service(),
            [
                record("0", "Client", "MS_1", "RPC", 0, 10),
                record("0", "Client", "MS_1", "RPC", 0, 10),
            ],
        )
        .unwrap_err();
        // Two roots are reported before the duplicate id is reached.
        assert!(matches!(
            err,
            BuildGraphError::DuplicateEdgeId { .. } | BuildGraphError::MultipleRoots { .. }
        ));

        let err = build_graph(
            "t",
            service(),
            [
                record("0", "Client", "MS_1", "RPC", 2, 10),
                record("0.1", "MS_1", "MS_2", "RPC", 1, 8),
            ],
        )
        .unwrap_err();
        assert!(matches!(err, BuildGraphError::TimeNestingViolation { .. }));

        let err = build_graph(
            "t",
            service(),
            [
                record("0", "Client", "MS_1", "RPC", 0, 10),
                record("0.1", "MS_9", "MS_2", "RPC", 1, 8),
            ],
        )
        .unwrap_err();
        assert!(matches!(err, BuildGraphError::SourceMismatch { .. }));

        let mut rec = record("0", "Client", "MS_1", "RPC", 0, 10);
        rec.destination = None;
        let err = build_graph("t", service(), [rec]).unwrap_err();
        assert!(matches!(
            err,
            BuildGraphError::MissingField {
                field: "destination",
                ..
            }
        ));
    }

    #[test]
    fn check_structure_reports_codes() {
        let g = CallGraph {
            trace_id: "t".into(),
            service_id: service(),
            edges: vec![
                edge("0", "Client", "MS_1", "RPC", 2, 10),
                edge("0.1", "MS_1", "MS_2", "RPC", 1, 8),
            ],
        };
        let report = check_structure(&g);
        assert!(report.has(ViolationCode::GTimeNest));

        let g = CallGraph {
            trace_id: "t".into(),
            service_id: service(),
            edges: vec![edge("0", "Client", "MS_1", "RPC", 5, 3)],
        };
        assert_eq!(check_structure(&g).codes(), vec![ViolationCode::GEdgeTime]);
    }

    #[test]
    fn canonicalized_orders_siblings_by_start_time() {
        let g = build_graph(
            "t",
            service(),
            [
                record("0", "Client", "MS_1", "HTTP", 100, 130),
                record("0.1", "MS_1", "MS_2", "RPC", 120, 125),
                record("0.2", "MS_1", "MS_3", "RPC", 105, 115),
            ],
        )
        .unwrap()
        .canonicalized();
        assert_eq!(g.root().start_ms, 0);
        assert_eq!(g.edges[1].edge_id.to_string(), "0.1");
        assert_eq!(g.edges[1].destination.as_str(), "MS_3");
        assert_eq!(g.edges[2].edge_id.to_string(), "0.2");
        assert_eq!(g.edges[2].destination.as_str(), "MS_2");
        assert!(check_structure(&g).is_valid());
    }
}
