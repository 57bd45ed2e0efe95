//! Layer decomposition of call graphs and its inverse.
//!
//! A layer is the set of edges extending one parent edge (for the first
//! layer, the root edge itself). Each layer carries the conditions it was
//! generated under and emits one child-condition block per edge that has its
//! own children. Flat edge ids are laid out pre-order: a layer's edges occupy
//! `start_edge_id .. start_edge_id + k`, followed by the entire subtree of its
//! first child block, then the second, and so on. That makes every block's
//! `start_edge_id` computable from the budgets declared before it.

use serde::{Deserialize, Serialize};

use super::graph::{child_index, CallGraph, Edge};
use super::id::{EdgeId, NodeId};

/// The prompt for one layer: where generation starts, how much structure and
/// time budget remains, and where flat edge numbering picks up.
///
/// Times are absolute within the graph (root at 0 after canonicalization):
/// `latency_ms` is the deadline no communication in the subtree may finish
/// after, and `start_communication_at_ms` the earliest allowed start.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerConditions {
    pub start_node: NodeId,
    pub caller: NodeId,
    pub remaining_depth: u32,
    /// Edges remaining in this subtree: this layer's edges plus all
    /// descendants.
    pub num_edges: u64,
    /// First flat (integer, not dot-decimal) edge id of this layer.
    pub start_edge_id: u64,
    pub latency_ms: u64,
    pub start_communication_at_ms: u64,
    /// Carried for prompting; not part of the rendered layer header.
    pub service_id: NodeId,
    /// Flat id of the edge this layer extends; `None` for the initial
    /// graph-level prompt.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub parent_edge_id: Option<u64>,
}

impl LayerConditions {
    /// A subtree of depth d needs at least d edges, and any positive depth
    /// needs at least one edge.
    pub fn is_feasible(&self) -> bool {
        self.num_edges >= u64::from(self.remaining_depth)
            && (self.remaining_depth == 0 || self.num_edges >= 1)
    }
}

/// One edge of a layer. Five fields: the source is implied by the layer's
/// start node, and the id is a flat integer. Times are signed so untrusted
/// model output can be represented before validation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerEdge {
    pub flat_edge_id: u64,
    pub destination: NodeId,
    pub comm_type: String,
    pub start_ms: i64,
    pub finish_ms: i64,
}

/// One decomposed layer: its conditions, its edges, and the conditions for
/// every child layer it spawns.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layer {
    pub conditions: LayerConditions,
    pub edges: Vec<LayerEdge>,
    pub children: Vec<LayerConditions>,
}

/// The graph-level prompt `c1`: first layer conditions covering the entire
/// graph. With canonical (root-at-zero) times, `latency_ms` equals the graph
/// latency attribute.
pub fn initial_conditions(g: &CallGraph) -> LayerConditions {
    let root = g.root();
    let attrs = g.attributes();
    LayerConditions {
        start_node: root.source.clone(),
        caller: root.source.clone(),
        remaining_depth: attrs.depth,
        num_edges: attrs.num_edges,
        start_edge_id: 0,
        latency_ms: root.finish_ms,
        start_communication_at_ms: root.start_ms,
        service_id: g.service_id.clone(),
        parent_edge_id: None,
    }
}

/// Splits a valid graph into its layer sequence, pre-order.
///
/// The union of all layers' edges is exactly the graph's edge set with no
/// overlap. The first layer's conditions are [`initial_conditions`]. Each
/// child block copies its parent edge's destination as the start node, the
/// current start node as caller, the subtree size and depth as budgets, and
/// the parent edge's interval as the time window.
pub fn decompose_layers(g: &CallGraph) -> Vec<Layer> {
    if g.edges.is_empty() {
        return Vec::new();
    }
    let children = child_index(g);
    let n = g.edges.len();

    // Subtree size (descendant count) and depth (levels below) per edge.
    let mut size = vec![0u64; n];
    let mut depth_below = vec![0u32; n];
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(g.edges[i].edge_id.depth()));
    for &i in &order {
        if let Some(kids) = children.get(g.edges[i].edge_id.components()) {
            for &k in kids {
                size[i] += 1 + size[k];
                depth_below[i] = depth_below[i].max(1 + depth_below[k]);
            }
        }
    }

    let root_idx = g
        .edges
        .iter()
        .position(|e| e.edge_id.is_root())
        .expect("valid call graph has a root edge");

    let mut layers = Vec::new();
    // Work stack holds (conditions, member edge indices); members are already
    // in canonical sibling order.
    let mut stack: Vec<(LayerConditions, Vec<usize>)> =
        vec![(initial_conditions(g), vec![root_idx])];
    while let Some((conds, members)) = stack.pop() {
        let mut edges = Vec::with_capacity(members.len());
        for (k, &idx) in members.iter().enumerate() {
            let e = &g.edges[idx];
            edges.push(LayerEdge {
                flat_edge_id: conds.start_edge_id + k as u64,
                destination: e.destination.clone(),
                comm_type: e.comm_type.clone(),
                start_ms: e.start_ms as i64,
                finish_ms: e.finish_ms as i64,
            });
        }

        let mut blocks = Vec::new();
        let mut block_members = Vec::new();
        let mut next_start = conds.start_edge_id + members.len() as u64;
        for (k, &idx) in members.iter().enumerate() {
            let e = &g.edges[idx];
            let Some(kids) = children.get(e.edge_id.components()) else {
                continue;
            };
            if kids.is_empty() {
                continue;
            }
            blocks.push(LayerConditions {
                start_node: e.destination.clone(),
                caller: conds.start_node.clone(),
                remaining_depth: depth_below[idx],
                num_edges: size[idx],
                start_edge_id: next_start,
                latency_ms: e.finish_ms,
                start_communication_at_ms: e.start_ms,
                service_id: conds.service_id.clone(),
                parent_edge_id: Some(conds.start_edge_id + k as u64),
            });
            block_members.push(kids.clone());
            next_start += size[idx];
        }

        // Pre-order: push child layers in reverse so the first block's
        // subtree is emitted immediately after this layer.
        for (block, members) in blocks.iter().cloned().zip(block_members).rev() {
            stack.push((block, members));
        }
        layers.push(Layer {
            conditions: conds,
            edges,
            children: blocks,
        });
    }
    layers
}

/// Errors raised while folding flat layers back into a call graph.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AssemblyError {
    #[error("no layers to assemble")]
    NoLayers,
    #[error("layer references unknown parent edge {flat_edge_id}")]
    UnknownParentRef { flat_edge_id: u64 },
    #[error("flat edge id {flat_edge_id} assigned twice")]
    DuplicateFlatId { flat_edge_id: u64 },
    #[error("edge {flat_edge_id} has a negative time")]
    NegativeTime { flat_edge_id: u64 },
}

/// Re-attaches layers under their parent linkage, recomputing dot-decimal
/// ids from flat ids and lineage: the k-th edge of a layer under parent path
/// P becomes P.(k+1); the k-th edge of the root layer becomes path [k].
///
/// Layers must arrive parent-before-child (any traversal of the layer tree
/// satisfies this). For canonical graphs this is the exact inverse of
/// [`decompose_layers`].
pub fn assemble_layers<'a>(
    trace_id: impl Into<String>,
    service_id: NodeId,
    layers: impl IntoIterator<Item = (&'a LayerConditions, &'a [LayerEdge])>,
) -> Result<CallGraph, AssemblyError> {
    let mut paths: std::collections::HashMap<u64, EdgeId> = std::collections::HashMap::new();
    let mut edges: Vec<Edge> = Vec::new();
    let mut any = false;
    for (conds, layer_edges) in layers {
        any = true;
        let parent_path = match conds.parent_edge_id {
            None => None,
            Some(flat) => Some(
                paths
                    .get(&flat)
                    .cloned()
                    .ok_or(AssemblyError::UnknownParentRef {
                        flat_edge_id: flat,
                    })?,
            ),
        };
        for (k, le) in layer_edges.iter().enumerate() {
            let path = match &parent_path {
                None => EdgeId::root(k as u64),
                Some(p) => p.child(k as u64 + 1),
            };
            if paths.insert(le.flat_edge_id, path.clone()).is_some() {
                return Err(AssemblyError::DuplicateFlatId {
                    flat_edge_id: le.flat_edge_id,
                });
            }
            if le.start_ms < 0 || le.finish_ms < 0 {
                return Err(AssemblyError::NegativeTime {
                    flat_edge_id: le.flat_edge_id,
                });
            }
            edges.push(Edge {
                edge_id: path,
                source: conds.start_node.clone(),
                destination: le.destination.clone(),
                comm_type: le.comm_type.clone(),
                start_ms: le.start_ms as u64,
                finish_ms: le.finish_ms as u64,
            });
        }
    }
    if !any {
        return Err(AssemblyError::NoLayers);
    }
    edges.sort_by(|a, b| a.edge_id.cmp(&b.edge_id));
    Ok(CallGraph {
        trace_id: trace_id.into(),
        service_id,
        edges,
    })
}

/// Folds a decomposition straight back into a graph.
pub fn reassemble(
    trace_id: impl Into<String>,
    service_id: NodeId,
    layers: &[Layer],
) -> Result<CallGraph, AssemblyError> {
    assemble_layers(
        trace_id,
        service_id,
        layers
            .iter()
            .map(|l| (&l.conditions, l.edges.as_slice())),
    )
}

#[cfg(test)]
mod tests {
    use super::super::graph::{build_graph, edge, EdgeRecord};
    use super::super::hash::canonical_hash;
    use super::*;

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

    fn service() -> NodeId {
        NodeId::new("S_1").unwrap()
    }

    fn chain() -> CallGraph {
        build_graph(
            "t",
            service(),
            [
                rec("0", "Client", "MS_1", "RPC", 0, 10),
                rec("0.1", "MS_1", "MS_2", "RPC", 2, 8),
                rec("0.1.1", "MS_2", "MS_3", "DB", 3, 7),
            ],
        )
        .unwrap()
    }

    #[test]
    fn single_edge_graph_one_layer() {
        let g = CallGraph {
            trace_id: "t".into(),
            service_id: service(),
            edges: vec![edge("0", "Client", "MS_1", "HTTP", 0, 24)],
        };
        let layers = decompose_layers(&g);
        assert_eq!(layers.len(), 1);
        assert_eq!(layers[0].edges.len(), 1);
        assert!(layers[0].children.is_empty());
        assert_eq!(layers[0].conditions, initial_conditions(&g));
        assert_eq!(layers[0].conditions.remaining_depth, 1);
        assert_eq!(layers[0].conditions.latency_ms, 24);
    }

    #[test]
    fn chain_decomposes_into_three_layers() {
        let g = chain();
        let layers = decompose_layers(&g);
        assert_eq!(layers.len(), 3);
        for (i, layer) in layers.iter().enumerate() {
            assert_eq!(layer.edges.len(), 1);
            let expect_children = if i < 2 { 1 } else { 0 };
            assert_eq!(layer.children.len(), expect_children);
        }
        // Hand-checked conditions of the middle layer.
        let c2 = &layers[1].conditions;
        assert_eq!(c2.start_node.as_str(), "MS_1");
        assert_eq!(c2.caller.as_str(), "Client");
        assert_eq!(c2.remaining_depth, 2);
        assert_eq!(c2.num_edges, 2);
        assert_eq!(c2.start_edge_id, 1);
        assert_eq!(c2.latency_ms, 10);
        assert_eq!(c2.parent_edge_id, Some(0));
    }

    #[test]
    fn branching_graph_layers() {
        // Shape of the worked example: root, a two-edge layer, then a layer
        // under the second destination.
        let g = build_graph(
            "t",
            service(),
            [
                rec("0", "Client", "Front end", "HTTP", 0, 24),
                rec("0.1", "Front end", "Authentication", "RPC", 1, 5),
                rec("0.2", "Front end", "Feed", "RPC", 6, 20),
                rec("0.2.1", "Feed", "MS_9", "DB", 7, 12),
                rec("0.2.2", "Feed", "MS_8", "MC", 13, 19),
            ],
        )
        .unwrap();
        let layers = decompose_layers(&g);
        assert_eq!(layers.len(), 3);
        assert_eq!(layers[1].edges.len(), 2);
        assert_eq!(layers[1].children.len(), 1);
        let feed_block = &layers[1].children[0];
        assert_eq!(feed_block.start_node.as_str(), "Feed");
        assert_eq!(feed_block.caller.as_str(), "Front end");
        assert_eq!(feed_block.num_edges, 2);
        assert_eq!(feed_block.remaining_depth, 1);
        // Flat ids: root 0, layer-2 edges 1..=2, feed subtree starts at 3.
        assert_eq!(feed_block.start_edge_id, 3);
        assert_eq!(feed_block.parent_edge_id, Some(2));
        assert_eq!(layers[2].edges.len(), 2);
        assert!(layers[2].children.is_empty());
    }

    #[test]
    fn partition_and_budgets() {
        let g = chain();
        let layers = decompose_layers(&g);
        let total: usize = layers.iter().map(|l| l.edges.len()).sum();
        assert_eq!(total, g.edges.len());
        let mut flats: Vec<u64> = layers
            .iter()
            .flat_map(|l| l.edges.iter().map(|e| e.flat_edge_id))
            .collect();
        flats.sort_unstable();
        flats.dedup();
        assert_eq!(flats.len(), g.edges.len());
        for layer in &layers {
            let declared: u64 = layer.children.iter().map(|c| c.num_edges).sum();
            assert_eq!(
                layer.edges.len() as u64 + declared,
                layer.conditions.num_edges
            );
        }
    }

    #[test]
    fn reassembly_is_exact_for_canonical_graphs() {
        let g = chain();
        let layers = decompose_layers(&g);
        let rebuilt = reassemble("t", g.service_id.clone(), &layers).unwrap();
        assert_eq!(canonical_hash(&rebuilt), canonical_hash(&g));
        assert_eq!(rebuilt.edges, g.edges);
    }

    #[test]
    fn assembly_rejects_bad_lineage() {
        let conds = LayerConditions {
            start_node: NodeId::client(),
            caller: NodeId::client(),
            remaining_depth: 1,
            num_edges: 1,
            start_edge_id: 0,
            latency_ms: 10,
            start_communication_at_ms: 0,
            service_id: service(),
            parent_edge_id: Some(7),
        };
        let edges = vec![LayerEdge {
            flat_edge_id: 0,
            destination: NodeId::new("MS_1").unwrap(),
            comm_type: "RPC".into(),
            start_ms: 0,
            finish_ms: 10,
        }];
        let err = assemble_layers("t", service(), [(&conds, edges.as_slice())]).unwrap_err();
        assert_eq!(err, AssemblyError::UnknownParentRef { flat_edge_id: 7 });
    }
}
