//! Domain types for microservice call graphs and the structural algorithms
//! over them: construction, attribute computation, layer decomposition,
//! canonical hashing, and whole-graph constraint checking.
//!
//! Everything here is an immutable value after construction and every
//! operation is a pure function, so types can be shared freely across
//! concurrent workers.

mod graph;
mod hash;
mod id;
mod layer;
mod violation;

pub use graph::{
    build_graph, check_structure, edge, to_records, BuildGraphError, CallGraph, Edge, EdgeRecord,
    GraphAttributes,
};
pub use hash::{canonical_hash, Digest};
pub use id::{EdgeId, NodeId, CLIENT};
pub use layer::{
    assemble_layers, decompose_layers, initial_conditions, reassemble, AssemblyError, Layer,
    LayerConditions, LayerEdge,
};
pub use violation::{ValidationReport, Violation, ViolationCode, ViolationLocation};

/// Errors for identifier construction.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid node name {name:?}")]
    BadNodeName { name: String },
    #[error("invalid dot-decimal edge id {id:?}")]
    BadEdgeId { id: String },
}
