//! Constraint-violation codes shared by whole-graph structure checks and
//! per-layer validation.
//!
//! Code strings are stable and machine-readable; downstream reports and test
//! fixtures pin them, so renaming a code is a breaking change.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::id::EdgeId;

/// Every constraint the toolkit can flag.
///
/// `G_*` codes are whole-graph structural constraints. `F_*`/`E_*`/`S_*`/`T_*`
/// codes are the per-layer catalog: output format, edge rules, subgraph
/// (next-layer condition) rules, and the edge-budget sum.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ViolationCode {
    // Whole-graph structure.
    #[serde(rename = "G_ROOT")]
    GRoot,
    #[serde(rename = "G_PARENT_LINK")]
    GParentLink,
    #[serde(rename = "G_SOURCE_MATCH")]
    GSourceMatch,
    #[serde(rename = "G_TIME_NEST")]
    GTimeNest,
    #[serde(rename = "G_EDGE_TIME")]
    GEdgeTime,
    #[serde(rename = "G_DUP_ID")]
    GDupId,

    // Layer output format.
    #[serde(rename = "F_FORMAT")]
    FFormat,

    // Layer edges.
    #[serde(rename = "E_FIELDS")]
    EFields,
    #[serde(rename = "E_COUNT")]
    ECount,
    #[serde(rename = "E_START_LOW")]
    EStartLow,
    #[serde(rename = "E_START_ORDER")]
    EStartOrder,
    #[serde(rename = "E_FINISH_LATENCY")]
    EFinishLatency,

    // Next-layer conditions.
    #[serde(rename = "S_UNEXPECTED")]
    SUnexpected,
    #[serde(rename = "S_EDGE_REF")]
    SEdgeRef,
    #[serde(rename = "S_DEPTH_LT")]
    SDepthLt,
    #[serde(rename = "S_DEPTH_ONE")]
    SDepthOne,
    #[serde(rename = "S_START_NODE")]
    SStartNode,
    #[serde(rename = "S_CALLER")]
    SCaller,
    #[serde(rename = "S_LATENCY")]
    SLatency,
    #[serde(rename = "S_START_TIME")]
    SStartTime,

    // Cross-layer edge budget.
    #[serde(rename = "T_EDGE_SUM")]
    TEdgeSum,
}

impl ViolationCode {
    /// The stable wire string for this code.
    pub fn as_str(&self) -> &'static str {
        match self {
            ViolationCode::GRoot => "G_ROOT",
            ViolationCode::GParentLink => "G_PARENT_LINK",
            ViolationCode::GSourceMatch => "G_SOURCE_MATCH",
            ViolationCode::GTimeNest => "G_TIME_NEST",
            ViolationCode::GEdgeTime => "G_EDGE_TIME",
            ViolationCode::GDupId => "G_DUP_ID",
            ViolationCode::FFormat => "F_FORMAT",
            ViolationCode::EFields => "E_FIELDS",
            ViolationCode::ECount => "E_COUNT",
            ViolationCode::EStartLow => "E_START_LOW",
            ViolationCode::EStartOrder => "E_START_ORDER",
            ViolationCode::EFinishLatency => "E_FINISH_LATENCY",
            ViolationCode::SUnexpected => "S_UNEXPECTED",
            ViolationCode::SEdgeRef => "S_EDGE_REF",
            ViolationCode::SDepthLt => "S_DEPTH_LT",
            ViolationCode::SDepthOne => "S_DEPTH_ONE",
            ViolationCode::SStartNode => "S_START_NODE",
            ViolationCode::SCaller => "S_CALLER",
            ViolationCode::SLatency => "S_LATENCY",
            ViolationCode::SStartTime => "S_START_TIME",
            ViolationCode::TEdgeSum => "T_EDGE_SUM",
        }
    }

    /// The fifteen per-layer codes, in catalog order.
    pub const LAYER_CATALOG: [ViolationCode; 15] = [
        ViolationCode::FFormat,
        ViolationCode::EFields,
        ViolationCode::ECount,
        ViolationCode::EStartLow,
        ViolationCode::EStartOrder,
        ViolationCode::EFinishLatency,
        ViolationCode::SUnexpected,
        ViolationCode::SEdgeRef,
        ViolationCode::SDepthLt,
        ViolationCode::SDepthOne,
        ViolationCode::SStartNode,
        ViolationCode::SCaller,
        ViolationCode::SLatency,
        ViolationCode::SStartTime,
        ViolationCode::TEdgeSum,
    ];
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where a violation was observed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "at", rename_all = "snake_case")]
pub enum ViolationLocation {
    /// Index into the layer's edge list.
    Edge(usize),
    /// Index into the layer's subgraph (child condition) list.
    Subgraph(usize),
    /// A dot-decimal edge id within a whole graph.
    GraphEdge(EdgeId),
}

/// One observed constraint violation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub detail: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub location: Option<ViolationLocation>,
}

impl Violation {
    pub fn new(code: ViolationCode, detail: impl Into<String>) -> Self {
        Violation {
            code,
            detail: detail.into(),
            location: None,
        }
    }

    pub fn at(mut self, location: ViolationLocation) -> Self {
        self.location = Some(location);
        self
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.detail)
    }
}

/// The full set of violations found in one graph or layer.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn codes(&self) -> Vec<ViolationCode> {
        self.violations.iter().map(|v| v.code).collect()
    }

    pub fn has(&self, code: ViolationCode) -> bool {
        self.violations.iter().any(|v| v.code == code)
    }
}
