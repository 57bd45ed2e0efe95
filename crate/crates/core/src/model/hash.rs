//! Canonical structural hashing of call graphs.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use super::graph::CallGraph;

/// A 256-bit canonical digest, rendered as lowercase hex.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest([u8; 32]);

impl Digest {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, hex::FromHexError> {
        let bytes = hex::decode(s)?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| hex::FromHexError::InvalidStringLength)?;
        Ok(Digest(arr))
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..12])
    }
}

impl Serialize for Digest {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Digest::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// Stable digest over the graph structure and edge attributes.
///
/// Covers the service id plus, for every edge in sorted id order, the tuple
/// (edge id, source, destination, comm type, start, finish). The trace id is
/// excluded, so re-logged copies of the same graph hash equal. Any field
/// change, including a 1 ms latency shift, changes the digest.
pub fn canonical_hash(g: &CallGraph) -> Digest {
    let mut hasher = Sha256::new();
    hasher.update(format!("cg-v1\n{}\n", g.service_id).as_bytes());
    let mut order: Vec<usize> = (0..g.edges.len()).collect();
    order.sort_by(|&a, &b| g.edges[a].edge_id.cmp(&g.edges[b].edge_id));
    for i in order {
        let e = &g.edges[i];
        hasher.update(
            format!(
                "{}|{}|{}|{}|{}|{}\n",
                e.edge_id, e.source, e.destination, e.comm_type, e.start_ms, e.finish_ms
            )
            .as_bytes(),
        );
    }
    Digest(hasher.finalize().into())
}

#[cfg(test)]
mod tests {
    use super::super::graph::edge;
    use super::super::id::NodeId;
    use super::*;

    fn two_edge_graph(trace_id: &str) -> CallGraph {
        CallGraph {
            trace_id: trace_id.to_string(),
            service_id: NodeId::new("S_1").unwrap(),
            edges: vec![
                edge("0", "Client", "MS_1", "HTTP", 0, 10),
                edge("0.1", "MS_1", "MS_2", "RPC", 1, 9),
            ],
        }
    }

    #[test]
    fn order_and_trace_id_independent() {
        let a = two_edge_graph("t1");
        let mut b = two_edge_graph("t2");
        b.edges.reverse();
        assert_eq!(canonical_hash(&a), canonical_hash(&b));
    }

    #[test]
    fn sensitive_to_one_millisecond() {
        let a = two_edge_graph("t");
        let mut b = two_edge_graph("t");
        b.edges[1].finish_ms += 1;
        assert_ne!(canonical_hash(&a), canonical_hash(&b));
    }

    #[test]
    fn hex_roundtrip() {
        let d = canonical_hash(&two_edge_graph("t"));
        assert_eq!(Digest::from_hex(&d.to_hex()).unwrap(), d);
    }
}
