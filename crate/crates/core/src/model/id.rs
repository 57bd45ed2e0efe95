//! Node and edge identifiers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModelError;

/// Reserved name for the user-side caller that initiates a call graph.
pub const CLIENT: &str = "Client";

/// A vertex name in a call graph: a microservice (`MS_` + digits), a service
/// (`S_` + digits), or the reserved root caller `Client`.
///
/// Construction only enforces what the text formats need (non-empty, no comma
/// or newline); the `MS_`/`S_` naming convention is queryable via
/// [`NodeId::is_microservice`] / [`NodeId::is_service`] and checked where the
/// data model requires it.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(name: impl Into<String>) -> Result<Self, ModelError> {
        let name = name.into();
        let trimmed = name.trim();
        if trimmed.is_empty() {
            return Err(ModelError::BadNodeName { name });
        }
        if name.contains(',') || name.contains('\n') || name.contains(':') {
            return Err(ModelError::BadNodeName { name });
        }
        if trimmed.len() != name.len() {
            return Err(ModelError::BadNodeName { name });
        }
        Ok(NodeId(name))
    }

    /// The reserved root caller.
    pub fn client() -> Self {
        NodeId(CLIENT.to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_client(&self) -> bool {
        self.0 == CLIENT
    }

    /// `MS_` followed by digits.
    pub fn is_microservice(&self) -> bool {
        Self::prefixed_digits(&self.0, "MS_")
    }

    /// `S_` followed by digits.
    pub fn is_service(&self) -> bool {
        Self::prefixed_digits(&self.0, "S_")
    }

    /// True for the three sanctioned name shapes.
    pub fn is_conventional(&self) -> bool {
        self.is_client() || self.is_microservice() || self.is_service()
    }

    fn prefixed_digits(s: &str, prefix: &str) -> bool {
        match s.strip_prefix(prefix) {
            Some(rest) => !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()),
            None => false,
        }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NodeId({})", self.0)
    }
}

impl FromStr for NodeId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NodeId::new(s)
    }
}

/// Hierarchical dot-decimal RPC identifier, e.g. `0.1.2`. The path prefix
/// chain encodes the call tree: every non-root id's parent is the id with the
/// last component removed.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeId(Vec<u64>);

impl EdgeId {
    pub fn new(path: Vec<u64>) -> Result<Self, ModelError> {
        if path.is_empty() {
            return Err(ModelError::BadEdgeId {
                id: String::from("<empty>"),
            });
        }
        Ok(EdgeId(path))
    }

    /// Root id with a single component.
    pub fn root(component: u64) -> Self {
        EdgeId(vec![component])
    }

    pub fn components(&self) -> &[u64] {
        &self.0
    }

    /// Number of path components; the tree depth of the edge (root = 1).
    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn is_root(&self) -> bool {
        self.0.len() == 1
    }

    /// The id with the last component removed; `None` for roots.
    pub fn parent(&self) -> Option<EdgeId> {
        if self.0.len() <= 1 {
            None
        } else {
            Some(EdgeId(self.0[..self.0.len() - 1].to_vec()))
        }
    }

    /// Child id extending this path with `component`.
    pub fn child(&self, component: u64) -> EdgeId {
        let mut path = self.0.clone();
        path.push(component);
        EdgeId(path)
    }
}

impl fmt::Display for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for c in &self.0 {
            if !first {
                f.write_str(".")?;
            }
            write!(f, "{c}")?;
            first = false;
        }
        Ok(())
    }
}

impl fmt::Debug for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EdgeId({self})")
    }
}

impl FromStr for EdgeId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ModelError::BadEdgeId { id: s.to_string() };
        if s.is_empty() {
            return Err(bad());
        }
        let mut path = Vec::new();
        for part in s.split('.') {
            if part.is_empty() || !part.bytes().all(|b| b.is_ascii_digit()) {
                return Err(bad());
            }
            path.push(part.parse::<u64>().map_err(|_| bad())?);
        }
        Ok(EdgeId(path))
    }
}

impl Serialize for EdgeId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EdgeId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_id_conventions() {
        assert!(NodeId::new("MS_12345").unwrap().is_microservice());
        assert!(NodeId::new("S_123456789").unwrap().is_service());
        assert!(NodeId::client().is_client());
        assert!(NodeId::client().is_conventional());
        assert!(!NodeId::new("MS_").unwrap().is_microservice());
        assert!(!NodeId::new("MS_12a45").unwrap().is_microservice());
        // Spaces inside names are allowed (the rendered formats only forbid
        // commas, colons, and newlines).
        assert!(NodeId::new("Front end").is_ok());
        assert!(NodeId::new("").is_err());
        assert!(NodeId::new("a,b").is_err());
        assert!(NodeId::new("a:b").is_err());
        assert!(NodeId::new(" padded ").is_err());
    }

    #[test]
    fn edge_id_roundtrip_and_order() {
        let id: EdgeId = "0.1.2".parse().unwrap();
        assert_eq!(id.to_string(), "0.1.2");
        assert_eq!(id.depth(), 3);
        assert_eq!(id.parent().unwrap().to_string(), "0.1");
        assert_eq!(id.child(4).to_string(), "0.1.2.4");

        // Numeric component order, not string order: 0.10 > 0.2.
        let a: EdgeId = "0.2".parse().unwrap();
        let b: EdgeId = "0.10".parse().unwrap();
        assert!(a < b);

        assert!("".parse::<EdgeId>().is_err());
        assert!("0..1".parse::<EdgeId>().is_err());
        assert!("0.x".parse::<EdgeId>().is_err());
    }
}
