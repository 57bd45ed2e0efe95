//! Toolkit for microservice call-graph traces: parse tabular RPC logs into
//! call graphs, fit corpus statistics, render and parse the recursive and
//! tabular text formats, build pre-training / instruction-tuning corpora,
//! drive recursive layer-by-layer generation against pluggable completion
//! backends, validate outputs against the full constraint catalog, and
//! compare synthetic and real trace distributions.

pub mod codec;
pub mod corpus;
pub mod generate;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod testkit;
pub mod validator;
