//! Tabular RPC trace ingestion and corpus statistics.
//!
//! Traces arrive as delimited text (comma or tab, optionally gzipped) with a
//! header row. Rows are grouped by trace id, rows with missing required cells
//! are dropped and counted, each group is built into a call graph, and graphs
//! failing construction are counted by reason rather than failing the run.
//! Accepted graphs are canonicalized (root start at 0, siblings in layer
//! order) so everything downstream agrees on one representation.
//!
//! Parsing and assembly stream row-by-row and shard cleanly by trace id;
//! statistics merge associatively via [`CorpusStats::merge`].

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read};
use std::path::Path;

use indexmap::IndexMap;
use serde::de::Error as _;
use serde::{Deserialize, Serialize};

use crate::model::{
    build_graph, canonical_hash, BuildGraphError, CallGraph, Digest, EdgeRecord, NodeId,
};

/// Fraction under which a call triple counts as uncommon within its service.
pub const UNCOMMON_SHARE: f64 = 0.10;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("required column {name:?} not found in header")]
    MissingColumn { name: String },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StatsError {
    #[error("empty corpus")]
    EmptyCorpus,
}

/// Column mapping and value conventions for a trace release. The default
/// matches the Alibaba v2022 call-graph table.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnSchema {
    pub trace_id: String,
    pub rpc_id: String,
    pub upstream: String,
    pub downstream: String,
    pub rpc_type: String,
    pub response_time: String,
    pub timestamp: String,
    pub service: String,
    /// Upstream markers rewritten to the reserved `Client` node.
    pub client_aliases: Vec<String>,
    /// Cell values treated as missing.
    pub missing_tokens: Vec<String>,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        ColumnSchema {
            trace_id: "traceid".into(),
            rpc_id: "rpc_id".into(),
            upstream: "um".into(),
            downstream: "dm".into(),
            rpc_type: "rpctype".into(),
            response_time: "rt".into(),
            timestamp: "timestamp".into(),
            service: "service".into(),
            client_aliases: vec!["Client".into(), "USER".into(), "user".into()],
            missing_tokens: vec![
                String::new(),
                "None".into(),
                "none".into(),
                "nan".into(),
                "NULL".into(),
                "(?)".into(),
            ],
        }
    }
}

/// One raw row, before any validation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RawEdgeRecord {
    pub trace_id: String,
    pub rpc_id: String,
    pub upstream: Option<String>,
    pub downstream: Option<String>,
    pub rpc_type: Option<String>,
    pub response_time_ms: Option<f64>,
    pub timestamp_ms: Option<f64>,
    pub service_id: Option<String>,
}

/// Opens a trace file, transparently unwrapping gzip by magic bytes.
pub fn open_trace_reader(path: &Path) -> io::Result<Box<dyn Read>> {
    let mut file = File::open(path)?;
    let mut magic = [0u8; 2];
    let n = read_up_to(&mut file, &mut magic)?;
    let head = io::Cursor::new(magic[..n].to_vec());
    let chained = head.chain(file);
    if n == 2 && magic == [0x1f, 0x8b] {
        Ok(Box::new(flate2::read::GzDecoder::new(chained)))
    } else {
        Ok(Box::new(chained))
    }
}

fn read_up_to<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..])? {
            0 => break,
            n => filled += n,
        }
    }
    Ok(filled)
}

/// Streaming reader over trace rows. Malformed rows (wrong column count or
/// encoding) are skipped and counted, not fatal.
pub struct RecordReader<R: Read> {
    rows: csv::StringRecordsIntoIter<R>,
    idx: ColumnIndexes,
    schema: ColumnSchema,
    malformed_rows: u64,
}

struct ColumnIndexes {
    trace_id: usize,
    rpc_id: usize,
    upstream: Option<usize>,
    downstream: Option<usize>,
    rpc_type: Option<usize>,
    response_time: Option<usize>,
    timestamp: Option<usize>,
    service: Option<usize>,
}

/// Builds a [`RecordReader`] over delimited text with a header row. The
/// delimiter is sniffed from the header (tab if present, else comma).
pub fn parse_trace_file<R: Read>(
    reader: R,
    schema: &ColumnSchema,
) -> Result<RecordReader<BufReader<R>>, IngestError> {
    let mut buffered = BufReader::new(reader);
    let delimiter = sniff_delimiter(&mut buffered)?;
    let mut csv_reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(false)
        .from_reader(buffered);

    let headers = csv_reader.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let require = |name: &str| {
        find(name).ok_or_else(|| IngestError::MissingColumn {
            name: name.to_string(),
        })
    };
    let idx = ColumnIndexes {
        trace_id: require(&schema.trace_id)?,
        rpc_id: require(&schema.rpc_id)?,
        upstream: find(&schema.upstream),
        downstream: find(&schema.downstream),
        rpc_type: find(&schema.rpc_type),
        response_time: find(&schema.response_time),
        timestamp: find(&schema.timestamp),
        service: find(&schema.service),
    };
    Ok(RecordReader {
        rows: csv_reader.into_records(),
        idx,
        schema: schema.clone(),
        malformed_rows: 0,
    })
}

fn sniff_delimiter<R: BufRead>(reader: &mut R) -> Result<u8, IngestError> {
    let buf = reader.fill_buf()?;
    let first_line = match buf.iter().position(|&b| b == b'\n') {
        Some(p) => &buf[..p],
        None => buf,
    };
    Ok(if first_line.contains(&b'\t') { b'\t' } else { b',' })
}

impl<R: Read> RecordReader<R> {
    /// Rows skipped because of a wrong column count or encoding failure.
    pub fn malformed_rows(&self) -> u64 {
        self.malformed_rows
    }

    fn cell(&self, row: &csv::StringRecord, idx: Option<usize>) -> Option<String> {
        let value = row.get(idx?)?.trim();
        if self.schema.missing_tokens.iter().any(|t| t == value) {
            None
        } else {
            Some(value.to_string())
        }
    }

    fn number(&self, row: &csv::StringRecord, idx: Option<usize>) -> Option<f64> {
        let value = self.cell(row, idx)?;
        let parsed: f64 = value.parse().ok()?;
        if parsed.is_finite() {
            Some(parsed)
        } else {
            None
        }
    }
}

impl<R: Read> Iterator for RecordReader<R> {
    type Item = RawEdgeRecord;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            match self.rows.next()? {
                Ok(row) => {
                    let trace_id = row.get(self.idx.trace_id).unwrap_or("").trim().to_string();
                    let rpc_id = row.get(self.idx.rpc_id).unwrap_or("").trim().to_string();
                    let mut upstream = self.cell(&row, self.idx.upstream);
                    if let Some(u) = &upstream {
                        if self.schema.client_aliases.iter().any(|a| a == u) {
                            upstream = Some("Client".to_string());
                        }
                    }
                    return Some(RawEdgeRecord {
                        trace_id,
                        rpc_id,
                        upstream,
                        downstream: self.cell(&row, self.idx.downstream),
                        rpc_type: self
                            .cell(&row, self.idx.rpc_type)
                            .map(|t| t.to_uppercase()),
                        response_time_ms: self.number(&row, self.idx.response_time),
                        timestamp_ms: self.number(&row, self.idx.timestamp),
                        service_id: self.cell(&row, self.idx.service),
                    });
                }
                Err(_) => {
                    self.malformed_rows += 1;
                }
            }
        }
    }
}

/// Why rows and graphs were dropped during assembly.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectSummary {
    /// Rows skipped by the reader (wrong column count); filled by the caller.
    pub rows_malformed: u64,
    /// Records dropped for missing source/destination/type/time cells.
    pub records_missing_info: u64,
    /// Whole graphs rejected at construction, by reason.
    pub graphs_rejected: BTreeMap<String, u64>,
    pub graphs_accepted: u64,
}

impl RejectSummary {
    pub fn total_graphs_rejected(&self) -> u64 {
        self.graphs_rejected.values().sum()
    }
}

impl fmt::Display for RejectSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "accepted {} graphs, rejected {} ({} records missing info, {} malformed rows)",
            self.graphs_accepted,
            self.total_graphs_rejected(),
            self.records_missing_info,
            self.rows_malformed
        )
    }
}

fn reject_reason(err: &BuildGraphError) -> &'static str {
    match err {
        BuildGraphError::MissingField { .. } => "missing_field",
        BuildGraphError::Disconnected { .. } => "disconnected",
        BuildGraphError::DuplicateEdgeId { .. } => "duplicate_edge_id",
        BuildGraphError::TimeNestingViolation { .. } => "time_nesting",
        BuildGraphError::MultipleRoots { .. } => "root_count",
        BuildGraphError::SourceMismatch { .. } => "source_mismatch",
    }
}

fn round_half_up(x: f64) -> i64 {
    (x + 0.5).floor() as i64
}

/// Groups records by trace id, drops incomplete records, builds and
/// canonicalizes call graphs. Failures are data, not errors: everything
/// dropped is tallied in the summary.
pub fn assemble_graphs(
    records: impl IntoIterator<Item = RawEdgeRecord>,
) -> (Vec<CallGraph>, RejectSummary) {
    let mut groups: IndexMap<String, Vec<RawEdgeRecord>> = IndexMap::new();
    for rec in records {
        groups.entry(rec.trace_id.clone()).or_default().push(rec);
    }

    let mut graphs = Vec::new();
    let mut summary = RejectSummary::default();
    for (trace_id, records) in groups {
        let service = records.iter().find_map(|r| r.service_id.clone());
        let Some(service) = service.and_then(|s| NodeId::new(s).ok()) else {
            *summary
                .graphs_rejected
                .entry("missing_service".to_string())
                .or_default() += 1;
            continue;
        };

        let mut complete: Vec<(RawEdgeRecord, i64, i64)> = Vec::new();
        for rec in records {
            let usable = rec.upstream.is_some()
                && rec.downstream.is_some()
                && rec.rpc_type.is_some()
                && rec.timestamp_ms.is_some()
                && rec.response_time_ms.map_or(false, |rt| rt >= 0.0);
            if !usable {
                summary.records_missing_info += 1;
                continue;
            }
            let ts = rec.timestamp_ms.unwrap();
            let rt = rec.response_time_ms.unwrap();
            let start = round_half_up(ts);
            let finish = round_half_up(ts + rt);
            complete.push((rec, start, finish));
        }

        let base = complete.iter().map(|(_, s, _)| *s).min().unwrap_or(0);
        let edge_records: Vec<EdgeRecord> = complete
            .into_iter()
            .map(|(rec, start, finish)| EdgeRecord {
                edge_id: rec.rpc_id,
                source: rec.upstream,
                destination: rec.downstream,
                comm_type: rec.rpc_type,
                start_ms: Some((start - base).max(0) as u64),
                finish_ms: Some((finish - base).max(0) as u64),
            })
            .collect();

        match build_graph(&trace_id, service, edge_records) {
            Ok(g) => {
                graphs.push(g.canonicalized());
                summary.graphs_accepted += 1;
            }
            Err(e) => {
                *summary
                    .graphs_rejected
                    .entry(reject_reason(&e).to_string())
                    .or_default() += 1;
            }
        }
    }
    (graphs, summary)
}

/// Keeps the first graph per canonical hash; output order is stable.
pub fn deduplicate(graphs: Vec<CallGraph>) -> Vec<CallGraph> {
    let mut seen: std::collections::HashSet<Digest> = std::collections::HashSet::new();
    graphs
        .into_iter()
        .filter(|g| seen.insert(canonical_hash(g)))
        .collect()
}

/// Turns an accepted graph back into raw rows (the shape a trace file would
/// carry); useful for re-ingestion checks.
pub fn records_from_graph(g: &CallGraph) -> Vec<RawEdgeRecord> {
    g.edges
        .iter()
        .map(|e| RawEdgeRecord {
            trace_id: g.trace_id.clone(),
            rpc_id: e.edge_id.to_string(),
            upstream: Some(e.source.to_string()),
            downstream: Some(e.destination.to_string()),
            rpc_type: Some(e.comm_type.clone()),
            response_time_ms: Some((e.finish_ms - e.start_ms) as f64),
            timestamp_ms: Some(e.start_ms as f64),
            service_id: Some(g.service_id.to_string()),
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Corpus statistics
// ---------------------------------------------------------------------------

/// A (source, destination, communication type) call triple. Serialized as
/// `source,destination,type` — commas cannot appear in node or type tokens.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CallTriple {
    pub source: NodeId,
    pub destination: NodeId,
    pub comm_type: String,
}

impl CallTriple {
    pub fn of_edge(e: &crate::model::Edge) -> Self {
        CallTriple {
            source: e.source.clone(),
            destination: e.destination.clone(),
            comm_type: e.comm_type.clone(),
        }
    }
}

impl fmt::Display for CallTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.source, self.destination, self.comm_type)
    }
}

impl Serialize for CallTriple {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CallTriple {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        let mut parts = s.split(',');
        let source = parts.next().ok_or_else(|| D::Error::custom("triple"))?;
        let destination = parts.next().ok_or_else(|| D::Error::custom("triple"))?;
        let comm_type = parts.next().ok_or_else(|| D::Error::custom("triple"))?;
        if parts.next().is_some() {
            return Err(D::Error::custom("triple has too many fields"));
        }
        Ok(CallTriple {
            source: NodeId::new(source).map_err(D::Error::custom)?,
            destination: NodeId::new(destination).map_err(D::Error::custom)?,
            comm_type: comm_type.to_string(),
        })
    }
}

/// A normalized empirical distribution over discrete items.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Discrete<T: Ord> {
    pub items: Vec<T>,
    pub probs: Vec<f64>,
}

impl<T: Ord + Clone> Discrete<T> {
    pub fn from_counts(counts: &BTreeMap<T, u64>) -> Option<Self> {
        let total: u64 = counts.values().sum();
        if total == 0 {
            return None;
        }
        let items: Vec<T> = counts.keys().cloned().collect();
        let probs: Vec<f64> = counts.values().map(|&c| c as f64 / total as f64).collect();
        Some(Discrete { items, probs })
    }

    pub fn prob_of(&self, item: &T) -> f64 {
        self.items
            .iter()
            .position(|i| i == item)
            .map_or(0.0, |p| self.probs[p])
    }

    pub fn is_normalized(&self) -> bool {
        (self.probs.iter().sum::<f64>() - 1.0).abs() <= 1e-9
    }
}

/// Fitted statistics of a corpus of call graphs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub total_graphs: u64,
    pub total_edges: u64,
    /// Corpus-wide call triple counts.
    pub call_freq: BTreeMap<CallTriple, u64>,
    /// Nearest-rank 90th percentile of end-to-end latency per service.
    pub per_service_p90_latency: BTreeMap<NodeId, u64>,
    /// Distribution of direct child counts, keyed by the parent edge's depth
    /// level (root edges are level 1). Zero child counts are included.
    pub child_count_dist: BTreeMap<u32, Discrete<u64>>,
    /// Corpus-wide communication type distribution.
    pub comm_type_dist: Discrete<String>,
    /// Distribution of edge durations per communication type.
    pub response_time_dist: BTreeMap<String, Discrete<u64>>,
    /// Graph counts per service.
    pub service_graph_count: BTreeMap<NodeId, u64>,
    /// Call triple counts within each service, for the uncommon-call rule.
    pub per_service_call_freq: BTreeMap<NodeId, BTreeMap<CallTriple, u64>>,
    /// Total edges within each service.
    pub per_service_edge_total: BTreeMap<NodeId, u64>,
}

impl CorpusStats {
    /// Frequency share of a triple within its service, if the service is
    /// known.
    pub fn service_share(&self, service: &NodeId, triple: &CallTriple) -> Option<f64> {
        let total = *self.per_service_edge_total.get(service)?;
        if total == 0 {
            return None;
        }
        let count = self
            .per_service_call_freq
            .get(service)?
            .get(triple)
            .copied()
            .unwrap_or(0);
        Some(count as f64 / total as f64)
    }

    /// A triple is uncommon when its share within the service is below
    /// [`UNCOMMON_SHARE`].
    pub fn is_uncommon(&self, service: &NodeId, triple: &CallTriple) -> Option<bool> {
        self.service_share(service, triple)
            .map(|share| share < UNCOMMON_SHARE)
    }

    /// Associative merge of shard statistics, then re-derivation of
    /// distributions and percentiles. Implemented by merging raw counts; the
    /// latency percentile needs the raw samples, so shard merging goes
    /// through [`StatsAccumulator`].
    pub fn merge(accumulators: impl IntoIterator<Item = StatsAccumulator>) -> Result<Self, StatsError> {
        let mut merged = StatsAccumulator::default();
        for acc in accumulators {
            merged.absorb(acc);
        }
        merged.finish()
    }
}

/// Raw counting state behind [`CorpusStats`]; mergeable across shards.
#[derive(Clone, Debug, Default)]
pub struct StatsAccumulator {
    total_graphs: u64,
    total_edges: u64,
    call_freq: BTreeMap<CallTriple, u64>,
    per_service_latencies: BTreeMap<NodeId, Vec<u64>>,
    child_counts: BTreeMap<u32, BTreeMap<u64, u64>>,
    comm_types: BTreeMap<String, u64>,
    response_times: BTreeMap<String, BTreeMap<u64, u64>>,
    service_graph_count: BTreeMap<NodeId, u64>,
    per_service_call_freq: BTreeMap<NodeId, BTreeMap<CallTriple, u64>>,
    per_service_edge_total: BTreeMap<NodeId, u64>,
}

impl StatsAccumulator {
    pub fn add_graph(&mut self, g: &CallGraph) {
        self.total_graphs += 1;
        *self.service_graph_count.entry(g.service_id.clone()).or_default() += 1;
        self.per_service_latencies
            .entry(g.service_id.clone())
            .or_default()
            .push(g.attributes().latency_ms);

        let mut child_count: BTreeMap<&[u64], u64> = BTreeMap::new();
        for e in &g.edges {
            self.total_edges += 1;
            let triple = CallTriple::of_edge(e);
            *self.call_freq.entry(triple.clone()).or_default() += 1;
            *self
                .per_service_call_freq
                .entry(g.service_id.clone())
                .or_default()
                .entry(triple)
                .or_default() += 1;
            *self.per_service_edge_total.entry(g.service_id.clone()).or_default() += 1;
            *self.comm_types.entry(e.comm_type.clone()).or_default() += 1;
            *self
                .response_times
                .entry(e.comm_type.clone())
                .or_default()
                .entry(e.duration_ms())
                .or_default() += 1;
            child_count.entry(e.edge_id.components()).or_insert(0);
        }
        for e in &g.edges {
            if let Some(parent) = e.edge_id.parent() {
                if let Some(c) = child_count.get_mut(parent.components()) {
                    *c += 1;
                }
            }
        }
        for e in &g.edges {
            let level = e.edge_id.depth() as u32;
            let count = child_count.get(e.edge_id.components()).copied().unwrap_or(0);
            *self
                .child_counts
                .entry(level)
                .or_default()
                .entry(count)
                .or_default() += 1;
        }
    }

    pub fn absorb(&mut self, other: StatsAccumulator) {
        self.total_graphs += other.total_graphs;
        self.total_edges += other.total_edges;
        for (k, v) in other.call_freq {
            *self.call_freq.entry(k).or_default() += v;
        }
        for (k, mut v) in other.per_service_latencies {
            self.per_service_latencies.entry(k).or_default().append(&mut v);
        }
        for (level, counts) in other.child_counts {
            let entry = self.child_counts.entry(level).or_default();
            for (k, v) in counts {
                *entry.entry(k).or_default() += v;
            }
        }
        for (k, v) in other.comm_types {
            *self.comm_types.entry(k).or_default() += v;
        }
        for (t, counts) in other.response_times {
            let entry = self.response_times.entry(t).or_default();
            for (k, v) in counts {
                *entry.entry(k).or_default() += v;
            }
        }
        for (k, v) in other.service_graph_count {
            *self.service_graph_count.entry(k).or_default() += v;
        }
        for (s, counts) in other.per_service_call_freq {
            let entry = self.per_service_call_freq.entry(s).or_default();
            for (k, v) in counts {
                *entry.entry(k).or_default() += v;
            }
        }
        for (k, v) in other.per_service_edge_total {
            *self.per_service_edge_total.entry(k).or_default() += v;
        }
    }

    pub fn finish(self) -> Result<CorpusStats, StatsError> {
        if self.total_graphs == 0 {
            return Err(StatsError::EmptyCorpus);
        }
        let per_service_p90_latency = self
            .per_service_latencies
            .into_iter()
            .map(|(service, mut latencies)| {
                latencies.sort_unstable();
                (service, nearest_rank_p90(&latencies))
            })
            .collect();
        let child_count_dist = self
            .child_counts
            .into_iter()
            .filter_map(|(level, counts)| Discrete::from_counts(&counts).map(|d| (level, d)))
            .collect();
        let comm_type_dist =
            Discrete::from_counts(&self.comm_types).ok_or(StatsError::EmptyCorpus)?;
        let response_time_dist = self
            .response_times
            .into_iter()
            .filter_map(|(t, counts)| Discrete::from_counts(&counts).map(|d| (t, d)))
            .collect();
        Ok(CorpusStats {
            total_graphs: self.total_graphs,
            total_edges: self.total_edges,
            call_freq: self.call_freq,
            per_service_p90_latency,
            child_count_dist,
            comm_type_dist,
            response_time_dist,
            service_graph_count: self.service_graph_count,
            per_service_call_freq: self.per_service_call_freq,
            per_service_edge_total: self.per_service_edge_total,
        })
    }
}

/// Nearest-rank p90: the value at 1-based index `ceil(0.9 * n)` of the sorted
/// sample list. A singleton's p90 is that element.
fn nearest_rank_p90(sorted: &[u64]) -> u64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    let rank = ((0.9 * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

/// Fits corpus statistics over a set of graphs.
pub fn compute_stats(graphs: &[CallGraph]) -> Result<CorpusStats, StatsError> {
    if graphs.is_empty() {
        return Err(StatsError::EmptyCorpus);
    }
    let mut acc = StatsAccumulator::default();
    for g in graphs {
        acc.add_graph(g);
    }
    acc.finish()
}

// ---------------------------------------------------------------------------
// JSONL graph files
// ---------------------------------------------------------------------------

/// Writes graphs as JSON lines.
pub fn write_graphs_jsonl<W: io::Write>(mut w: W, graphs: &[CallGraph]) -> io::Result<()> {
    for g in graphs {
        serde_json::to_writer(&mut w, g)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads graphs from JSON lines.
pub fn read_graphs_jsonl<R: BufRead>(reader: R) -> io::Result<Vec<CallGraph>> {
    let mut graphs = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let g: CallGraph = serde_json::from_str(&line)?;
        graphs.push(g);
    }
    Ok(graphs)
}
