//! Pluggable completion backends and the recursive generation driver.
//!
//! The driver walks the chain of layer conditions: render the pending
//! conditions as a prompt, ask the backend for a completion, parse and
//! validate the layer, queue the child conditions it declares, and repeat
//! until the queue drains. The flat layers are then folded back into a call
//! graph and judged against the prompt. Sessions are independent; any number
//! may run concurrently as long as the backend allows it.

mod backend;
mod statistical;

pub use backend::{
    BackendError, CompletionBackend, HttpBackend, HttpBackendConfig, ReplayBackend,
    BACKEND_TOKEN_ENV, BACKEND_URL_ENV,
};
pub use statistical::{fit_probabilistic, sample_probabilistic, ProbModel, StatisticalBackend};

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::codec::{encode_prompt, parse_layer_output};
use crate::model::{assemble_layers, CallGraph, LayerConditions, LayerEdge, Violation};
use crate::validator::{validate_generation, validate_layer, AccuracyVerdict, PromptAttributes};

/// Sampling parameters passed through to backends. Temperature 0 means
/// greedy, deterministic completion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionParams {
    pub temperature: f64,
    /// `None` leaves the candidate set unbounded.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub top_k: Option<u32>,
    pub max_tokens: u32,
    pub seed: u64,
}

impl Default for CompletionParams {
    fn default() -> Self {
        CompletionParams {
            temperature: 0.8,
            top_k: Some(50),
            max_tokens: 2048,
            seed: 0,
        }
    }
}

/// Traversal order of the pending-condition queue.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Traversal {
    #[default]
    BreadthFirst,
    DepthFirst,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GenerationLimits {
    /// Cap on backend calls per session, excluding retries.
    pub max_layers: usize,
    /// Resamples allowed per layer after the first attempt.
    pub max_retries: u32,
    pub traversal: Traversal,
}

impl Default for GenerationLimits {
    fn default() -> Self {
        GenerationLimits {
            max_layers: 512,
            max_retries: 4,
            traversal: Traversal::BreadthFirst,
        }
    }
}

/// Why a session failed.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum FailureReason {
    /// A layer never validated within the retry budget. Carries the last
    /// error or violation set observed.
    RetryExhausted { last_error: String },
    LayerBudgetExceeded,
    /// The assembled graph failed structural or prompt checks.
    AssemblyInvalid { detail: String },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    #[default]
    Running,
    Done,
    Failed,
}

/// State of one recursive generation run, kept for post-mortems.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GenerationSession {
    pub prompt: LayerConditions,
    pub pending: VecDeque<LayerConditions>,
    pub produced_layers: Vec<(LayerConditions, Vec<LayerEdge>)>,
    pub retries_used: u32,
    pub status: SessionStatus,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub failure: Option<FailureReason>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub verdict: Option<AccuracyVerdict>,
}

/// A failed session, carrying its state for inspection.
#[derive(Debug, thiserror::Error)]
#[error("generation failed: {reason:?}")]
pub struct GenerationFailure {
    pub reason: FailureReason,
    pub session: GenerationSession,
}

fn fail(
    mut session: GenerationSession,
    reason: FailureReason,
) -> Result<(CallGraph, GenerationSession), GenerationFailure> {
    session.status = SessionStatus::Failed;
    session.failure = Some(reason.clone());
    Err(GenerationFailure { reason, session })
}

fn violation_summary(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| v.code.as_str())
        .collect::<Vec<_>>()
        .join(",")
}

/// Runs one recursive generation session.
///
/// Pops pending conditions (FIFO by default), prompts the backend, parses and
/// validates each layer, and resamples with an incremented seed on any parse
/// error, validation failure, or backend error, up to `max_retries`. Once the
/// queue drains, the layers are folded into a graph and judged against the
/// prompt's edge count and depth.
pub fn recursive_generate(
    backend: &dyn CompletionBackend,
    prompt: LayerConditions,
    params: &CompletionParams,
    limits: &GenerationLimits,
) -> Result<(CallGraph, GenerationSession), GenerationFailure> {
    let mut session = GenerationSession {
        prompt: prompt.clone(),
        pending: VecDeque::from([prompt.clone()]),
        produced_layers: Vec::new(),
        retries_used: 0,
        status: SessionStatus::Running,
        failure: None,
        verdict: None,
    };

    loop {
        let conds = match limits.traversal {
            Traversal::BreadthFirst => session.pending.pop_front(),
            Traversal::DepthFirst => session.pending.pop_back(),
        };
        let Some(conds) = conds else { break };

        if session.produced_layers.len() >= limits.max_layers {
            return fail(session, FailureReason::LayerBudgetExceeded);
        }

        let prompt_text = encode_prompt(&conds);
        let mut outcome: Option<(Vec<LayerEdge>, Vec<LayerConditions>)> = None;
        let mut last_error = String::new();
        for attempt in 0..=limits.max_retries {
            if attempt > 0 {
                session.retries_used += 1;
            }
            let attempt_params = CompletionParams {
                seed: params.seed.wrapping_add(u64::from(attempt)),
                ..params.clone()
            };
            let completion = match backend.complete(&prompt_text, &attempt_params) {
                Ok(text) if text.trim().is_empty() => {
                    last_error = BackendError::EmptyCompletion.to_string();
                    continue;
                }
                Ok(text) => text,
                Err(e) => {
                    last_error = e.to_string();
                    continue;
                }
            };
            let parsed = match parse_layer_output(&completion) {
                Ok(parsed) => parsed,
                Err(e) => {
                    last_error = e.to_string();
                    continue;
                }
            };
            let children = parsed.children_conditions(&conds.service_id);
            let violations = validate_layer(&parsed.edges, &children, &conds);
            if violations.is_empty() {
                outcome = Some((parsed.edges, children));
                break;
            }
            last_error = violation_summary(&violations);
        }

        let Some((edges, children)) = outcome else {
            return fail(session, FailureReason::RetryExhausted { last_error });
        };
        session.produced_layers.push((conds, edges));
        for child in children {
            session.pending.push_back(child);
        }
    }

    let assembled = assemble_layers(
        "generated",
        session.prompt.service_id.clone(),
        session
            .produced_layers
            .iter()
            .map(|(c, e)| (c, e.as_slice())),
    );
    let graph = match assembled {
        Ok(g) => g,
        Err(e) => {
            let detail = e.to_string();
            return fail(session, FailureReason::AssemblyInvalid { detail });
        }
    };
    let verdict = validate_generation(&graph, &PromptAttributes::from_conditions(&session.prompt));
    session.verdict = Some(verdict.clone());
    if !verdict.valid {
        let detail = format!(
            "matched_num_edges={} matched_depth={} violations=[{}]",
            verdict.matched_num_edges,
            verdict.matched_depth,
            violation_summary(&verdict.violations)
        );
        return fail(session, FailureReason::AssemblyInvalid { detail });
    }
    session.status = SessionStatus::Done;
    Ok((graph, session))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::compute_stats;
    use crate::model::{
        build_graph, canonical_hash, initial_conditions, EdgeRecord, NodeId,
    };

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

    fn branching() -> CallGraph {
        build_graph(
            "t",
            NodeId::new("S_1").unwrap(),
            [
                rec("0", "Client", "MS_1", "HTTP", 0, 24),
                rec("0.1", "MS_1", "MS_2", "RPC", 1, 5),
                rec("0.2", "MS_1", "MS_3", "RPC", 6, 20),
                rec("0.2.1", "MS_3", "MS_4", "DB", 7, 12),
                rec("0.2.2", "MS_3", "MS_5", "MC", 13, 19),
            ],
        )
        .unwrap()
    }

    #[test]
    fn replay_reproduces_the_source_graph() {
        let g = branching();
        let backend = ReplayBackend::from_graph(&g);
        let (out, session) = recursive_generate(
            &backend,
            initial_conditions(&g),
            &CompletionParams::default(),
            &GenerationLimits::default(),
        )
        .unwrap();
        assert_eq!(session.status, SessionStatus::Done);
        assert_eq!(canonical_hash(&out), canonical_hash(&g));
        assert_eq!(out.edges, g.edges);
    }

    #[test]
    fn replay_reproduces_depth_first_too() {
        let g = branching();
        let backend = ReplayBackend::from_graph(&g);
        let limits = GenerationLimits {
            traversal: Traversal::DepthFirst,
            ..GenerationLimits::default()
        };
        let (out, _) = recursive_generate(
            &backend,
            initial_conditions(&g),
            &CompletionParams::default(),
            &limits,
        )
        .unwrap();
        assert_eq!(canonical_hash(&out), canonical_hash(&g));
    }

    #[test]
    fn smallest_statistical_session() {
        let stats = compute_stats(&[branching()]).unwrap();
        let backend = StatisticalBackend::new(fit_probabilistic(&stats).unwrap());
        let prompt = LayerConditions {
            start_node: NodeId::client(),
            caller: NodeId::client(),
            remaining_depth: 1,
            num_edges: 1,
            start_edge_id: 0,
            latency_ms: 50,
            start_communication_at_ms: 0,
            service_id: NodeId::new("S_1").unwrap(),
            parent_edge_id: None,
        };
        let (g, session) = recursive_generate(
            &backend,
            prompt,
            &CompletionParams::default(),
            &GenerationLimits::default(),
        )
        .unwrap();
        assert_eq!(session.status, SessionStatus::Done);
        assert_eq!(g.edges.len(), 1);
    }

    #[test]
    fn wrong_count_backend_exhausts_retries() {
        struct WrongCount;
        impl CompletionBackend for WrongCount {
            fn complete(
                &self,
                _prompt: &str,
                _params: &CompletionParams,
            ) -> Result<String, BackendError> {
                // One edge, no blocks, regardless of the asked budget.
                Ok("<edges>\nEdge ID is 0, Destination is MS_1, Type is RPC, Communication starts at 0 ms, Communication finishes at 1 ms\n</edges>\n".into())
            }
        }
        let g = branching();
        let mut prompt = initial_conditions(&g);
        prompt.num_edges = 3;
        prompt.remaining_depth = 1;
        let limits = GenerationLimits {
            max_retries: 2,
            ..GenerationLimits::default()
        };
        let err = recursive_generate(
            &WrongCount,
            prompt,
            &CompletionParams::default(),
            &limits,
        )
        .unwrap_err();
        assert!(matches!(err.reason, FailureReason::RetryExhausted { .. }));
        // First attempt plus two retries.
        assert_eq!(err.session.retries_used, 2);
    }
}
