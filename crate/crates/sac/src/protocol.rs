//! Round-synchronous execution of the filter-and-refine protocol and the
//! confidence-weighted baseline.
//!
//! All scores within a round are computed against the round's opening
//! responses; per-(agent, round) rng streams make the trace independent of
//! evaluation order.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    adversarial_message, adversary_canonical, AgentSpec, Backend, Response, RetainedEntry,
    Role, Task,
};
use crate::graph::{DirectedGraph, GraphError, UndirectedGraph};
use crate::streams::{self, tag};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("graph error: {0}")]
    Graph(#[from] GraphError),
    #[error("specs must cover nodes 0..{n}, missing {missing}")]
    MissingSpec { n: usize, missing: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    Sac,
    BaselineCw,
}

impl ProtocolKind {
    pub fn label(self) -> &'static str {
        match self {
            ProtocolKind::Sac => "sac",
            ProtocolKind::BaselineCw => "baseline_cw",
        }
    }
}

/// Everything needed to execute one task: topology, population, bounds,
/// and the per-task seed.
#[derive(Debug, Clone)]
pub struct ProtocolRun {
    pub graph: UndirectedGraph,
    pub specs: BTreeMap<usize, AgentSpec>,
    pub f_bound: usize,
    pub rounds: usize,
    pub task_seed: u64,
}

impl ProtocolRun {
    fn validate(&self) -> Result<(), ProtocolError> {
        for v in 0..self.graph.node_count() {
            if !self.specs.contains_key(&v) {
                return Err(ProtocolError::MissingSpec {
                    n: self.graph.node_count(),
                    missing: v,
                });
            }
        }
        Ok(())
    }
}

/// Per-agent record of everything that happened in one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRound {
    pub role: Role,
    pub pre_answer: String,
    pub pre_correct: bool,
    pub post_answer: String,
    pub post_correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub self_score: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub neighbor_scores: BTreeMap<usize, f64>,
    /// Neighbors scoring strictly below the self-score, ascending by
    /// (score, id).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub low: Vec<usize>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub dropped: BTreeSet<usize>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub retained: BTreeSet<usize>,
    /// Sender-reported confidences, recorded for analysis only; the
    /// filter-and-refine path never reads them.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub received_confidences: BTreeMap<usize, f64>,
}

impl AgentRound {
    /// True when the agent executed the honest score/filter path this round.
    pub fn has_filter_data(&self) -> bool {
        self.self_score.is_some() && !self.neighbor_scores.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub round: usize,
    pub agents: BTreeMap<usize, AgentRound>,
}

/// Outcome of the filter step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterOutcome {
    pub low: Vec<usize>,
    pub dropped: BTreeSet<usize>,
    pub retained: BTreeSet<usize>,
}

/// Drop the min(f, |low|) lowest-scoring neighbors whose score is strictly
/// below the self-score. Score ties break toward the lower agent id.
pub fn filter_neighbors(
    scores: &BTreeMap<usize, f64>,
    self_score: f64,
    f: usize,
) -> FilterOutcome {
    let mut low: Vec<usize> = scores
        .iter()
        .filter(|(_, &s)| s < self_score)
        .map(|(&j, _)| j)
        .collect();
    low.sort_by(|a, b| {
        scores[a]
            .partial_cmp(&scores[b])
            .unwrap()
            .then(a.cmp(b))
    });
    let dropped: BTreeSet<usize> = low.iter().take(f.min(low.len())).copied().collect();
    let retained: BTreeSet<usize> = scores.keys().filter(|j| !dropped.contains(j)).copied().collect();
    FilterOutcome {
        low,
        dropped,
        retained,
    }
}

fn initial_round(run: &ProtocolRun, task: &Task, backend: &dyn Backend) -> (BTreeMap<usize, Response>, RoundTrace) {
    let mut responses = BTreeMap::new();
    let mut agents_map = BTreeMap::new();
    for (&id, spec) in &run.specs {
        let resp = if spec.role == Role::Adversarial {
            adversary_canonical(spec, task, run.task_seed)
        } else {
            let mut rng = streams::derive(&[run.task_seed, tag::INITIAL, id as u64]);
            backend.initial(spec, task, &mut rng)
        };
        agents_map.insert(
            id,
            AgentRound {
                role: spec.role,
                pre_answer: resp.answer.clone(),
                pre_correct: resp.correct,
                post_answer: resp.answer.clone(),
                post_correct: resp.correct,
                self_score: None,
                neighbor_scores: BTreeMap::new(),
                low: Vec::new(),
                dropped: BTreeSet::new(),
                retained: BTreeSet::new(),
                received_confidences: BTreeMap::new(),
            },
        );
        responses.insert(id, resp);
    }
    (responses, RoundTrace { round: 0, agents: agents_map })
}

/// Execute the filter-and-refine protocol for `rounds` rounds; the returned
/// list has `rounds + 1` traces including the round-0 initial state.
pub fn run_sac(
    run: &ProtocolRun,
    task: &Task,
    backend: &dyn Backend,
) -> Result<Vec<RoundTrace>, ProtocolError> {
    run.validate()?;
    let (mut responses, trace0) = initial_round(run, task, backend);
    let mut traces = vec![trace0];

    for t in 0..run.rounds {
        // Honest self-scores first; they double as the reported
        // confidences recorded in the trace.
        let mut self_scores: BTreeMap<usize, f64> = BTreeMap::new();
        for (&i, spec) in &run.specs {
            if spec.role.is_honest() {
                let mut rng =
                    streams::derive(&[run.task_seed, tag::SELF_SCORE, t as u64, i as u64]);
                self_scores.insert(i, backend.score(spec, task, &responses[&i], &mut rng));
            }
        }

        let mut agents_map = BTreeMap::new();
        let mut next = BTreeMap::new();
        for (&i, spec) in &run.specs {
            let own = responses[&i].clone();
            if spec.role == Role::Adversarial {
                // does not follow the protocol: no scoring, no refinement
                agents_map.insert(
                    i,
                    AgentRound {
                        role: spec.role,
                        pre_answer: own.answer.clone(),
                        pre_correct: own.correct,
                        post_answer: own.answer.clone(),
                        post_correct: own.correct,
                        self_score: None,
                        neighbor_scores: BTreeMap::new(),
                        low: Vec::new(),
                        dropped: BTreeSet::new(),
                        retained: BTreeSet::new(),
                        received_confidences: BTreeMap::new(),
                    },
                );
                next.insert(i, own);
                continue;
            }

            let self_score = self_scores[&i];
            let mut neighbor_scores = BTreeMap::new();
            let mut received = BTreeMap::new();
            let mut incoming: BTreeMap<usize, Response> = BTreeMap::new();
            for &j in run.graph.neighbors(i) {
                let sender = &run.specs[&j];
                let (resp, conf) = if sender.role == Role::Adversarial {
                    adversarial_message(sender, task, i, t, run.task_seed)
                        .expect("sender role checked")
                } else {
                    (responses[&j].clone(), self_scores[&j])
                };
                let mut rng = streams::derive(&[
                    run.task_seed,
                    tag::NEIGHBOR_SCORE,
                    t as u64,
                    i as u64,
                    j as u64,
                ]);
                neighbor_scores.insert(j, backend.score(spec, task, &resp, &mut rng));
                received.insert(j, conf);
                incoming.insert(j, resp);
            }

            let outcome = filter_neighbors(&neighbor_scores, self_score, run.f_bound);
            let retained_entries: Vec<RetainedEntry> = outcome
                .retained
                .iter()
                .map(|&j| RetainedEntry {
                    sender: j,
                    response: incoming[&j].clone(),
                    score: neighbor_scores[&j],
                })
                .collect();
            let mut rng = streams::derive(&[run.task_seed, tag::REFINE, t as u64, i as u64]);
            let post = backend.refine(spec, task, &own, self_score, &retained_entries, &mut rng);

            agents_map.insert(
                i,
                AgentRound {
                    role: spec.role,
                    pre_answer: own.answer.clone(),
                    pre_correct: own.correct,
                    post_answer: post.answer.clone(),
                    post_correct: post.correct,
                    self_score: Some(self_score),
                    neighbor_scores,
                    low: outcome.low,
                    dropped: outcome.dropped,
                    retained: outcome.retained,
                    received_confidences: received,
                },
            );
            next.insert(i, post);
        }
        responses = next;
        traces.push(RoundTrace {
            round: t + 1,
            agents: agents_map,
        });
    }
    Ok(traces)
}

/// Confidence-weighted baseline: every agent adopts the answer of the
/// maximum-confidence sender among itself and its neighbors. Honest agents
/// report their self-score; adversaries report 1.0. No filtering.
pub fn run_baseline_cw(
    run: &ProtocolRun,
    task: &Task,
    backend: &dyn Backend,
) -> Result<Vec<RoundTrace>, ProtocolError> {
    run.validate()?;
    let (mut responses, trace0) = initial_round(run, task, backend);
    let mut traces = vec![trace0];

    for t in 0..run.rounds {
        let mut self_scores: BTreeMap<usize, f64> = BTreeMap::new();
        for (&i, spec) in &run.specs {
            if spec.role.is_honest() {
                let mut rng =
                    streams::derive(&[run.task_seed, tag::SELF_SCORE, t as u64, i as u64]);
                self_scores.insert(i, backend.score(spec, task, &responses[&i], &mut rng));
            }
        }

        let mut agents_map = BTreeMap::new();
        let mut next = BTreeMap::new();
        for (&i, spec) in &run.specs {
            let own = responses[&i].clone();
            if spec.role == Role::Adversarial {
                agents_map.insert(
                    i,
                    AgentRound {
                        role: spec.role,
                        pre_answer: own.answer.clone(),
                        pre_correct: own.correct,
                        post_answer: own.answer.clone(),
                        post_correct: own.correct,
                        self_score: None,
                        neighbor_scores: BTreeMap::new(),
                        low: Vec::new(),
                        dropped: BTreeSet::new(),
                        retained: BTreeSet::new(),
                        received_confidences: BTreeMap::new(),
                    },
                );
                next.insert(i, own);
                continue;
            }

            let own_conf = self_scores[&i];
            // candidates: (confidence, sender, answer)
            let mut received = BTreeMap::new();
            let mut candidates: Vec<(f64, usize, Response)> = vec![(own_conf, i, own.clone())];
            for &j in run.graph.neighbors(i) {
                let sender = &run.specs[&j];
                let (resp, conf) = if sender.role == Role::Adversarial {
                    adversarial_message(sender, task, i, t, run.task_seed)
                        .expect("sender role checked")
                } else {
                    (responses[&j].clone(), self_scores[&j])
                };
                received.insert(j, conf);
                candidates.push((conf, j, resp));
            }
            let max_conf = candidates
                .iter()
                .map(|(c, _, _)| *c)
                .fold(f64::NEG_INFINITY, f64::max);
            let maxima: Vec<&(f64, usize, Response)> = candidates
                .iter()
                .filter(|(c, _, _)| *c == max_conf)
                .collect();
            let pick = if maxima.len() == 1 {
                maxima[0]
            } else {
                let mut rng =
                    streams::derive(&[run.task_seed, tag::TIE_BREAK, t as u64, i as u64]);
                maxima[rng.gen_range(0..maxima.len())]
            };
            let post = pick.2.clone();

            agents_map.insert(
                i,
                AgentRound {
                    role: spec.role,
                    pre_answer: own.answer.clone(),
                    pre_correct: own.correct,
                    post_answer: post.answer.clone(),
                    post_correct: post.correct,
                    self_score: Some(own_conf),
                    neighbor_scores: BTreeMap::new(),
                    low: Vec::new(),
                    dropped: BTreeSet::new(),
                    retained: run.graph.neighbors(i).clone(),
                    received_confidences: received,
                },
            );
            next.insert(i, post);
        }
        responses = next;
        traces.push(RoundTrace {
            round: t + 1,
            agents: agents_map,
        });
    }
    Ok(traces)
}

/// Dispatch on the protocol selector.
pub fn run_protocol(
    kind: ProtocolKind,
    run: &ProtocolRun,
    task: &Task,
    backend: &dyn Backend,
) -> Result<Vec<RoundTrace>, ProtocolError> {
    match kind {
        ProtocolKind::Sac => run_sac(run, task, backend),
        ProtocolKind::BaselineCw => run_baseline_cw(run, task, backend),
    }
}

/// Result of the retained-set quality check for one round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropertyOneOutcome {
    Holds,
    /// Some honest agent has no reliable neighbor at all; the premise of
    /// the guarantee does not apply.
    PremiseViolation,
    Violated,
}

/// Retained-set quality check: every honest agent keeps a nonempty
/// retained set whose scores never fall below the floor
/// min(self-score, minimum score assigned to a reliable neighbor).
///
/// The self-score participates in the floor: the bottom-F removal only
/// covers scores strictly below the agent's own anchor, so scores between
/// the anchor and the reliable minimum survive filtering by design and do
/// not indicate a containment failure.
pub fn check_property_one(
    trace: &RoundTrace,
    reliable_set: &BTreeSet<usize>,
) -> PropertyOneOutcome {
    let mut premise_violated = false;
    for rec in trace.agents.values() {
        if !rec.has_filter_data() {
            continue;
        }
        let self_score = rec.self_score.expect("filter data implies self score");
        if rec.retained.is_empty() {
            return PropertyOneOutcome::Violated;
        }
        let reliable_min = rec
            .neighbor_scores
            .iter()
            .filter(|(j, _)| reliable_set.contains(j))
            .map(|(_, &s)| s)
            .fold(f64::INFINITY, f64::min);
        if reliable_min == f64::INFINITY {
            premise_violated = true;
            continue;
        }
        let floor = reliable_min.min(self_score);
        for j in &rec.retained {
            if rec.neighbor_scores[j] < floor {
                return PropertyOneOutcome::Violated;
            }
        }
    }
    if premise_violated {
        PropertyOneOutcome::PremiseViolation
    } else {
        PropertyOneOutcome::Holds
    }
}

/// Directed graph left after each node drops its filtered senders.
pub fn post_filter_digraph(
    graph: &UndirectedGraph,
    dropped: &BTreeMap<usize, BTreeSet<usize>>,
) -> Result<DirectedGraph, GraphError> {
    graph.remove_incoming(dropped)
}

/// Connectivity-preservation check: after every round's filtering, the
/// directed graph of surviving (sender -> receiver) links must contain a
/// rooted out-branching.
pub fn check_property_two(
    graph: &UndirectedGraph,
    traces: &[RoundTrace],
    _f: usize,
) -> Result<bool, GraphError> {
    for trace in traces {
        if trace.round == 0 {
            continue;
        }
        let mut dropped = BTreeMap::new();
        for (&i, rec) in &trace.agents {
            if !rec.dropped.is_empty() {
                dropped.insert(i, rec.dropped.clone());
            }
        }
        let d = post_filter_digraph(graph, &dropped)?;
        if !d.has_rooted_out_branching() {
            return Ok(false);
        }
    }
    Ok(true)
}
