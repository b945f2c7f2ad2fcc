//! Byzantine-resilient multi-agent answer consensus.
//!
//! A deterministic, seed-reproducible simulator for a decentralized
//! filter-and-refine consensus protocol over robustness-verified
//! communication topologies, plus a confidence-weighted baseline, the
//! evaluation metrics, and an optional live-endpoint adapter.

pub mod agents;
pub mod graph;
pub mod harness;
pub mod llm_adapter;
pub mod metrics;
pub mod protocol;
pub mod streams;
