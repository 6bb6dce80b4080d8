//! medley: full-catalog recommendation built from pluggable ranking tools,
//! per-user agents with learned tool/intent weights, and LLM-assisted
//! reranking of the fused candidate list.
//!
//! The crate is organized around the pipeline stages:
//!
//! - [`catalog`]: item universe, user behavior sequences, chronological splits
//! - [`tools`]: the full-ranking tool contract and built-in tool models
//! - [`gateway`]: prompt templates, LLM backends, output parsers, replay cache
//! - [`agent`]: per-user state and the memory optimization loop
//! - [`rerank`]: score aggregation, LLM reranking, hallucination filtering, fusion
//! - [`ensemble`]: learned alternatives to the quantitative tool-weight update
//! - [`eval`]: Recall@k, NDCG@k, and the LLM-rated VDCG metric
//! - [`config`] / [`pipeline`]: run configuration and on-disk stage artifacts
//!
//! The pieces compose in memory without the on-disk pipeline:
//!
//! ```
//! use medley::agent::{AgentState, IntentMemory, RecToolMemory};
//! use medley::catalog::{BehaviorSequence, Catalog, ItemId, SplitConfig, UserId};
//! use medley::gateway::{Gateway, GatewayConfig, LlmBackend, MockOracle};
//! use medley::rerank::{final_ranking, RerankOptions};
//! use medley::tools::{ImportedScores, ToolId, ToolModel, ToolSet};
//!
//! let catalog = Catalog::new(
//!     (0..5).map(|i| format!("sku{i}")).collect(),
//!     (0..5).map(|i| format!("snack {i}")).collect(),
//! );
//! let seq = BehaviorSequence {
//!     user: UserId(0),
//!     items: vec![ItemId(0), ItemId(1), ItemId(2), ItemId(3)],
//!     timestamps: vec![10, 20, 30, 40],
//! };
//! let split = SplitConfig { k: 1, c: 2, k_prime: 3, k_cpr: 2 };
//!
//! // Two precomputed tools that disagree about everything past item 4.
//! let tools = ToolSet {
//!     tools: vec![
//!         (
//!             ToolId { index: 0, label: "G".into() },
//!             ToolModel::ImportedScores(ImportedScores::from_rows(
//!                 5,
//!                 vec![(0, vec![0.1, 0.2, 0.3, 0.4, 0.9])],
//!             )),
//!         ),
//!         (
//!             ToolId { index: 1, label: "S".into() },
//!             ToolModel::ImportedScores(ImportedScores::from_rows(
//!                 5,
//!                 vec![(0, vec![0.9, 0.1, 0.2, 0.3, 0.4])],
//!             )),
//!         ),
//!     ],
//!     exclude_seen: true,
//! };
//!
//! // An agent that trusts tool G twice as much, with a deterministic echo
//! // oracle standing in for the LLM.
//! let state = AgentState {
//!     user: UserId(0),
//!     profile: "likes snacks".into(),
//!     substitutes: vec!["snack 4".into()],
//!     complements: vec!["snack 0".into()],
//!     rec_memory: RecToolMemory { weights: vec![2.0, 1.0] },
//!     intent_memory: IntentMemory::uniform(),
//!     epoch: 1,
//! };
//! let gateway = Gateway::new(LlmBackend::Mock(MockOracle::echo()), GatewayConfig::default());
//!
//! let ranked = final_ranking(
//!     &gateway, &state, &tools, &seq, &catalog, &split, &RerankOptions::default(),
//! )
//! .unwrap();
//! assert_eq!(ranked.len(), 3);
//! // Item 4 tops both tools' unseen items under these weights.
//! assert_eq!(ranked[0].0, ItemId(4));
//! ```

pub mod agent;
pub mod catalog;
pub mod config;
pub mod ensemble;
pub mod eval;
pub mod gateway;
pub mod pipeline;
pub mod rerank;
pub mod tools;
