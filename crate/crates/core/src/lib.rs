//! Evaluation and verification-guided optimization of tool-calling knowledge bases.
//!
//! A tool knowledge base carries three layers of context per tool: retrieval
//! content (searched by the retriever), a description (read during tool
//! selection), and a parameter schema (read during parameter filling). This
//! crate evaluates a single-turn tool-calling pipeline against a labeled
//! validation set, attributes each failure to the first layer that broke, and
//! runs a greedy editing loop in which LLM editors rewrite the offending layer
//! and edits are kept only when re-evaluation strictly improves accuracy.
//!
//! Module map:
//! - [`tooldoc`] — tool documents, knowledge-base snapshots, validation, edits
//! - [`callparse`] — call-expression parsing and strict schema-aware matching
//! - [`retrieval`] — chunked lexical/embedding index and Recall@k
//! - [`pipeline`] — retrieve → prompt → infer → parse for one query
//! - [`evalharness`] — dataset evaluation, stage metrics, mismatch records
//! - [`editors`] — guided-instruction prompts and editor-output handling
//! - [`optimizer`] — the greedy accept-if-improved loop, ledger, checkpoints
//! - [`llmclient`] — backend abstraction, throttling, scripted test backend
//! - [`datasets`] — loaders, answer-grouped splits, synthetic scenarios
//! - [`posttrain`] — SFT/DPO/GRPO objective math and preference export

pub mod callparse;
pub mod datasets;
pub mod editors;
pub mod evalharness;
pub mod llmclient;
pub mod optimizer;
pub mod pipeline;
pub mod posttrain;
pub mod retrieval;
pub mod tooldoc;
