//! Validation-set evaluation: stage metrics, failure attribution, caching.
//!
//! Each query passes through three gated stages. Retrieval must place every
//! expected tool in the top k; selection must reproduce the expected name
//! multiset; filling must match the full call multiset. A query is attributed
//! to the first stage that failed, and each stage metric is computed over the
//! population that survived the previous one, so the product of the three
//! reconstructs the joint pass rate.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::callparse::{match_call_set, tool_name_set_match, MatchError, MatchPolicy, ToolCall};
use crate::llmclient::Backend;
use crate::pipeline::{
    assemble_prompt, prompt_fingerprint, run_query, InferenceOutcome, PipelineConfig,
    PipelineError, StageStatus,
};
use crate::retrieval::{
    index_kb, recall_at_k, recall_fraction_at_k, retrieve, RetrievalError, RetrieverConfig,
};
use crate::tooldoc::{Level, ToolDocument, ToolKnowledgeBase};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("validation dataset is empty")]
    EmptyDataset,
    #[error("example {index}: {message}")]
    InvalidExample { index: usize, message: String },
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error("cache lineage mismatch: report is for {report_snapshot:?} which is not the parent of {kb_snapshot:?}")]
    Lineage {
        report_snapshot: String,
        kb_snapshot: String,
    },
}

/// Origin of a validation example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleSource {
    Xlam,
    Bfcl,
    Synthetic,
}

/// One labeled query: the expected retrieval set and the expected call
/// multiset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationExample {
    pub query: String,
    pub expected_tools: BTreeSet<String>,
    pub expected_calls: Vec<ToolCall>,
    pub source: ExampleSource,
    /// Unique-answer group key used by the dataset split.
    pub entity_key: String,
}

impl ValidationExample {
    /// Builds an example, deriving `expected_tools` and the entity key from
    /// the calls when not supplied.
    pub fn new(
        query: impl Into<String>,
        expected_calls: Vec<ToolCall>,
        source: ExampleSource,
    ) -> Result<Self, String> {
        if expected_calls.is_empty() {
            return Err("expected_calls must be non-empty".to_string());
        }
        let expected_tools: BTreeSet<String> =
            expected_calls.iter().map(|c| c.name.clone()).collect();
        let entity_key = entity_key_for(&expected_calls, false);
        Ok(ValidationExample {
            query: query.into(),
            expected_tools,
            expected_calls,
            source,
            entity_key,
        })
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.expected_calls.is_empty() {
            return Err("expected_calls must be non-empty".to_string());
        }
        for call in &self.expected_calls {
            if !self.expected_tools.contains(&call.name) {
                return Err(format!(
                    "call names tool {:?} missing from expected_tools",
                    call.name
                ));
            }
        }
        Ok(())
    }
}

/// Order-normalized serialization of the expected answer, optionally keyed on
/// tool names only.
pub fn entity_key_for(calls: &[ToolCall], names_only: bool) -> String {
    let mut parts: Vec<String> = if names_only {
        calls.iter().map(|c| c.name.clone()).collect()
    } else {
        calls.iter().map(|c| c.canonical_string()).collect()
    };
    parts.sort();
    parts.join("|")
}

/// How the headline metric is composed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FinalAccMode {
    /// Product of the three conditional stage metrics.
    #[default]
    Product,
    /// Mean of the per-query all-stages-pass indicator.
    Joint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub retriever: RetrieverConfig,
    pub pipeline: PipelineConfig,
    pub policy: MatchPolicy,
    pub final_acc_mode: FinalAccMode,
    /// Report the micro-averaged recall fraction alongside the headline
    /// all-or-nothing recall.
    pub recall_micro_average: bool,
    /// Worker threads for per-query inference. Aggregation stays in dataset
    /// order regardless.
    pub parallelism: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            retriever: RetrieverConfig::default(),
            pipeline: PipelineConfig::default(),
            policy: MatchPolicy::default(),
            final_acc_mode: FinalAccMode::Product,
            recall_micro_average: false,
            parallelism: 1,
        }
    }
}

/// A level-tagged failure case; the editors consume these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MismatchRecord {
    pub level: Level,
    pub query: String,
    /// Expected tools (retrieval/tool levels) or expected calls rendered in
    /// the structured form (parameter level).
    pub expected: serde_json::Value,
    /// What actually happened at that level.
    pub actual: serde_json::Value,
    pub model_response_excerpt: String,
    /// Required-parameter fill ratio; parameter level only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param_coverage_ratio: Option<f64>,
    /// Whole-set verdict; parameter level only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param_all_match: Option<bool>,
}

/// Aggregated evaluation results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub retrieval_recall: f64,
    pub tool_selection_acc: f64,
    pub parameter_filling_acc: f64,
    pub final_acc: f64,
    /// Micro-averaged recall fraction, when enabled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieval_recall_micro: Option<f64>,
    pub per_query: Vec<InferenceOutcome>,
    pub mismatches: Vec<MismatchRecord>,
    pub kb_snapshot_id: String,
    pub final_acc_mode: FinalAccMode,
    /// Queries whose backend call failed outright.
    pub errored_queries: usize,
    /// Set when any query errored; partial numbers are flagged, never
    /// silently averaged in.
    pub incomplete: bool,
}

impl EvalReport {
    pub fn stage_metric(&self, level: Level) -> f64 {
        match level {
            Level::Retrieval => self.retrieval_recall,
            Level::Tool => self.tool_selection_acc,
            Level::Parameter => self.parameter_filling_acc,
        }
    }
}

/// Composes the headline accuracy from the three stage metrics.
pub fn final_accuracy(recall: f64, selection: f64, filling: f64) -> f64 {
    recall * selection * filling
}

/// Scores one finished outcome against its example, assigning stage statuses
/// and producing the first-failing-level mismatch record if any.
fn grade_outcome(
    outcome: &mut InferenceOutcome,
    example: &ValidationExample,
    kb: &ToolKnowledgeBase,
    cfg: &EvalConfig,
) -> Result<Option<MismatchRecord>, EvalError> {
    if outcome.errored {
        outcome.statuses.retrieval = Some(StageStatus::Fail);
        outcome.statuses.selection = Some(StageStatus::Fail);
        outcome.statuses.filling = Some(StageStatus::Fail);
        return Ok(Some(MismatchRecord {
            level: Level::Retrieval,
            query: example.query.clone(),
            expected: serde_json::json!(example.expected_tools),
            actual: serde_json::json!({
                "error": outcome.error_message.clone().unwrap_or_default()
            }),
            model_response_excerpt: String::new(),
            param_coverage_ratio: None,
            param_all_match: None,
        }));
    }

    let retrieved_names: Vec<String> = outcome
        .retrieved
        .iter()
        .map(|(name, _)| name.clone())
        .collect();
    let retrieval_pass =
        recall_at_k(&outcome.retrieved, &example.expected_tools, cfg.pipeline.k) == 1;
    outcome.statuses.retrieval = Some(if retrieval_pass {
        StageStatus::Pass
    } else {
        StageStatus::Fail
    });
    if !retrieval_pass {
        outcome.statuses.selection = Some(StageStatus::Skipped);
        outcome.statuses.filling = Some(StageStatus::Skipped);
        return Ok(Some(MismatchRecord {
            level: Level::Retrieval,
            query: example.query.clone(),
            expected: serde_json::json!(example.expected_tools),
            actual: serde_json::json!(retrieved_names),
            model_response_excerpt: excerpt_of(outcome),
            param_coverage_ratio: None,
            param_all_match: None,
        }));
    }

    let selection_pass = tool_name_set_match(&outcome.predicted_calls, &example.expected_calls);
    outcome.statuses.selection = Some(if selection_pass {
        StageStatus::Pass
    } else {
        StageStatus::Fail
    });
    if !selection_pass {
        outcome.statuses.filling = Some(StageStatus::Skipped);
        let actual_names: Vec<&str> = outcome
            .predicted_calls
            .iter()
            .map(|c| c.name.as_str())
            .collect();
        return Ok(Some(MismatchRecord {
            level: Level::Tool,
            query: example.query.clone(),
            expected: serde_json::json!(example.expected_tools),
            actual: serde_json::json!(actual_names),
            model_response_excerpt: excerpt_of(outcome),
            param_coverage_ratio: None,
            param_all_match: None,
        }));
    }

    let set_outcome = match_call_set(
        &outcome.predicted_calls,
        &example.expected_calls,
        kb,
        &cfg.policy,
    )?;
    outcome.statuses.filling = Some(if set_outcome.is_match {
        StageStatus::Pass
    } else {
        StageStatus::Fail
    });
    if set_outcome.is_match {
        return Ok(None);
    }
    Ok(Some(MismatchRecord {
        level: Level::Parameter,
        query: example.query.clone(),
        expected: crate::callparse::calls_to_structured_json(&example.expected_calls),
        actual: crate::callparse::calls_to_structured_json(&outcome.predicted_calls),
        model_response_excerpt: excerpt_of(outcome),
        param_coverage_ratio: Some(set_outcome.param_coverage_ratio),
        param_all_match: Some(set_outcome.is_match),
    }))
}

fn excerpt_of(outcome: &InferenceOutcome) -> String {
    if outcome.reasoning_excerpt.is_empty() {
        outcome
            .raw_response
            .chars()
            .take(crate::pipeline::REASONING_EXCERPT_LIMIT)
            .collect()
    } else {
        outcome.reasoning_excerpt.clone()
    }
}

fn aggregate(
    mut outcomes: Vec<InferenceOutcome>,
    dataset: &[ValidationExample],
    kb: &ToolKnowledgeBase,
    cfg: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    let mut mismatches = Vec::new();
    let mut micro_found = 0usize;
    let mut micro_total = 0usize;
    for (outcome, example) in outcomes.iter_mut().zip(dataset.iter()) {
        if let Some(record) = grade_outcome(outcome, example, kb, cfg)? {
            mismatches.push(record);
        }
        if cfg.recall_micro_average {
            let (found, total) =
                recall_fraction_at_k(&outcome.retrieved, &example.expected_tools, cfg.pipeline.k);
            micro_found += found;
            micro_total += total;
        }
    }

    let n = outcomes.len();
    let retrieval_pass = outcomes
        .iter()
        .filter(|o| o.statuses.retrieval == Some(StageStatus::Pass))
        .count();
    let selection_pass = outcomes
        .iter()
        .filter(|o| o.statuses.selection == Some(StageStatus::Pass))
        .count();
    let filling_pass = outcomes
        .iter()
        .filter(|o| o.statuses.filling == Some(StageStatus::Pass))
        .count();

    let ratio = |num: usize, den: usize| {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let retrieval_recall = ratio(retrieval_pass, n);
    let tool_selection_acc = ratio(selection_pass, retrieval_pass);
    let parameter_filling_acc = ratio(filling_pass, selection_pass);
    let final_acc = match cfg.final_acc_mode {
        FinalAccMode::Product => {
            final_accuracy(retrieval_recall, tool_selection_acc, parameter_filling_acc)
        }
        FinalAccMode::Joint => ratio(filling_pass, n),
    };
    let errored_queries = outcomes.iter().filter(|o| o.errored).count();

    Ok(EvalReport {
        retrieval_recall,
        tool_selection_acc,
        parameter_filling_acc,
        final_acc,
        retrieval_recall_micro: cfg
            .recall_micro_average
            .then(|| ratio(micro_found, micro_total)),
        per_query: outcomes,
        mismatches,
        kb_snapshot_id: kb.snapshot_id.clone(),
        final_acc_mode: cfg.final_acc_mode,
        errored_queries,
        incomplete: errored_queries > 0,
    })
}

fn run_all_queries(
    kb: &ToolKnowledgeBase,
    index: &crate::retrieval::RetrievalIndex,
    dataset: &[ValidationExample],
    backend: &dyn Backend,
    cfg: &EvalConfig,
) -> Result<Vec<InferenceOutcome>, EvalError> {
    if cfg.parallelism <= 1 || dataset.len() <= 1 {
        return dataset
            .iter()
            .map(|ex| Ok(run_query(kb, index, &ex.query, backend, &cfg.pipeline)?))
            .collect();
    }
    // Fan out over a shared work counter; results carry their index so the
    // fold stays in dataset order.
    let next = std::sync::atomic::AtomicUsize::new(0);
    let next = &next;
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::scope(|scope| {
        for _ in 0..cfg.parallelism.min(dataset.len()) {
            let tx = tx.clone();
            scope.spawn(move || loop {
                let idx = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if idx >= dataset.len() {
                    break;
                }
                let result = run_query(kb, index, &dataset[idx].query, backend, &cfg.pipeline);
                if tx.send((idx, result)).is_err() {
                    break;
                }
            });
        }
    });
    drop(tx);
    let mut slots: Vec<Option<Result<InferenceOutcome, PipelineError>>> =
        (0..dataset.len()).map(|_| None).collect();
    for (idx, result) in rx {
        slots[idx] = Some(result);
    }
    slots
        .into_iter()
        .map(|slot| Ok(slot.expect("every slot filled by a worker")?))
        .collect()
}

/// Evaluates the whole dataset on one knowledge-base snapshot.
pub fn evaluate_set(
    kb: &ToolKnowledgeBase,
    dataset: &[ValidationExample],
    backend: &dyn Backend,
    cfg: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    if dataset.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    for (index, example) in dataset.iter().enumerate() {
        example
            .validate()
            .map_err(|message| EvalError::InvalidExample { index, message })?;
    }
    let index = index_kb(kb, &cfg.retriever)?;
    let outcomes = run_all_queries(kb, &index, dataset, backend, cfg)?;
    aggregate(outcomes, dataset, kb, cfg)
}

/// Extracts the mismatch records of one level, in dataset order.
pub fn collect_mismatches(report: &EvalReport, level: Level) -> Vec<MismatchRecord> {
    report
        .mismatches
        .iter()
        .filter(|m| m.level == level)
        .cloned()
        .collect()
}

/// Re-evaluates after an edit, reusing inference responses for queries whose
/// assembled prompt is unchanged.
///
/// Retrieval is recomputed for every query (it is cheap and global corpus
/// statistics may shift); the backend is consulted only where the candidate
/// documents changed. With a deterministic backend the result equals
/// [`evaluate_set`] exactly.
pub fn cached_reevaluate(
    prev_report: &EvalReport,
    kb_new: &ToolKnowledgeBase,
    touched_tools: &BTreeSet<String>,
    dataset: &[ValidationExample],
    backend: &dyn Backend,
    cfg: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    if dataset.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let lineage_ok = kb_new.parent_snapshot_id.as_deref() == Some(&prev_report.kb_snapshot_id)
        || kb_new.snapshot_id == prev_report.kb_snapshot_id;
    if !lineage_ok {
        return Err(EvalError::Lineage {
            report_snapshot: prev_report.kb_snapshot_id.clone(),
            kb_snapshot: kb_new.snapshot_id.clone(),
        });
    }
    if prev_report.per_query.len() != dataset.len() {
        return Err(EvalError::Lineage {
            report_snapshot: format!("{} outcomes", prev_report.per_query.len()),
            kb_snapshot: format!("{} examples", dataset.len()),
        });
    }

    let index = index_kb(kb_new, &cfg.retriever)?;
    let mut outcomes = Vec::with_capacity(dataset.len());
    for (example, prev) in dataset.iter().zip(prev_report.per_query.iter()) {
        let retrieved = retrieve(&index, &example.query, cfg.pipeline.k)?;
        let candidates: Vec<&ToolDocument> = retrieved
            .iter()
            .filter_map(|(name, _)| kb_new.get(name))
            .collect();
        // The prompt fingerprint subsumes the touched-tool test: it moves
        // whenever the candidate list or any candidate's visible content
        // changed. Grading below always uses kb_new schemas.
        let new_fingerprint = if candidates.is_empty() {
            String::new()
        } else {
            prompt_fingerprint(&assemble_prompt(&candidates, &example.query)?)
        };
        let _ = touched_tools;
        let must_rerun = prev.errored || new_fingerprint != prev.prompt_sha256;
        if must_rerun {
            outcomes.push(run_query(
                kb_new,
                &index,
                &example.query,
                backend,
                &cfg.pipeline,
            )?);
        } else {
            let mut reused = prev.clone();
            reused.retrieved = retrieved;
            reused.kb_snapshot_id = kb_new.snapshot_id.clone();
            reused.statuses = Default::default();
            outcomes.push(reused);
        }
    }
    aggregate(outcomes, dataset, kb_new, cfg)
}
