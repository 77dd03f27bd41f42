//! The outer editing loop: iterate over levels top-down, collect failures,
//! ask the level's editor for a rewrite, and keep the edit only when
//! re-evaluation on the training split strictly improves the accept metric.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::editors::{
    build_instruction, enforce_constraints, request_proposal, tools_in_mismatch,
    DroppedModification, EditHistoryEntry, EditorError, IclExample, IclOutcome,
};
use crate::evalharness::{
    cached_reevaluate, collect_mismatches, evaluate_set, EvalConfig, EvalError, EvalReport,
    FinalAccMode, MismatchRecord, ValidationExample,
};
use crate::llmclient::{Backend, LlmError};
use crate::tooldoc::{diff_snapshots, DiffEntry, KbError, Level, LevelContent, ToolKnowledgeBase};

#[derive(Debug, thiserror::Error)]
pub enum OptimizerError {
    #[error("invalid optimizer config: {0}")]
    Config(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error("checkpoint i/o at {path}: {source}")]
    CheckpointIo {
        path: String,
        source: std::io::Error,
    },
    #[error("corrupt checkpoint at {path}: {message}")]
    CorruptCheckpoint { path: String, message: String },
}

/// Metric compared by the accept/reject rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AcceptMetric {
    #[default]
    FinalAccProduct,
    FinalAccJoint,
    /// The edited level's own stage metric, guarded by a no-downstream-
    /// regression check.
    LevelMetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    #[default]
    Full,
    Cached,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub iterations: usize,
    /// Ordered subset of the level hierarchy.
    pub levels: Vec<Level>,
    pub accept_metric: AcceptMetric,
    pub strict_improvement: bool,
    pub eval_mode: EvalMode,
    pub seed: u64,
    pub eval: EvalConfig,
    /// Prompt the editor once per mismatch (default) or once per level pass
    /// with all mismatches batched.
    pub batch_mismatches: bool,
    /// In-context examples shown per editor call, most recent first.
    pub icl_cap: usize,
    pub editor_model: String,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            iterations: 3,
            levels: Level::ALL.to_vec(),
            accept_metric: AcceptMetric::FinalAccProduct,
            strict_improvement: true,
            eval_mode: EvalMode::Full,
            seed: 0,
            eval: EvalConfig::default(),
            batch_mismatches: false,
            icl_cap: 6,
            editor_model: String::new(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        if self.iterations == 0 {
            return Err(OptimizerError::Config(
                "iterations must be at least 1".to_string(),
            ));
        }
        if self.levels.is_empty() {
            return Err(OptimizerError::Config(
                "at least one level is required".to_string(),
            ));
        }
        let rank = |level: Level| Level::ALL.iter().position(|l| *l == level).expect("known");
        for pair in self.levels.windows(2) {
            if rank(pair[0]) >= rank(pair[1]) {
                return Err(OptimizerError::Config(
                    "levels must follow the retrieval, tool, parameter order".to_string(),
                ));
            }
        }
        Ok(())
    }

    /// The evaluation config aligned with the accept metric's composition
    /// mode.
    fn aligned_eval(&self) -> EvalConfig {
        let mut eval = self.eval.clone();
        eval.final_acc_mode = match self.accept_metric {
            AcceptMetric::FinalAccJoint => FinalAccMode::Joint,
            _ => FinalAccMode::Product,
        };
        eval
    }
}

/// One decided proposal, as persisted in the run ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub seq: usize,
    pub iteration: usize,
    pub level: Level,
    /// The mismatch context (its query) this proposal answered.
    pub query: String,
    pub instruction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_output: Option<String>,
    pub analysis: String,
    pub modified_tools: Vec<String>,
    /// Field-level changes the proposal makes against the incumbent snapshot.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diff: Vec<DiffEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped: Vec<DroppedModification>,
    pub pre_score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post_score: Option<f64>,
    pub accepted: bool,
    pub decision: String,
}

/// Resume position: the fixed mismatch list of the interrupted pass plus the
/// next index into it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cursor {
    pub iteration: usize,
    pub level_index: usize,
    pub mismatch_index: usize,
    pub pending: Vec<MismatchRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub current_kb: ToolKnowledgeBase,
    pub ledger: Vec<LedgerEntry>,
    pub best_report: EvalReport,
    pub initial_score: f64,
    /// Present while the run is incomplete.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cursor: Option<Cursor>,
    /// Reason for a graceful stop (editor backend exhaustion).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stopped: Option<String>,
    /// Accepted/rejected proposals re-used as in-context examples.
    #[serde(default)]
    pub run_icl: Vec<IclExample>,
    pub config: OptimizerConfig,
}

impl OptimizerState {
    /// Scores of accepted entries, in ledger order.
    pub fn accepted_scores(&self) -> Vec<f64> {
        self.ledger
            .iter()
            .filter(|e| e.accepted)
            .filter_map(|e| e.post_score)
            .collect()
    }

    pub fn final_score(&self) -> f64 {
        self.best_report.final_acc
    }
}

/// Decision produced by [`accept_if_improved`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AcceptDecision {
    pub accepted: bool,
    pub reason: String,
}

fn metric_of(report: &EvalReport, cfg: &OptimizerConfig, level: Level) -> f64 {
    match cfg.accept_metric {
        AcceptMetric::FinalAccProduct | AcceptMetric::FinalAccJoint => report.final_acc,
        AcceptMetric::LevelMetric => report.stage_metric(level),
    }
}

/// Applies the greedy rule: accept iff the candidate metric strictly exceeds
/// the incumbent (no epsilon band). On accept the state adopts the candidate
/// snapshot and report.
pub fn accept_if_improved(
    state: &mut OptimizerState,
    candidate_kb: ToolKnowledgeBase,
    candidate_report: EvalReport,
    cfg: &OptimizerConfig,
    level: Level,
) -> AcceptDecision {
    let incumbent = metric_of(&state.best_report, cfg, level);
    let candidate = metric_of(&candidate_report, cfg, level);
    let improved = if cfg.strict_improvement {
        candidate > incumbent
    } else {
        candidate >= incumbent
    };
    let mut reason = if improved {
        format!("{incumbent:.6} -> {candidate:.6}")
    } else {
        format!("no improvement ({candidate:.6} vs {incumbent:.6})")
    };
    let mut accepted = improved;
    if accepted && cfg.accept_metric == AcceptMetric::LevelMetric {
        let rank = Level::ALL
            .iter()
            .position(|l| *l == level)
            .expect("known level");
        for downstream in &Level::ALL[rank + 1..] {
            if candidate_report.stage_metric(*downstream)
                < state.best_report.stage_metric(*downstream)
            {
                accepted = false;
                reason = format!("downstream regression at {downstream}");
                break;
            }
        }
    }
    if accepted {
        state.current_kb = candidate_kb;
        state.best_report = candidate_report;
    }
    AcceptDecision { accepted, reason }
}

enum StepOutcome {
    Continue,
    GracefulStop(String),
}

pub struct Optimizer<'a> {
    pub inference: &'a dyn Backend,
    pub editor: &'a dyn Backend,
    pub cfg: OptimizerConfig,
    /// Curated in-context examples prepended to the run's own history.
    pub icl_seed: Vec<IclExample>,
    /// Directory to checkpoint into after every decision.
    pub checkpoint_dir: Option<PathBuf>,
    /// Stop (resumably) after this many proposals; used to exercise
    /// interruption and resume.
    pub proposal_budget: Option<usize>,
}

impl<'a> Optimizer<'a> {
    pub fn new(inference: &'a dyn Backend, editor: &'a dyn Backend, cfg: OptimizerConfig) -> Self {
        Optimizer {
            inference,
            editor,
            cfg,
            icl_seed: Vec::new(),
            checkpoint_dir: None,
            proposal_budget: None,
        }
    }

    pub fn with_icl_seed(mut self, icl: Vec<IclExample>) -> Self {
        self.icl_seed = icl;
        self
    }

    pub fn with_checkpoint_dir(mut self, dir: PathBuf) -> Self {
        self.checkpoint_dir = Some(dir);
        self
    }

    pub fn with_proposal_budget(mut self, budget: usize) -> Self {
        self.proposal_budget = Some(budget);
        self
    }

    /// Runs the full loop from a fresh knowledge base.
    pub fn run(
        &self,
        kb0: ToolKnowledgeBase,
        dataset: &[ValidationExample],
    ) -> Result<OptimizerState, OptimizerError> {
        self.cfg.validate()?;
        let eval_cfg = self.cfg.aligned_eval();
        let best_report = evaluate_set(&kb0, dataset, self.inference, &eval_cfg)?;
        let initial_score = best_report.final_acc;
        let state = OptimizerState {
            current_kb: kb0,
            ledger: Vec::new(),
            initial_score,
            best_report,
            cursor: Some(Cursor {
                iteration: 1,
                level_index: 0,
                mismatch_index: 0,
                pending: Vec::new(),
            }),
            stopped: None,
            run_icl: Vec::new(),
            config: self.cfg.clone(),
        };
        self.advance(state, dataset)
    }

    /// Continues an interrupted run from its recorded cursor.
    pub fn resume(
        &self,
        mut state: OptimizerState,
        dataset: &[ValidationExample],
    ) -> Result<OptimizerState, OptimizerError> {
        self.cfg.validate()?;
        state.stopped = None;
        self.advance(state, dataset)
    }

    fn advance(
        &self,
        mut state: OptimizerState,
        dataset: &[ValidationExample],
    ) -> Result<OptimizerState, OptimizerError> {
        let mut budget = self.proposal_budget;
        let levels = self.cfg.levels.clone();
        while let Some(mut cursor) = state.cursor.take() {
            if cursor.iteration > self.cfg.iterations {
                break;
            }
            while cursor.level_index < levels.len() {
                let level = levels[cursor.level_index];
                if cursor.mismatch_index == 0 && cursor.pending.is_empty() {
                    // E_c is collected once per pass and stays fixed while
                    // its proposals are tried.
                    cursor.pending = collect_mismatches(&state.best_report, level);
                    if self.cfg.batch_mismatches && !cursor.pending.is_empty() {
                        let batch = cursor.pending.clone();
                        cursor.pending = vec![merge_batch(batch)];
                    }
                }
                while cursor.mismatch_index < cursor.pending.len() {
                    if budget == Some(0) {
                        state.cursor = Some(cursor);
                        self.checkpoint_if_configured(&state)?;
                        return Ok(state);
                    }
                    let record = cursor.pending[cursor.mismatch_index].clone();
                    cursor.mismatch_index += 1;
                    if let Some(b) = budget.as_mut() {
                        *b -= 1;
                    }
                    match self.process_one(&mut state, cursor.iteration, level, &record, dataset)? {
                        StepOutcome::Continue => {
                            self.checkpoint_if_configured(&state)?;
                        }
                        StepOutcome::GracefulStop(reason) => {
                            tracing::warn!(reason, "stopping the run early");
                            state.stopped = Some(reason);
                            state.cursor = Some(cursor);
                            self.checkpoint_if_configured(&state)?;
                            return Ok(state);
                        }
                    }
                }
                cursor.level_index += 1;
                cursor.mismatch_index = 0;
                cursor.pending.clear();
            }
            if cursor.iteration < self.cfg.iterations {
                state.cursor = Some(Cursor {
                    iteration: cursor.iteration + 1,
                    level_index: 0,
                    mismatch_index: 0,
                    pending: Vec::new(),
                });
            }
        }
        state.cursor = None;
        self.checkpoint_if_configured(&state)?;
        Ok(state)
    }

    fn process_one(
        &self,
        state: &mut OptimizerState,
        iteration: usize,
        level: Level,
        record: &MismatchRecord,
        dataset: &[ValidationExample],
    ) -> Result<StepOutcome, OptimizerError> {
        let eval_cfg = self.cfg.aligned_eval();
        let pre_score = metric_of(&state.best_report, &self.cfg, level);
        let seq = state.ledger.len();
        let history: Vec<EditHistoryEntry> = state
            .ledger
            .iter()
            .filter(|e| e.level == level)
            .map(|e| EditHistoryEntry {
                tools: e.modified_tools.clone(),
                pre_score: e.pre_score,
                post_score: e.post_score,
                accepted: e.accepted,
            })
            .collect();
        let icl = self.icl_for(state, level);

        let instruction = match build_instruction(
            level,
            &state.current_kb,
            std::slice::from_ref(record),
            &history,
            &icl,
        ) {
            Ok(text) => text,
            Err(err) => {
                return Err(OptimizerError::Config(format!(
                    "instruction build failed: {err}"
                )))
            }
        };

        let mut entry = LedgerEntry {
            seq,
            iteration,
            level,
            query: record.query.clone(),
            instruction: instruction.clone(),
            raw_output: None,
            analysis: String::new(),
            modified_tools: Vec::new(),
            diff: Vec::new(),
            dropped: Vec::new(),
            pre_score,
            post_score: None,
            accepted: false,
            decision: String::new(),
        };

        let (proposal, raw) =
            match request_proposal(self.editor, &instruction, level, &self.cfg.editor_model) {
                Ok(result) => result,
                Err(EditorError::Parse(err)) => {
                    entry.decision = format!("parse_failure: {err}");
                    state.ledger.push(entry);
                    return Ok(StepOutcome::Continue);
                }
                Err(EditorError::Backend(err @ LlmError::ExhaustedRetries { .. })) => {
                    return Ok(StepOutcome::GracefulStop(err.to_string()));
                }
                Err(EditorError::Backend(err)) => {
                    return Ok(StepOutcome::GracefulStop(err.to_string()));
                }
                Err(err) => {
                    return Err(OptimizerError::Config(format!("editor call failed: {err}")))
                }
            };
        entry.raw_output = Some(raw.clone());
        entry.analysis = proposal.analysis.clone();

        let allowed: BTreeSet<String> = tools_in_mismatch(record);
        let mut proposal = proposal;
        proposal.level = level;
        proposal.source_mismatches = vec![record.clone()];
        proposal.pre_score = pre_score;
        let enforcement = enforce_constraints(proposal, &allowed, &state.current_kb);
        entry.dropped = enforcement.dropped;
        let Some(enforced) = enforcement.proposal else {
            entry.decision = "all_modifications_dropped".to_string();
            state.ledger.push(entry);
            return Ok(StepOutcome::Continue);
        };
        entry.modified_tools = enforced.modifications.keys().cloned().collect();

        let before_json = contents_json(level, &state.current_kb, &enforced.modifications);
        let candidate_kb =
            match state
                .current_kb
                .apply_modifications(level, &enforced.modifications, iteration)
            {
                Ok(kb) => kb,
                Err(err) => {
                    entry.decision = format!("apply_rejected: {err}");
                    state.ledger.push(entry);
                    return Ok(StepOutcome::Continue);
                }
            };

        entry.diff = diff_snapshots(&state.current_kb, &candidate_kb);
        let touched: BTreeSet<String> = enforced.modifications.keys().cloned().collect();
        let candidate_report = match self.cfg.eval_mode {
            EvalMode::Full => evaluate_set(&candidate_kb, dataset, self.inference, &eval_cfg)?,
            EvalMode::Cached => {
                match cached_reevaluate(
                    &state.best_report,
                    &candidate_kb,
                    &touched,
                    dataset,
                    self.inference,
                    &eval_cfg,
                ) {
                    Ok(report) => report,
                    Err(EvalError::Lineage { .. }) => {
                        evaluate_set(&candidate_kb, dataset, self.inference, &eval_cfg)?
                    }
                    Err(err) => return Err(err.into()),
                }
            }
        };

        let post_score = metric_of(&candidate_report, &self.cfg, level);
        entry.post_score = Some(post_score);
        let after_json = modifications_json(level, &enforced.modifications);
        let decision = accept_if_improved(state, candidate_kb, candidate_report, &self.cfg, level);
        entry.accepted = decision.accepted;
        entry.decision = decision.reason;
        state.run_icl.push(IclExample {
            level,
            before: before_json,
            after: after_json,
            outcome: if decision.accepted {
                IclOutcome::Accepted
            } else {
                IclOutcome::Rejected
            },
        });
        state.ledger.push(entry);
        Ok(StepOutcome::Continue)
    }

    fn icl_for(&self, state: &OptimizerState, level: Level) -> Vec<IclExample> {
        let mut combined: Vec<IclExample> = state
            .run_icl
            .iter()
            .rev()
            .filter(|e| e.level == level)
            .cloned()
            .collect();
        combined.extend(self.icl_seed.iter().filter(|e| e.level == level).cloned());
        combined.truncate(self.cfg.icl_cap);
        combined
    }

    fn checkpoint_if_configured(&self, state: &OptimizerState) -> Result<(), OptimizerError> {
        if let Some(dir) = &self.checkpoint_dir {
            checkpoint(state, dir)?;
        }
        Ok(())
    }
}

/// Folds a level's mismatch records into one batch record for batch-mode
/// editing.
fn merge_batch(records: Vec<MismatchRecord>) -> MismatchRecord {
    // Batch mode renders all records into one prompt; the merged record
    // carries them as arrays.
    let level = records[0].level;
    let queries: Vec<&str> = records.iter().map(|r| r.query.as_str()).collect();
    MismatchRecord {
        level,
        query: queries.join(" | "),
        expected: serde_json::Value::Array(records.iter().map(|r| r.expected.clone()).collect()),
        actual: serde_json::Value::Array(records.iter().map(|r| r.actual.clone()).collect()),
        model_response_excerpt: records
            .iter()
            .map(|r| r.model_response_excerpt.as_str())
            .collect::<Vec<_>>()
            .join("\n"),
        param_coverage_ratio: records
            .iter()
            .filter_map(|r| r.param_coverage_ratio)
            .reduce(f64::min),
        param_all_match: records
            .iter()
            .filter_map(|r| r.param_all_match)
            .reduce(|a, b| a && b),
    }
}

fn contents_json(
    level: Level,
    kb: &ToolKnowledgeBase,
    mods: &std::collections::BTreeMap<String, LevelContent>,
) -> serde_json::Value {
    let entries: Vec<serde_json::Value> = mods
        .keys()
        .filter_map(|name| kb.get(name))
        .map(|doc| match level {
            Level::Retrieval => {
                serde_json::json!({"name": doc.name, "retrieval content": doc.retrieval_content})
            }
            Level::Tool => serde_json::json!({"name": doc.name, "description": doc.description}),
            Level::Parameter => {
                serde_json::json!({"name": doc.name, "parameters": doc.parameter_schema})
            }
        })
        .collect();
    serde_json::Value::Array(entries)
}

fn modifications_json(
    level: Level,
    mods: &std::collections::BTreeMap<String, LevelContent>,
) -> serde_json::Value {
    let entries: Vec<serde_json::Value> = mods
        .iter()
        .map(|(name, content)| match (level, content) {
            (Level::Retrieval, LevelContent::Text(text)) => {
                serde_json::json!({"name": name, "retrieval content": text})
            }
            (Level::Tool, LevelContent::Text(text)) => {
                serde_json::json!({"name": name, "description": text})
            }
            (_, LevelContent::Parameters(params)) => {
                serde_json::json!({"name": name, "parameters": params})
            }
            (_, LevelContent::Text(text)) => serde_json::json!({"name": name, "content": text}),
        })
        .collect();
    serde_json::Value::Array(entries)
}

/// Persists the state into `dir/state.json` (atomically) plus a
/// `dir/ledger.jsonl` rendering, one entry per line.
pub fn checkpoint(state: &OptimizerState, dir: &Path) -> Result<(), OptimizerError> {
    let io_err = |path: &Path, source| OptimizerError::CheckpointIo {
        path: path.display().to_string(),
        source,
    };
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let state_path = dir.join("state.json");
    let tmp_path = dir.join("state.json.tmp");
    let raw = serde_json::to_string(state).expect("state serializes");
    std::fs::write(&tmp_path, raw).map_err(|e| io_err(&tmp_path, e))?;
    std::fs::rename(&tmp_path, &state_path).map_err(|e| io_err(&state_path, e))?;
    write_ledger_jsonl(&state.ledger, &dir.join("ledger.jsonl"))?;
    Ok(())
}

/// Loads a checkpointed state. A truncated or malformed file is a typed
/// error; nothing is partially loaded.
pub fn restore(dir: &Path) -> Result<OptimizerState, OptimizerError> {
    let state_path = dir.join("state.json");
    let raw = std::fs::read_to_string(&state_path).map_err(|e| OptimizerError::CheckpointIo {
        path: state_path.display().to_string(),
        source: e,
    })?;
    serde_json::from_str(&raw).map_err(|e| OptimizerError::CorruptCheckpoint {
        path: state_path.display().to_string(),
        message: e.to_string(),
    })
}

/// Writes the ledger as JSON lines, one entry per line in sequence order.
pub fn write_ledger_jsonl(ledger: &[LedgerEntry], path: &Path) -> Result<(), OptimizerError> {
    let mut out = String::new();
    for entry in ledger {
        out.push_str(&serde_json::to_string(entry).expect("entry serializes"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| OptimizerError::CheckpointIo {
        path: path.display().to_string(),
        source: e,
    })
}

/// Reads a ledger file written by [`write_ledger_jsonl`].
pub fn read_ledger_jsonl(path: &Path) -> Result<Vec<LedgerEntry>, OptimizerError> {
    let raw = std::fs::read_to_string(path).map_err(|e| OptimizerError::CheckpointIo {
        path: path.display().to_string(),
        source: e,
    })?;
    raw.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            serde_json::from_str(line).map_err(|e| OptimizerError::CorruptCheckpoint {
                path: path.display().to_string(),
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{
        generate_synthetic_scenario, EditorBehavior, PlantedDefect, ScenarioSpec,
    };
    use crate::llmclient::ScriptedBackend;

    fn scenario_cfg(scenario: &crate::datasets::SyntheticScenario) -> OptimizerConfig {
        OptimizerConfig {
            iterations: 3,
            eval: scenario.eval_config(),
            ..OptimizerConfig::default()
        }
    }

    fn full_scenario_spec() -> ScenarioSpec {
        ScenarioSpec {
            seed: 9,
            tool_count: 6,
            defects: vec![
                PlantedDefect::new(Level::Retrieval, 0),
                PlantedDefect::new(Level::Tool, 2),
                PlantedDefect::new(Level::Parameter, 4),
            ],
            healthy_queries: 2,
            retriever_k: 2,
        }
    }

    #[test]
    fn converged_input_is_a_no_op() {
        let spec = ScenarioSpec {
            seed: 5,
            tool_count: 3,
            defects: vec![],
            healthy_queries: 3,
            retriever_k: 2,
        };
        let scenario = generate_synthetic_scenario(&spec).unwrap();
        let inference = ScriptedBackend::from_spec(scenario.inference_fixtures.clone()).unwrap();
        let editor = ScriptedBackend::from_spec(scenario.editor_fixtures.clone()).unwrap();
        let cfg = scenario_cfg(&scenario);
        let initial_id = scenario.kb.snapshot_id.clone();
        let state = Optimizer::new(&inference, &editor, cfg)
            .run(scenario.kb, &scenario.examples)
            .unwrap();
        assert!(state.ledger.is_empty());
        assert_eq!(state.current_kb.snapshot_id, initial_id);
        assert_eq!(state.final_score(), 1.0);
    }

    #[test]
    fn planted_defects_are_repaired_with_increasing_scores() {
        let scenario = generate_synthetic_scenario(&full_scenario_spec()).unwrap();
        let inference = ScriptedBackend::from_spec(scenario.inference_fixtures.clone()).unwrap();
        let editor = ScriptedBackend::from_spec(scenario.editor_fixtures.clone()).unwrap();
        let cfg = scenario_cfg(&scenario);
        let state = Optimizer::new(&inference, &editor, cfg)
            .run(scenario.kb, &scenario.examples)
            .unwrap();
        assert!(state.initial_score < 1.0);
        assert_eq!(state.final_score(), 1.0);
        let scores = state.accepted_scores();
        assert_eq!(scores.len(), 3);
        assert!(scores.windows(2).all(|w| w[0] < w[1]));
        assert!(state.stopped.is_none());
        assert!(state.cursor.is_none());
    }

    #[test]
    fn equal_score_candidates_are_rejected() {
        let scenario =
            generate_synthetic_scenario(&ScenarioSpec {
                seed: 6,
                tool_count: 4,
                defects: vec![
                    PlantedDefect::new(Level::Tool, 1).with_editor(EditorBehavior::Unhelpful)
                ],
                healthy_queries: 2,
                retriever_k: 2,
            })
            .unwrap();
        let inference = ScriptedBackend::from_spec(scenario.inference_fixtures.clone()).unwrap();
        let editor = ScriptedBackend::from_spec(scenario.editor_fixtures.clone()).unwrap();
        let cfg = scenario_cfg(&scenario);
        let initial_id = scenario.kb.snapshot_id.clone();
        let state = Optimizer::new(&inference, &editor, cfg)
            .run(scenario.kb, &scenario.examples)
            .unwrap();
        assert!(state.accepted_scores().is_empty());
        assert!(state.ledger.iter().all(|e| !e.accepted));
        assert_eq!(state.current_kb.snapshot_id, initial_id);
        // Rejected proposals still record both scores.
        assert!(state
            .ledger
            .iter()
            .any(|e| e.post_score.is_some() && e.decision.contains("no improvement")));
    }

    #[test]
    fn malformed_editor_output_skips_without_crashing() {
        let scenario =
            generate_synthetic_scenario(&ScenarioSpec {
                seed: 7,
                tool_count: 4,
                defects: vec![
                    PlantedDefect::new(Level::Tool, 1).with_editor(EditorBehavior::Malformed)
                ],
                healthy_queries: 2,
                retriever_k: 2,
            })
            .unwrap();
        let inference = ScriptedBackend::from_spec(scenario.inference_fixtures.clone()).unwrap();
        let editor = ScriptedBackend::from_spec(scenario.editor_fixtures.clone()).unwrap();
        let cfg = scenario_cfg(&scenario);
        let state = Optimizer::new(&inference, &editor, cfg)
            .run(scenario.kb, &scenario.examples)
            .unwrap();
        assert!(state
            .ledger
            .iter()
            .all(|e| e.decision.starts_with("parse_failure")));
        assert!(state.accepted_scores().is_empty());
    }

    #[test]
    fn accept_rule_is_strict_with_no_epsilon_band() {
        let scenario = generate_synthetic_scenario(&full_scenario_spec()).unwrap();
        let inference = ScriptedBackend::from_spec(scenario.inference_fixtures.clone()).unwrap();
        let cfg = scenario_cfg(&scenario);
        let eval_cfg = cfg.aligned_eval();
        let report = evaluate_set(&scenario.kb, &scenario.examples, &inference, &eval_cfg).unwrap();
        let mut state = OptimizerState {
            current_kb: scenario.kb.clone(),
            ledger: Vec::new(),
            initial_score: report.final_acc,
            best_report: report.clone(),
            cursor: None,
            stopped: None,
            run_icl: Vec::new(),
            config: cfg.clone(),
        };
        // Same snapshot, same report: equal metric must be rejected.
        let decision = accept_if_improved(
            &mut state,
            scenario.kb.clone(),
            report.clone(),
            &cfg,
            Level::Tool,
        );
        assert!(!decision.accepted);
        // A fabricated 1e-12 improvement must be accepted.
        let mut better = report.clone();
        better.final_acc += 1e-12;
        let decision =
            accept_if_improved(&mut state, scenario.kb.clone(), better, &cfg, Level::Tool);
        assert!(decision.accepted);
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let scenario = generate_synthetic_scenario(&full_scenario_spec()).unwrap();
        let inference = ScriptedBackend::from_spec(scenario.inference_fixtures.clone()).unwrap();
        let editor = ScriptedBackend::from_spec(scenario.editor_fixtures.clone()).unwrap();
        let cfg = scenario_cfg(&scenario);
        let state = Optimizer::new(&inference, &editor, cfg)
            .run(scenario.kb, &scenario.examples)
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        checkpoint(&state, dir.path()).unwrap();
        let restored = restore(dir.path()).unwrap();
        assert_eq!(restored, state);
        let ledger = read_ledger_jsonl(&dir.path().join("ledger.jsonl")).unwrap();
        assert_eq!(ledger, state.ledger);
    }

    #[test]
    fn truncated_checkpoint_is_a_typed_error() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("state.json"), "{\"current_kb\": {").unwrap();
        assert!(matches!(
            restore(dir.path()),
            Err(OptimizerError::CorruptCheckpoint { .. })
        ));
    }

    #[test]
    fn interrupted_run_resumes_to_the_identical_ledger() {
        let scenario = generate_synthetic_scenario(&full_scenario_spec()).unwrap();
        let inference = ScriptedBackend::from_spec(scenario.inference_fixtures.clone()).unwrap();
        let editor = ScriptedBackend::from_spec(scenario.editor_fixtures.clone()).unwrap();
        let cfg = scenario_cfg(&scenario);

        let uninterrupted = Optimizer::new(&inference, &editor, cfg.clone())
            .run(scenario.kb.clone(), &scenario.examples)
            .unwrap();

        // Fresh backends so scripted hit counters restart.
        let inference2 = ScriptedBackend::from_spec(scenario.inference_fixtures.clone()).unwrap();
        let editor2 = ScriptedBackend::from_spec(scenario.editor_fixtures.clone()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let partial = Optimizer::new(&inference2, &editor2, cfg.clone())
            .with_checkpoint_dir(dir.path().to_path_buf())
            .with_proposal_budget(2)
            .run(scenario.kb.clone(), &scenario.examples)
            .unwrap();
        assert!(partial.cursor.is_some());
        assert_eq!(partial.ledger.len(), 2);

        let restored = restore(dir.path()).unwrap();
        assert_eq!(restored, partial);
        let resumed = Optimizer::new(&inference2, &editor2, cfg)
            .resume(restored, &scenario.examples)
            .unwrap();
        assert_eq!(resumed.ledger, uninterrupted.ledger);
        assert_eq!(
            resumed.current_kb.snapshot_id,
            uninterrupted.current_kb.snapshot_id
        );
    }

    #[test]
    fn single_level_config_restricts_the_ledger() {
        let scenario = generate_synthetic_scenario(&full_scenario_spec()).unwrap();
        let inference = ScriptedBackend::from_spec(scenario.inference_fixtures.clone()).unwrap();
        let editor = ScriptedBackend::from_spec(scenario.editor_fixtures.clone()).unwrap();
        let cfg = OptimizerConfig {
            levels: vec![Level::Tool],
            iterations: 2,
            eval: scenario.eval_config(),
            ..OptimizerConfig::default()
        };
        let state = Optimizer::new(&inference, &editor, cfg)
            .run(scenario.kb, &scenario.examples)
            .unwrap();
        assert!(!state.ledger.is_empty());
        assert!(state.ledger.iter().all(|e| e.level == Level::Tool));
    }

    #[test]
    fn misordered_levels_are_rejected() {
        let cfg = OptimizerConfig {
            levels: vec![Level::Parameter, Level::Tool],
            ..OptimizerConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(OptimizerError::Config(_))));
    }

    #[test]
    fn batch_mode_folds_each_level_pass_into_one_proposal() {
        let scenario = generate_synthetic_scenario(&full_scenario_spec()).unwrap();
        let inference = ScriptedBackend::from_spec(scenario.inference_fixtures.clone()).unwrap();
        let editor = ScriptedBackend::from_spec(scenario.editor_fixtures.clone()).unwrap();
        let cfg = OptimizerConfig {
            batch_mismatches: true,
            iterations: 3,
            eval: scenario.eval_config(),
            ..OptimizerConfig::default()
        };
        let state = Optimizer::new(&inference, &editor, cfg)
            .run(scenario.kb, &scenario.examples)
            .unwrap();
        assert_eq!(state.final_score(), 1.0);
        // At most one proposal per (iteration, level).
        let mut seen = std::collections::BTreeSet::new();
        for entry in &state.ledger {
            assert!(seen.insert((entry.iteration, entry.level)));
        }
    }

    #[test]
    fn editor_backend_exhaustion_stops_gracefully() {
        use crate::llmclient::{
            PromptMatcher, ResponseScript, ScriptRoute, ScriptedSpec, SimulatedClock,
            ThrottlePolicy, ThrottledBackend,
        };
        let scenario = generate_synthetic_scenario(&full_scenario_spec()).unwrap();
        let inference = ScriptedBackend::from_spec(scenario.inference_fixtures.clone()).unwrap();
        let failing = ScriptedSpec {
            routes: vec![ScriptRoute {
                role: None,
                matcher: PromptMatcher::Any,
                script: ResponseScript::AlwaysFail {
                    message: "editor down".to_string(),
                },
            }],
            ..ScriptedSpec::default()
        };
        let editor = ThrottledBackend::new(
            ScriptedBackend::from_spec(failing).unwrap(),
            ThrottlePolicy {
                requests_per_minute: 10_000.0,
                ..ThrottlePolicy::default()
            },
            std::sync::Arc::new(SimulatedClock::new()),
        );
        let cfg = scenario_cfg(&scenario);
        let state = Optimizer::new(&inference, &editor, cfg)
            .run(scenario.kb, &scenario.examples)
            .unwrap();
        assert!(state.stopped.is_some());
        assert!(state.cursor.is_some());
    }
}
