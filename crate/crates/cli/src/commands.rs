//! Subcommand implementations.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use docsmith_core::datasets::{
    generate_synthetic_scenario, split_by_answer_with, ScenarioSpec, SplitOptions,
};
use docsmith_core::editors::IclExample;
use docsmith_core::evalharness::{evaluate_set, EvalConfig, EvalReport, ValidationExample};
use docsmith_core::optimizer::{
    checkpoint, read_ledger_jsonl, restore, write_ledger_jsonl, LedgerEntry, Optimizer,
    OptimizerConfig, OptimizerState,
};
use docsmith_core::posttrain::export_preferences;
use docsmith_core::tooldoc::ToolKnowledgeBase;

use crate::config::{write_artifact, write_native_dataset, Backends, Provenance};

/// Mean and sample standard deviation.
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Serialize)]
struct MetricSummary {
    mean: f64,
    stdev: f64,
}

#[derive(Debug, Serialize)]
struct EvaluateArtifact {
    trials: usize,
    retrieval_recall: MetricSummary,
    tool_selection_acc: MetricSummary,
    parameter_filling_acc: MetricSummary,
    final_acc: MetricSummary,
    incomplete: bool,
    report: EvalReport,
}

fn render_summary_table(artifact: &EvaluateArtifact) -> String {
    let row = |name: &str, m: &MetricSummary| {
        format!(
            "{:<24} {:>8.2} +/- {:<6.2}\n",
            name,
            m.mean * 100.0,
            m.stdev * 100.0
        )
    };
    let mut out = String::new();
    out.push_str(&format!(
        "{:<24} {:>8}     {}\n",
        "metric", "mean%", "stdev"
    ));
    out.push_str(&row("retrieval_recall", &artifact.retrieval_recall));
    out.push_str(&row("tool_selection_acc", &artifact.tool_selection_acc));
    out.push_str(&row(
        "parameter_filling_acc",
        &artifact.parameter_filling_acc,
    ));
    out.push_str(&row("final_acc", &artifact.final_acc));
    out
}

/// Runs the evaluation `trials` times and writes the report artifacts.
/// Returns the process exit code (2 when the report is incomplete).
pub fn cmd_evaluate(
    kb: ToolKnowledgeBase,
    dataset: &[ValidationExample],
    backends: &Backends,
    cfg: &EvalConfig,
    trials: usize,
    out_dir: &Path,
    mut provenance: Provenance,
) -> Result<i32> {
    if trials == 0 {
        bail!("--trials must be at least 1");
    }
    std::fs::create_dir_all(out_dir)?;
    let mut reports = Vec::with_capacity(trials);
    for _ in 0..trials {
        reports.push(evaluate_set(
            &kb,
            dataset,
            backends.inference.as_ref(),
            cfg,
        )?);
    }
    let collect = |f: fn(&EvalReport) -> f64| -> MetricSummary {
        let values: Vec<f64> = reports.iter().map(f).collect();
        let (mean, stdev) = mean_std(&values);
        MetricSummary { mean, stdev }
    };
    let artifact = EvaluateArtifact {
        trials,
        retrieval_recall: collect(|r| r.retrieval_recall),
        tool_selection_acc: collect(|r| r.tool_selection_acc),
        parameter_filling_acc: collect(|r| r.parameter_filling_acc),
        final_acc: collect(|r| r.final_acc),
        incomplete: reports.iter().any(|r| r.incomplete),
        report: reports.swap_remove(0),
    };
    provenance.config = serde_json::json!({
        "eval": cfg,
        "trials": trials,
    });
    write_artifact(&out_dir.join("report.json"), &provenance, &artifact)?;
    let table = render_summary_table(&artifact);
    std::fs::write(out_dir.join("summary.txt"), &table)?;
    print!("{table}");
    if artifact.incomplete {
        eprintln!("warning: some queries errored; the report is flagged incomplete");
        return Ok(2);
    }
    Ok(0)
}

#[derive(Debug, Serialize)]
struct OptimizeSummary {
    initial_train_score: f64,
    final_train_score: f64,
    accepted_edits: usize,
    total_proposals: usize,
    stopped: Option<String>,
    finished: bool,
    test_before: Option<f64>,
    test_after: Option<f64>,
    final_kb_snapshot: String,
}

/// Runs (or resumes) the editing loop and writes the ledger, checkpoints,
/// and final knowledge base.
#[allow(clippy::too_many_arguments)]
pub fn cmd_optimize(
    kb: ToolKnowledgeBase,
    train: &[ValidationExample],
    test: Option<&[ValidationExample]>,
    backends: &Backends,
    cfg: OptimizerConfig,
    icl: Vec<IclExample>,
    out_dir: &Path,
    resume: bool,
    max_proposals: Option<usize>,
    mut provenance: Provenance,
) -> Result<i32> {
    std::fs::create_dir_all(out_dir)?;
    let checkpoint_dir = out_dir.join("checkpoint");
    let mut optimizer = Optimizer::new(
        backends.inference.as_ref(),
        backends.editor.as_ref(),
        cfg.clone(),
    )
    .with_icl_seed(icl)
    .with_checkpoint_dir(checkpoint_dir.clone());
    if let Some(budget) = max_proposals {
        optimizer = optimizer.with_proposal_budget(budget);
    }

    // The held-out split is evaluated at most twice, before and after; it
    // never participates in accept/reject decisions.
    let eval_cfg = cfg.eval.clone();
    let test_before = match test {
        Some(examples) => {
            Some(evaluate_set(&kb, examples, backends.inference.as_ref(), &eval_cfg)?.final_acc)
        }
        None => None,
    };

    let state: OptimizerState = if resume {
        let restored = restore(&checkpoint_dir)?;
        optimizer.resume(restored, train)?
    } else {
        optimizer.run(kb, train)?
    };

    let test_after = match test {
        Some(examples) => Some(
            evaluate_set(
                &state.current_kb,
                examples,
                backends.inference.as_ref(),
                &eval_cfg,
            )?
            .final_acc,
        ),
        None => None,
    };

    checkpoint(&state, &checkpoint_dir)?;
    write_ledger_jsonl(&state.ledger, &out_dir.join("ledger.jsonl"))?;
    state.current_kb.save(&out_dir.join("kb_final"))?;
    let summary = OptimizeSummary {
        initial_train_score: state.initial_score,
        final_train_score: state.final_score(),
        accepted_edits: state.ledger.iter().filter(|e| e.accepted).count(),
        total_proposals: state.ledger.len(),
        stopped: state.stopped.clone(),
        finished: state.cursor.is_none(),
        test_before,
        test_after,
        final_kb_snapshot: state.current_kb.snapshot_id.clone(),
    };
    provenance.config = serde_json::to_value(&cfg)?;
    write_artifact(&out_dir.join("summary.json"), &provenance, &summary)?;
    println!(
        "train final accuracy: {:.4} -> {:.4} ({} accepted of {} proposals)",
        summary.initial_train_score,
        summary.final_train_score,
        summary.accepted_edits,
        summary.total_proposals
    );
    if let (Some(before), Some(after)) = (summary.test_before, summary.test_after) {
        println!("test final accuracy: {before:.4} -> {after:.4}");
    }
    if let Some(reason) = &summary.stopped {
        eprintln!("warning: run stopped early: {reason}");
        return Ok(2);
    }
    if !summary.finished {
        eprintln!("warning: proposal budget exhausted; resume with --resume");
        return Ok(2);
    }
    Ok(0)
}

#[derive(Debug, Serialize)]
struct SplitManifest {
    split_seed: u64,
    train_examples: usize,
    test_examples: usize,
    floor_rule: bool,
    names_only_key: bool,
}

pub fn cmd_split(
    examples: &[ValidationExample],
    opts: &SplitOptions,
    out_dir: &Path,
    mut provenance: Provenance,
) -> Result<i32> {
    std::fs::create_dir_all(out_dir)?;
    let split = split_by_answer_with(examples, opts);
    split
        .validate()
        .map_err(|e| anyhow::anyhow!("split invariant violated: {e}"))?;
    write_native_dataset(&out_dir.join("train.jsonl"), &split.train)?;
    write_native_dataset(&out_dir.join("test.jsonl"), &split.test)?;
    let manifest = SplitManifest {
        split_seed: split.split_seed,
        train_examples: split.train.len(),
        test_examples: split.test.len(),
        floor_rule: opts.floor_rule,
        names_only_key: opts.names_only_key,
    };
    provenance.config = serde_json::to_value(opts)?;
    write_artifact(&out_dir.join("manifest.json"), &provenance, &manifest)?;
    println!(
        "train: {} examples, test: {} examples",
        split.train.len(),
        split.test.len()
    );
    Ok(0)
}

pub fn cmd_export_preferences(
    ledger_path: &Path,
    out_dir: &Path,
    mut provenance: Provenance,
) -> Result<i32> {
    let ledger = read_ledger_jsonl(ledger_path)?;
    let bundle = export_preferences(&ledger);
    std::fs::create_dir_all(out_dir)?;
    bundle.write_to(out_dir)?;
    provenance.config = serde_json::json!({"ledger": ledger_path.display().to_string()});
    write_artifact(
        &out_dir.join("manifest.json"),
        &provenance,
        &serde_json::json!({
            "sft_rows": bundle.sft.len(),
            "dpo_pairs": bundle.dpo.len(),
            "grpo_groups": bundle.grpo.len(),
            "skipped_dpo_contexts": bundle.skipped_dpo_contexts,
            "skipped_grpo_contexts": bundle.skipped_grpo_contexts,
        }),
    )?;
    if bundle.is_empty() {
        eprintln!("warning: the ledger produced no preference data");
    }
    println!(
        "sft rows: {}, dpo pairs: {}, grpo groups: {}",
        bundle.sft.len(),
        bundle.dpo.len(),
        bundle.grpo.len()
    );
    Ok(0)
}

/// Accuracy after each iteration, reconstructed from the ledger.
fn accuracy_by_iteration(initial: f64, iterations: usize, ledger: &[LedgerEntry]) -> Vec<f64> {
    let mut per_iteration = vec![initial; iterations + 1];
    let mut current = initial;
    for (t, slot) in per_iteration.iter_mut().enumerate().skip(1) {
        for entry in ledger.iter().filter(|e| e.iteration == t && e.accepted) {
            if let Some(post) = entry.post_score {
                current = post;
            }
        }
        *slot = current;
    }
    per_iteration
}

pub fn cmd_report(run_dir: &Path) -> Result<i32> {
    let state_path = run_dir.join("checkpoint").join("state.json");
    let (initial, iterations, ledger) = if state_path.exists() {
        let state = restore(&run_dir.join("checkpoint"))?;
        (state.initial_score, state.config.iterations, state.ledger)
    } else {
        let ledger_path = run_dir.join("ledger.jsonl");
        let ledger = read_ledger_jsonl(&ledger_path)
            .with_context(|| format!("no checkpoint or ledger under {}", run_dir.display()))?;
        let initial = ledger.first().map(|e| e.pre_score).unwrap_or(0.0);
        let iterations = ledger.iter().map(|e| e.iteration).max().unwrap_or(0);
        (initial, iterations, ledger)
    };
    let series = accuracy_by_iteration(initial, iterations, &ledger);
    println!(
        "{:<10} {:>10} {:>10} {:>10}",
        "iteration", "accuracy", "accepted", "proposed"
    );
    for (t, accuracy) in series.iter().enumerate() {
        let accepted = ledger
            .iter()
            .filter(|e| e.iteration == t && e.accepted)
            .count();
        let proposed = ledger.iter().filter(|e| e.iteration == t).count();
        println!("{t:<10} {:>10.4} {accepted:>10} {proposed:>10}", accuracy);
    }
    Ok(0)
}

/// Generates a synthetic scenario: knowledge base, dataset, and scripted
/// fixtures for offline runs.
pub fn cmd_synth(
    spec_path: Option<&Path>,
    seed: u64,
    out_dir: &Path,
    mut provenance: Provenance,
) -> Result<i32> {
    let spec: ScenarioSpec = match spec_path {
        Some(path) => {
            let raw = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read scenario spec {}", path.display()))?;
            serde_json::from_str(&raw)
                .with_context(|| format!("malformed scenario spec {}", path.display()))?
        }
        None => ScenarioSpec {
            seed,
            ..ScenarioSpec::default()
        },
    };
    let scenario = generate_synthetic_scenario(&spec)?;
    std::fs::create_dir_all(out_dir)?;
    scenario.kb.save(&out_dir.join("kb"))?;
    write_native_dataset(&out_dir.join("dataset.jsonl"), &scenario.examples)?;
    scenario
        .inference_fixtures
        .save(&out_dir.join("fixtures_inference.json"))?;
    scenario
        .editor_fixtures
        .save(&out_dir.join("fixtures_editor.json"))?;
    provenance.config = serde_json::to_value(&spec)?;
    write_artifact(
        &out_dir.join("scenario.json"),
        &provenance,
        &serde_json::json!({
            "tools": scenario.kb.len(),
            "examples": scenario.examples.len(),
            "retriever_k": scenario.retriever_k,
        }),
    )?;
    println!(
        "generated {} tools, {} examples (retriever k = {})",
        scenario.kb.len(),
        scenario.examples.len(),
        scenario.retriever_k
    );
    Ok(0)
}

/// Resolves the knowledge base: an explicit directory wins, otherwise the
/// dataset-derived one is used.
pub fn resolve_kb(
    kb_dir: Option<&PathBuf>,
    derived: Option<ToolKnowledgeBase>,
) -> Result<ToolKnowledgeBase> {
    match (kb_dir, derived) {
        (Some(dir), _) => Ok(ToolKnowledgeBase::load(dir)?),
        (None, Some(kb)) => Ok(kb),
        (None, None) => bail!("--kb is required for datasets that do not carry tool documents"),
    }
}

/// Sanity check shared by evaluate and optimize: every expected tool must be
/// resolvable in the knowledge base.
pub fn check_dataset_against_kb(
    dataset: &[ValidationExample],
    kb: &ToolKnowledgeBase,
) -> Result<()> {
    let mut missing: BTreeSet<&str> = BTreeSet::new();
    for example in dataset {
        for tool in &example.expected_tools {
            if !kb.contains(tool) {
                missing.insert(tool);
            }
        }
    }
    if !missing.is_empty() {
        bail!(
            "dataset expects tools missing from the knowledge base: {}",
            missing.into_iter().collect::<Vec<_>>().join(", ")
        );
    }
    Ok(())
}
