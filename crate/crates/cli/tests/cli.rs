//! End-to-end tests of the `docsmith` binary over synthetic artifacts.

use std::path::Path;
use std::process::{Command, Output};

fn docsmith(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_docsmith"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).to_string()
}

fn synth_scenario(dir: &Path, seed: &str) {
    let out = docsmith(&["synth", "--seed", seed, "--out", dir.to_str().unwrap()]);
    assert!(
        out.status.success(),
        "synth failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

struct ScenarioPaths {
    kb: String,
    dataset: String,
    inference: String,
    editors: String,
}

fn paths(dir: &Path) -> ScenarioPaths {
    ScenarioPaths {
        kb: dir.join("kb").display().to_string(),
        dataset: dir.join("dataset.jsonl").display().to_string(),
        inference: dir.join("fixtures_inference.json").display().to_string(),
        editors: dir.join("fixtures_editor.json").display().to_string(),
    }
}

#[test]
fn evaluate_shows_perfect_scores_on_a_defect_free_scenario() {
    let tmp = tempfile::tempdir().unwrap();
    let spec_path = tmp.path().join("spec.json");
    std::fs::write(
        &spec_path,
        serde_json::json!({
            "seed": 21,
            "tool_count": 4,
            "defects": [],
            "healthy_queries": 4,
            "retriever_k": 2,
        })
        .to_string(),
    )
    .unwrap();
    let scenario_dir = tmp.path().join("scenario");
    let out = docsmith(&[
        "synth",
        "--spec",
        spec_path.to_str().unwrap(),
        "--out",
        scenario_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let p = paths(&scenario_dir);
    let out = docsmith(&[
        "evaluate",
        "--kb",
        &p.kb,
        "--dataset",
        &p.dataset,
        "--scripted-fixtures",
        &p.inference,
        "--k",
        "2",
        "--out",
        tmp.path().join("eval").to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert_eq!(
        text.matches("100.00").count(),
        4,
        "all four stages must read 100.00:\n{text}"
    );
}

#[test]
fn evaluate_reports_trials_with_zero_stdev() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario_dir = tmp.path().join("scenario");
    synth_scenario(&scenario_dir, "11");
    let p = paths(&scenario_dir);
    let out_dir = tmp.path().join("eval");
    let out = docsmith(&[
        "evaluate",
        "--kb",
        &p.kb,
        "--dataset",
        &p.dataset,
        "--scripted-fixtures",
        &p.inference,
        "--k",
        "3",
        "--trials",
        "3",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = stdout(&out);
    assert!(text.contains("final_acc"));
    assert!(
        text.contains("+/- 0.00"),
        "deterministic backend must give zero stdev:\n{text}"
    );
    let report = std::fs::read_to_string(out_dir.join("report.json")).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert!(parsed["provenance"]["input_hashes"].is_object());
    assert_eq!(parsed["data"]["trials"], 3);
}

#[test]
fn evaluate_with_missing_kb_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario_dir = tmp.path().join("scenario");
    synth_scenario(&scenario_dir, "12");
    let p = paths(&scenario_dir);
    let out = docsmith(&[
        "evaluate",
        "--kb",
        "/nonexistent/kb",
        "--dataset",
        &p.dataset,
        "--scripted-fixtures",
        &p.inference,
        "--out",
        tmp.path().join("eval").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn optimize_reaches_full_train_accuracy_on_the_planted_scenario() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario_dir = tmp.path().join("scenario");
    synth_scenario(&scenario_dir, "13");
    let p = paths(&scenario_dir);
    let out_dir = tmp.path().join("opt");
    let out = docsmith(&[
        "optimize",
        "--kb",
        &p.kb,
        "--train",
        &p.dataset,
        "--scripted-fixtures",
        &p.inference,
        "--scripted-editor-fixtures",
        &p.editors,
        "--k",
        "3",
        "--iterations",
        "3",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(stdout(&out).contains("-> 1.0000"));
    assert!(out_dir.join("ledger.jsonl").exists());
    assert!(out_dir.join("kb_final/manifest.json").exists());
    assert!(out_dir.join("checkpoint/state.json").exists());

    // The report renders accuracy per iteration in order.
    let report = docsmith(&["report", "--run", out_dir.to_str().unwrap()]);
    assert!(report.status.success());
    let text = stdout(&report);
    assert!(text.contains("iteration"));
    assert!(
        text.lines().count() >= 4,
        "expected rows for iterations 0..3:\n{text}"
    );

    // Preference export finds the accepted proposals.
    let prefs_dir = tmp.path().join("prefs");
    let export = docsmith(&[
        "export-preferences",
        "--ledger",
        out_dir.join("ledger.jsonl").to_str().unwrap(),
        "--out",
        prefs_dir.to_str().unwrap(),
    ]);
    assert!(export.status.success());
    assert!(stdout(&export).contains("sft rows: 3"));
}

#[test]
fn optimize_with_tool_level_only_restricts_the_ledger() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario_dir = tmp.path().join("scenario");
    synth_scenario(&scenario_dir, "14");
    let p = paths(&scenario_dir);
    let out_dir = tmp.path().join("opt");
    let out = docsmith(&[
        "optimize",
        "--kb",
        &p.kb,
        "--train",
        &p.dataset,
        "--scripted-fixtures",
        &p.inference,
        "--scripted-editor-fixtures",
        &p.editors,
        "--k",
        "3",
        "--levels",
        "tool",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let ledger = std::fs::read_to_string(out_dir.join("ledger.jsonl")).unwrap();
    for line in ledger.lines() {
        let entry: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(entry["level"], "tool");
    }
}

#[test]
fn split_of_three_same_answer_examples_is_two_one_and_stable() {
    let tmp = tempfile::tempdir().unwrap();
    let dataset = tmp.path().join("dataset.jsonl");
    let mut lines = String::new();
    for i in 0..3 {
        let example = serde_json::json!({
            "query": format!("query number {i}"),
            "expected_tools": ["echo_tool"],
            "expected_calls": [{"name": "echo_tool", "arguments": {"x": 1}}],
            "source": "synthetic",
            "entity_key": "shared-answer",
        });
        lines.push_str(&example.to_string());
        lines.push('\n');
    }
    std::fs::write(&dataset, lines).unwrap();

    let out_dir = tmp.path().join("split");
    let run = |dir: &Path| {
        let out = docsmith(&[
            "split",
            "--dataset",
            dataset.to_str().unwrap(),
            "--seed",
            "7",
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        (
            std::fs::read_to_string(dir.join("train.jsonl")).unwrap(),
            std::fs::read_to_string(dir.join("test.jsonl")).unwrap(),
        )
    };
    let (train_a, test_a) = run(&out_dir);
    assert_eq!(train_a.lines().count(), 2);
    assert_eq!(test_a.lines().count(), 1);
    let (train_b, test_b) = run(&tmp.path().join("split2"));
    assert_eq!(train_a, train_b, "split must be stable across reruns");
    assert_eq!(test_a, test_b);
}

#[test]
fn export_on_an_empty_ledger_warns_and_exits_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let ledger = tmp.path().join("ledger.jsonl");
    std::fs::write(&ledger, "").unwrap();
    let out = docsmith(&[
        "export-preferences",
        "--ledger",
        ledger.to_str().unwrap(),
        "--out",
        tmp.path().join("prefs").to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no preference data"));
}

#[test]
fn interrupted_optimize_resumes_to_the_same_ledger() {
    // Two scenarios from the same seed are identical, so a full run and an
    // interrupted-then-resumed run must produce the same ledger.
    let tmp = tempfile::tempdir().unwrap();
    let scenario_dir = tmp.path().join("scenario");
    synth_scenario(&scenario_dir, "15");
    let p = paths(&scenario_dir);

    let full_dir = tmp.path().join("full");
    let out = docsmith(&[
        "optimize",
        "--kb",
        &p.kb,
        "--train",
        &p.dataset,
        "--scripted-fixtures",
        &p.inference,
        "--scripted-editor-fixtures",
        &p.editors,
        "--k",
        "3",
        "--out",
        full_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success());

    // Interrupt after two proposals, then resume from the checkpoint.
    let partial_dir = tmp.path().join("partial");
    let out = docsmith(&[
        "optimize",
        "--kb",
        &p.kb,
        "--train",
        &p.dataset,
        "--scripted-fixtures",
        &p.inference,
        "--scripted-editor-fixtures",
        &p.editors,
        "--k",
        "3",
        "--max-proposals",
        "2",
        "--out",
        partial_dir.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "budget exhaustion reports a partial result"
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("resume"));
    let resume = docsmith(&[
        "optimize",
        "--kb",
        &p.kb,
        "--train",
        &p.dataset,
        "--scripted-fixtures",
        &p.inference,
        "--scripted-editor-fixtures",
        &p.editors,
        "--k",
        "3",
        "--resume",
        "--out",
        partial_dir.to_str().unwrap(),
    ]);
    assert!(
        resume.status.success(),
        "{}",
        String::from_utf8_lossy(&resume.stderr)
    );

    let full_ledger = std::fs::read_to_string(full_dir.join("ledger.jsonl")).unwrap();
    let resumed_ledger = std::fs::read_to_string(partial_dir.join("ledger.jsonl")).unwrap();
    assert_eq!(full_ledger, resumed_ledger);
}
