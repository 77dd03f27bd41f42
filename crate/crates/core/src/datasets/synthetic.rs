//! Synthetic planted-defect scenarios with aligned scripted backends.
//!
//! A scenario builds a small knowledge base whose documents are healthy
//! except for declared defects, a labeled query set that fails exactly at
//! the planted levels, and scripted inference/editor fixtures such that the
//! editor's proposal repairs each defect (or deliberately fails to, for
//! robustness runs). Everything derives deterministically from the
//! [`ScenarioSpec`].

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::callparse::{ToolCall, Value};
use crate::evalharness::{EvalConfig, ExampleSource, ValidationExample};
use crate::llmclient::{PromptMatcher, ResponseScript, ScriptRoute, ScriptedSpec};
use crate::pipeline::PipelineConfig;
use crate::retrieval::RetrieverConfig;
use crate::tooldoc::{Level, ParameterSpec, ToolDocument, ToolKnowledgeBase, ValueKind};

/// Distinct topic vocabulary; tool `i` owns words `2i` and `2i+1`.
const WORDS: [&str; 40] = [
    "harbor", "tide", "quartz", "lens", "meadow", "fern", "comet", "orbit", "ember", "forge",
    "glacier", "ridge", "lantern", "wick", "marble", "arch", "prairie", "wind", "reef", "coral",
    "summit", "trail", "cedar", "grove", "canyon", "river", "beacon", "mast", "tundra", "moss",
    "dune", "oasis", "valley", "brook", "crater", "basalt", "aurora", "frost", "harvest", "grain",
];

/// How the scripted editor behaves for one defect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EditorBehavior {
    /// Proposes the repairing edit.
    #[default]
    Fixes,
    /// Replies without the required sections; the proposal is skipped.
    Malformed,
    /// Proposes a well-formed edit that does not repair the defect.
    Unhelpful,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedDefect {
    pub level: Level,
    pub tool_index: usize,
    /// Number of planted queries hitting this defect.
    #[serde(default = "one")]
    pub queries: usize,
    #[serde(default)]
    pub editor_behavior: EditorBehavior,
}

fn one() -> usize {
    1
}

impl PlantedDefect {
    pub fn new(level: Level, tool_index: usize) -> Self {
        PlantedDefect {
            level,
            tool_index,
            queries: 1,
            editor_behavior: EditorBehavior::Fixes,
        }
    }

    pub fn with_queries(mut self, queries: usize) -> Self {
        self.queries = queries;
        self
    }

    pub fn with_editor(mut self, behavior: EditorBehavior) -> Self {
        self.editor_behavior = behavior;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub tool_count: usize,
    pub defects: Vec<PlantedDefect>,
    /// Healthy queries, assigned round-robin over non-defective tools.
    pub healthy_queries: usize,
    /// Retrieval cutoff the scenario is built against. Must be smaller than
    /// `tool_count` for retrieval defects to be plantable.
    pub retriever_k: usize,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            seed: 0,
            tool_count: 10,
            defects: vec![
                PlantedDefect::new(Level::Retrieval, 0).with_queries(2),
                PlantedDefect::new(Level::Tool, 3),
                PlantedDefect::new(Level::Parameter, 7),
            ],
            healthy_queries: 3,
            retriever_k: 3,
        }
    }
}

/// A generated scenario: knowledge base, labeled examples, and the scripted
/// backend fixtures that make the loop run without a network.
#[derive(Debug, Clone)]
pub struct SyntheticScenario {
    pub kb: ToolKnowledgeBase,
    pub examples: Vec<ValidationExample>,
    pub inference_fixtures: ScriptedSpec,
    pub editor_fixtures: ScriptedSpec,
    pub retriever_k: usize,
}

impl SyntheticScenario {
    /// Evaluation config matching the scenario's retrieval cutoff.
    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            retriever: RetrieverConfig {
                k: self.retriever_k,
                ..RetrieverConfig::default()
            },
            pipeline: PipelineConfig {
                k: self.retriever_k,
                ..PipelineConfig::default()
            },
            ..EvalConfig::default()
        }
    }
}

struct ToolWords {
    a: &'static str,
    b: &'static str,
    name: String,
}

fn tool_words(spec: &ScenarioSpec, index: usize) -> ToolWords {
    // The seed rotates the vocabulary so different scenarios use different
    // words while staying deterministic.
    let offset = (spec.seed as usize % WORDS.len() / 2) * 2;
    let a = WORDS[(offset + 2 * index) % WORDS.len()];
    let b = WORDS[(offset + 2 * index + 1) % WORDS.len()];
    ToolWords {
        a,
        b,
        name: format!("svc_{a}_{b}"),
    }
}

fn validate_spec(spec: &ScenarioSpec) -> Result<(), DatasetError> {
    let fail = |message: String| DatasetError::InconsistentScenario(message);
    if spec.tool_count < 2 {
        return Err(fail("tool_count must be at least 2".to_string()));
    }
    if spec.tool_count * 2 > WORDS.len() {
        return Err(fail(format!(
            "tool_count is limited to {}",
            WORDS.len() / 2
        )));
    }
    if spec.retriever_k == 0 {
        return Err(fail("retriever_k must be at least 1".to_string()));
    }
    let mut seen = BTreeSet::new();
    for defect in &spec.defects {
        if defect.tool_index >= spec.tool_count {
            return Err(fail(format!(
                "defect tool_index {} is out of range for {} tools",
                defect.tool_index, spec.tool_count
            )));
        }
        if defect.queries == 0 {
            return Err(fail("defects must plant at least one query".to_string()));
        }
        if !seen.insert((defect.level, defect.tool_index)) {
            return Err(fail(format!(
                "duplicate defect at ({}, tool {})",
                defect.level, defect.tool_index
            )));
        }
        if defect.level == Level::Retrieval && spec.retriever_k >= spec.tool_count {
            return Err(fail(
                "retrieval defects require retriever_k < tool_count".to_string(),
            ));
        }
    }
    if spec.healthy_queries > 0 {
        let defective: BTreeSet<usize> = spec.defects.iter().map(|d| d.tool_index).collect();
        if defective.len() == spec.tool_count {
            return Err(fail(
                "healthy queries need at least one non-defective tool".to_string(),
            ));
        }
    }
    Ok(())
}

fn good_reply(name: &str, args: &[(&str, &str)]) -> String {
    let call = ToolCall::new(
        name,
        args.iter()
            .map(|(k, v)| (k.to_string(), Value::Str(v.to_string())))
            .collect(),
    );
    crate::callparse::calls_to_structured_json(&[call]).to_string()
}

fn editor_title(level: Level) -> &'static str {
    match level {
        Level::Retrieval => "Retrieval Optimization Editor",
        Level::Tool => "Tool Selection Optimization Editor",
        Level::Parameter => "Parameter Filling Optimization Editor",
    }
}

fn editor_reply(level: Level, analysis: &str, entries: serde_json::Value) -> String {
    let header = match level {
        Level::Retrieval => "IMPROVED KB TOOL DESCRIPTIONS",
        Level::Tool | Level::Parameter => "IMPROVED TOOL DESCRIPTIONS",
    };
    format!("ANALYSIS\n{analysis}\n\n{header}\n{entries}")
}

/// Builds the scenario. The initial knowledge base fails exactly the planted
/// queries at the planted levels; every `Fixes` editor proposal repairs its
/// defect.
pub fn generate_synthetic_scenario(spec: &ScenarioSpec) -> Result<SyntheticScenario, DatasetError> {
    validate_spec(spec)?;
    let defective: BTreeSet<usize> = spec.defects.iter().map(|d| d.tool_index).collect();

    // Healthy document bodies first.
    let mut docs: Vec<ToolDocument> = (0..spec.tool_count)
        .map(|i| {
            let w = tool_words(spec, i);
            ToolDocument::new(
                w.name.clone(),
                format!(
                    "Handles {} {} requests and produces {} summaries.",
                    w.a, w.b, w.b
                ),
            )
            .with_retrieval_content(format!(
                "{} service for {} {} requests. Handles {} operations and produces {} reports.",
                w.name, w.a, w.b, w.a, w.b
            ))
            .with_parameters(vec![ParameterSpec::new("item", ValueKind::String, true)
                .with_description(format!("Identifier of the {} item to process.", w.a))])
        })
        .collect();

    let mut inference_routes: Vec<ScriptRoute> = Vec::new();
    let mut editor_routes: Vec<ScriptRoute> = Vec::new();
    let mut examples: Vec<ValidationExample> = Vec::new();
    let run_tag = spec.seed;

    // Healthy queries over non-defective tools, round-robin.
    let healthy_pool: Vec<usize> = (0..spec.tool_count)
        .filter(|i| !defective.contains(i))
        .collect();
    for j in 0..spec.healthy_queries {
        let tool_idx = healthy_pool[j % healthy_pool.len()];
        let w = tool_words(spec, tool_idx);
        let query = format!(
            "please process the {} {} task number {run_tag}-{j}",
            w.a, w.b
        );
        let item = format!("{}-{j}", w.a);
        examples.push(
            ValidationExample::new(
                query.clone(),
                vec![ToolCall::new(
                    w.name.clone(),
                    [("item".to_string(), Value::Str(item.clone()))].into(),
                )],
                ExampleSource::Synthetic,
            )
            .expect("healthy example is well-formed"),
        );
        inference_routes.push(ScriptRoute {
            role: None,
            matcher: PromptMatcher::Contains(query),
            script: ResponseScript::Reply {
                text: good_reply(&w.name, &[("item", &item)]),
            },
        });
    }

    for defect in &spec.defects {
        let w = tool_words(spec, defect.tool_index);
        match defect.level {
            Level::Retrieval => {
                // Target content loses its topic words; the next k tools gain
                // a single decoy mention, so the target drops out of top-k.
                docs[defect.tool_index].retrieval_content =
                    "general purpose utility endpoint for assorted service requests".to_string();
                let mut decoys = 0usize;
                let mut cursor = defect.tool_index + 1;
                while decoys < spec.retriever_k {
                    let idx = cursor % spec.tool_count;
                    cursor += 1;
                    if idx == defect.tool_index {
                        continue;
                    }
                    docs[idx]
                        .retrieval_content
                        .push_str(&format!(" also references {}", w.a));
                    decoys += 1;
                }
                // Kept free of filler words that occur in other queries so
                // the boost stays confined to this tool's topic terms.
                let fix_content = format!(
                    "{} service dedicated to {} {} processing. Handles {} {} requests, {} \
                     scheduling, and {} reporting. Covers {} {} operations.",
                    w.name, w.a, w.b, w.a, w.b, w.a, w.b, w.a, w.b
                );
                for q in 0..defect.queries {
                    let query = format!("need {} {} processing run {run_tag}-{q}", w.a, w.b);
                    let item = format!("{}-run-{q}", w.a);
                    examples.push(
                        ValidationExample::new(
                            query.clone(),
                            vec![ToolCall::new(
                                w.name.clone(),
                                [("item".to_string(), Value::Str(item.clone()))].into(),
                            )],
                            ExampleSource::Synthetic,
                        )
                        .expect("retrieval example is well-formed"),
                    );
                    inference_routes.push(ScriptRoute {
                        role: None,
                        matcher: PromptMatcher::Contains(query.clone()),
                        script: ResponseScript::Reply {
                            text: good_reply(&w.name, &[("item", &item)]),
                        },
                    });
                    let reply = match defect.editor_behavior {
                        EditorBehavior::Fixes => editor_reply(
                            Level::Retrieval,
                            &format!(
                                "The retrieval content for {} never mentions {} or {}, so decoy \
                                 tools outrank it.",
                                w.name, w.a, w.b
                            ),
                            serde_json::json!([{
                                "name": w.name,
                                "retrieval content": fix_content,
                            }]),
                        ),
                        EditorBehavior::Malformed => {
                            "The knowledge base entry seems weak but I have no edits.".to_string()
                        }
                        EditorBehavior::Unhelpful => editor_reply(
                            Level::Retrieval,
                            "Rewording the entry for tone.",
                            serde_json::json!([{
                                "name": w.name,
                                "retrieval content":
                                    "general assistance endpoint for miscellaneous needs",
                            }]),
                        ),
                    };
                    editor_routes.push(ScriptRoute {
                        role: None,
                        matcher: PromptMatcher::AllOf(vec![
                            PromptMatcher::Contains(editor_title(Level::Retrieval).to_string()),
                            PromptMatcher::Contains(query),
                        ]),
                        script: ResponseScript::Reply { text: reply },
                    });
                }
            }
            Level::Tool => {
                let sibling_idx = (defect.tool_index + 1) % spec.tool_count;
                let sibling = tool_words(spec, sibling_idx);
                let marker = format!("handles one {} {} workload per call", w.a, w.b);
                let fixed_description = format!(
                    "Handles {} {} workload batches. This tool {marker}. Do not confuse it with \
                     {} which serves {} requests.",
                    w.a, w.b, sibling.name, sibling.a
                );
                for q in 0..defect.queries {
                    let query = format!("run the {} {} workload batch {run_tag}-{q}", w.a, w.b);
                    let item = format!("{}-batch-{q}", w.a);
                    examples.push(
                        ValidationExample::new(
                            query.clone(),
                            vec![ToolCall::new(
                                w.name.clone(),
                                [("item".to_string(), Value::Str(item.clone()))].into(),
                            )],
                            ExampleSource::Synthetic,
                        )
                        .expect("tool example is well-formed"),
                    );
                    // Marker route first: once the improved description is in
                    // the prompt, the model picks the right tool.
                    inference_routes.push(ScriptRoute {
                        role: None,
                        matcher: PromptMatcher::AllOf(vec![
                            PromptMatcher::Contains(query.clone()),
                            PromptMatcher::Contains(marker.clone()),
                        ]),
                        script: ResponseScript::Reply {
                            text: good_reply(&w.name, &[("item", &item)]),
                        },
                    });
                    inference_routes.push(ScriptRoute {
                        role: None,
                        matcher: PromptMatcher::Contains(query.clone()),
                        script: ResponseScript::Reply {
                            text: good_reply(&sibling.name, &[("item", "confused")]),
                        },
                    });
                    let reply = match defect.editor_behavior {
                        EditorBehavior::Fixes => editor_reply(
                            Level::Tool,
                            &format!(
                                "The description of {} overlaps with {}; the model confuses \
                                 them. Adding per-call scope and a contrast sentence.",
                                w.name, sibling.name
                            ),
                            serde_json::json!([{
                                "name": w.name,
                                "description": fixed_description,
                            }]),
                        ),
                        EditorBehavior::Malformed => {
                            "Both descriptions look similar to me.".to_string()
                        }
                        EditorBehavior::Unhelpful => editor_reply(
                            Level::Tool,
                            "Minor copy edit.",
                            serde_json::json!([{
                                "name": w.name,
                                "description": "Handles general workload requests efficiently.",
                            }]),
                        ),
                    };
                    editor_routes.push(ScriptRoute {
                        role: None,
                        matcher: PromptMatcher::AllOf(vec![
                            PromptMatcher::Contains(editor_title(Level::Tool).to_string()),
                            PromptMatcher::Contains(query),
                        ]),
                        script: ResponseScript::Reply { text: reply },
                    });
                }
            }
            Level::Parameter => {
                let marker = "YYYY-MM-DD";
                docs[defect.tool_index].parameter_schema =
                    vec![ParameterSpec::new("date", ValueKind::String, true)
                        .with_description("The date for the request.".to_string())];
                let fixed_params = serde_json::json!([{
                    "name": "date",
                    "description": format!(
                        "The date for the request in ISO format {marker}. Example: 2024-07-05"
                    ),
                    "type": "string",
                    "required": true,
                    "examples": ["2024-07-05"],
                }]);
                for q in 0..defect.queries {
                    let query = format!(
                        "book the {} {} slot for early july, request {run_tag}-{q}",
                        w.a, w.b
                    );
                    examples.push(
                        ValidationExample::new(
                            query.clone(),
                            vec![ToolCall::new(
                                w.name.clone(),
                                [("date".to_string(), Value::Str("2024-07-05".to_string()))].into(),
                            )],
                            ExampleSource::Synthetic,
                        )
                        .expect("parameter example is well-formed"),
                    );
                    inference_routes.push(ScriptRoute {
                        role: None,
                        matcher: PromptMatcher::AllOf(vec![
                            PromptMatcher::Contains(query.clone()),
                            PromptMatcher::Contains(marker.to_string()),
                        ]),
                        script: ResponseScript::Reply {
                            text: good_reply(&w.name, &[("date", "2024-07-05")]),
                        },
                    });
                    inference_routes.push(ScriptRoute {
                        role: None,
                        matcher: PromptMatcher::Contains(query.clone()),
                        script: ResponseScript::Reply {
                            text: good_reply(&w.name, &[("date", "July 5th, 2024")]),
                        },
                    });
                    let reply = match defect.editor_behavior {
                        EditorBehavior::Fixes => editor_reply(
                            Level::Parameter,
                            &format!(
                                "The date parameter of {} never states its format, so the model \
                                 fills free text. Pinning the ISO format with an example.",
                                w.name
                            ),
                            serde_json::json!([{
                                "name": w.name,
                                "parameters": fixed_params,
                            }]),
                        ),
                        EditorBehavior::Malformed => {
                            "Dates are being filled inconsistently.".to_string()
                        }
                        EditorBehavior::Unhelpful => editor_reply(
                            Level::Parameter,
                            "Clarified wording only.",
                            serde_json::json!([{
                                "name": w.name,
                                "parameters": [{
                                    "name": "date",
                                    "description": "The date of interest for the request.",
                                    "type": "string",
                                    "required": true,
                                }],
                            }]),
                        ),
                    };
                    editor_routes.push(ScriptRoute {
                        role: None,
                        matcher: PromptMatcher::AllOf(vec![
                            PromptMatcher::Contains(editor_title(Level::Parameter).to_string()),
                            PromptMatcher::Contains(query),
                        ]),
                        script: ResponseScript::Reply { text: reply },
                    });
                }
            }
        }
    }

    let kb = ToolKnowledgeBase::new(format!("kb-synth-{}", spec.seed), docs)
        .map_err(|e| DatasetError::InconsistentScenario(e.to_string()))?;
    let inference_fixtures = ScriptedSpec {
        routes: inference_routes,
        default_reply: Some("[]".to_string()),
        ..ScriptedSpec::default()
    };
    let editor_fixtures = ScriptedSpec {
        routes: editor_routes,
        default_reply: Some("ANALYSIS\nNo changes required.".to_string()),
        ..ScriptedSpec::default()
    };
    Ok(SyntheticScenario {
        kb,
        examples,
        inference_fixtures,
        editor_fixtures,
        retriever_k: spec.retriever_k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalharness::{collect_mismatches, evaluate_set};
    use crate::llmclient::ScriptedBackend;
    use crate::tooldoc::Level;

    #[test]
    fn zero_defect_scenario_scores_one_everywhere() {
        let spec = ScenarioSpec {
            seed: 1,
            tool_count: 4,
            defects: vec![],
            healthy_queries: 4,
            retriever_k: 2,
        };
        let scenario = generate_synthetic_scenario(&spec).unwrap();
        let backend = ScriptedBackend::from_spec(scenario.inference_fixtures.clone()).unwrap();
        let report = evaluate_set(
            &scenario.kb,
            &scenario.examples,
            &backend,
            &scenario.eval_config(),
        )
        .unwrap();
        assert_eq!(report.final_acc, 1.0);
        assert_eq!(report.retrieval_recall, 1.0);
        assert_eq!(report.tool_selection_acc, 1.0);
        assert_eq!(report.parameter_filling_acc, 1.0);
    }

    #[test]
    fn ambiguous_description_defect_lowers_selection_accuracy() {
        let spec = ScenarioSpec {
            seed: 2,
            tool_count: 4,
            defects: vec![PlantedDefect::new(Level::Tool, 1)],
            healthy_queries: 2,
            retriever_k: 2,
        };
        let scenario = generate_synthetic_scenario(&spec).unwrap();
        let backend = ScriptedBackend::from_spec(scenario.inference_fixtures.clone()).unwrap();
        let report = evaluate_set(
            &scenario.kb,
            &scenario.examples,
            &backend,
            &scenario.eval_config(),
        )
        .unwrap();
        assert!(report.tool_selection_acc < 1.0);
        assert_eq!(report.retrieval_recall, 1.0);
        assert_eq!(collect_mismatches(&report, Level::Tool).len(), 1);
    }

    #[test]
    fn date_format_defect_records_a_parameter_mismatch() {
        let spec = ScenarioSpec {
            seed: 3,
            tool_count: 4,
            defects: vec![PlantedDefect::new(Level::Parameter, 2)],
            healthy_queries: 2,
            retriever_k: 2,
        };
        let scenario = generate_synthetic_scenario(&spec).unwrap();
        let backend = ScriptedBackend::from_spec(scenario.inference_fixtures.clone()).unwrap();
        let report = evaluate_set(
            &scenario.kb,
            &scenario.examples,
            &backend,
            &scenario.eval_config(),
        )
        .unwrap();
        let records = collect_mismatches(&report, Level::Parameter);
        assert_eq!(records.len(), 1);
        assert!(records[0].param_coverage_ratio.unwrap() < 1.0);
    }

    #[test]
    fn retrieval_defect_drops_the_target_from_top_k() {
        let spec = ScenarioSpec {
            seed: 4,
            tool_count: 5,
            defects: vec![PlantedDefect::new(Level::Retrieval, 0)],
            healthy_queries: 2,
            retriever_k: 2,
        };
        let scenario = generate_synthetic_scenario(&spec).unwrap();
        let backend = ScriptedBackend::from_spec(scenario.inference_fixtures.clone()).unwrap();
        let report = evaluate_set(
            &scenario.kb,
            &scenario.examples,
            &backend,
            &scenario.eval_config(),
        )
        .unwrap();
        assert!(report.retrieval_recall < 1.0);
        assert_eq!(collect_mismatches(&report, Level::Retrieval).len(), 1);
    }

    #[test]
    fn inconsistent_specs_are_rejected() {
        let too_few = ScenarioSpec {
            tool_count: 1,
            ..ScenarioSpec::default()
        };
        assert!(generate_synthetic_scenario(&too_few).is_err());

        let out_of_range = ScenarioSpec {
            tool_count: 3,
            defects: vec![PlantedDefect::new(Level::Tool, 7)],
            healthy_queries: 1,
            retriever_k: 2,
            seed: 0,
        };
        assert!(generate_synthetic_scenario(&out_of_range).is_err());

        let k_too_big = ScenarioSpec {
            tool_count: 3,
            defects: vec![PlantedDefect::new(Level::Retrieval, 0)],
            healthy_queries: 1,
            retriever_k: 3,
            seed: 0,
        };
        assert!(generate_synthetic_scenario(&k_too_big).is_err());

        let duplicate = ScenarioSpec {
            tool_count: 4,
            defects: vec![
                PlantedDefect::new(Level::Tool, 1),
                PlantedDefect::new(Level::Tool, 1),
            ],
            healthy_queries: 1,
            retriever_k: 2,
            seed: 0,
        };
        assert!(generate_synthetic_scenario(&duplicate).is_err());
    }
}
