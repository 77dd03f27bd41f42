//! `docsmith` — evaluate tool-calling pipelines against labeled datasets and
//! run the verification-guided editing loop over their knowledge bases.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use docsmith_core::evalharness::{EvalConfig, FinalAccMode};
use docsmith_core::optimizer::{AcceptMetric, EvalMode, OptimizerConfig};
use docsmith_core::pipeline::PipelineConfig;
use docsmith_core::retrieval::RetrieverConfig;
use docsmith_core::tooldoc::Level;

use commands::{check_dataset_against_kb, resolve_kb};
use config::{build_backends, load_dataset, DatasetFormat, Provenance};

#[derive(Parser)]
#[command(name = "docsmith", version, about)]
struct Cli {
    /// Seed for every random choice (splits, synthetic scenarios).
    #[arg(long, global = true, env = "DOCSMITH_SEED", default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct BackendArgs {
    /// JSON file with hosted endpoint and throttle settings.
    #[arg(long, env = "DOCSMITH_BACKEND_CONFIG")]
    backend_config: Option<PathBuf>,
    /// Scripted inference fixtures for offline runs.
    #[arg(long, env = "DOCSMITH_SCRIPTED_FIXTURES")]
    scripted_fixtures: Option<PathBuf>,
    /// Scripted editor fixtures (defaults to the inference fixtures).
    #[arg(long, env = "DOCSMITH_SCRIPTED_EDITOR_FIXTURES")]
    scripted_editor_fixtures: Option<PathBuf>,
}

#[derive(Args)]
struct DatasetArgs {
    /// Dataset file (JSON lines).
    #[arg(long, env = "DOCSMITH_DATASET")]
    dataset: PathBuf,
    #[arg(long, value_enum, default_value = "native", env = "DOCSMITH_FORMAT")]
    format: DatasetFormat,
    /// Keep only the N most frequently called tools (xlam format).
    #[arg(long, default_value_t = 100)]
    top_tools: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a knowledge base against a labeled dataset.
    Evaluate {
        /// Knowledge-base directory (manifest.json plus per-tool files).
        #[arg(long, env = "DOCSMITH_KB")]
        kb: Option<PathBuf>,
        #[command(flatten)]
        dataset: DatasetArgs,
        #[command(flatten)]
        backends: BackendArgs,
        /// Retrieval cutoff.
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Repeat the evaluation and report mean and standard deviation.
        #[arg(long, default_value_t = 1)]
        trials: usize,
        #[arg(long, env = "DOCSMITH_OUT", default_value = "out/evaluate")]
        out: PathBuf,
    },
    /// Run the editing loop on a training split.
    Optimize {
        #[arg(long, env = "DOCSMITH_KB")]
        kb: Option<PathBuf>,
        /// Training split (evaluated inside the loop).
        #[arg(long, env = "DOCSMITH_TRAIN")]
        train: PathBuf,
        /// Held-out split, evaluated once before and once after the run.
        #[arg(long, env = "DOCSMITH_TEST")]
        test: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "native", env = "DOCSMITH_FORMAT")]
        format: DatasetFormat,
        #[arg(long, default_value_t = 100)]
        top_tools: usize,
        #[command(flatten)]
        backends: BackendArgs,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 3)]
        iterations: usize,
        /// Comma-separated ordered subset of retrieval,tool,parameter.
        #[arg(long, default_value = "retrieval,tool,parameter")]
        levels: String,
        #[arg(long, value_enum, default_value = "final-acc-product")]
        accept_metric: AcceptMetricArg,
        /// full re-evaluation per candidate, or cached (auto picks cached for
        /// knowledge bases over 20 tools).
        #[arg(long, default_value = "auto")]
        eval_mode: String,
        /// Continue from the checkpoint under --out.
        #[arg(long, default_value_t = false)]
        resume: bool,
        /// Stop (resumably) after this many proposals.
        #[arg(long)]
        max_proposals: Option<usize>,
        /// In-context example fixtures (JSON array of before/after/outcome
        /// entries); the built-in seed set otherwise.
        #[arg(long)]
        icl_fixtures: Option<PathBuf>,
        #[arg(long, env = "DOCSMITH_OUT", default_value = "out/optimize")]
        out: PathBuf,
    },
    /// Split a dataset into train/test by unique answers.
    Split {
        #[command(flatten)]
        dataset: DatasetArgs,
        /// Use floor(2n/3) instead of ceil(2n/3) for the train share.
        #[arg(long, default_value_t = false)]
        floor_rule: bool,
        /// Group by tool-name lists instead of full calls.
        #[arg(long, default_value_t = false)]
        names_only_key: bool,
        #[arg(long, env = "DOCSMITH_OUT", default_value = "out/split")]
        out: PathBuf,
    },
    /// Export SFT/DPO/GRPO corpora from a run ledger.
    ExportPreferences {
        /// Ledger file written by optimize (ledger.jsonl).
        #[arg(long)]
        ledger: PathBuf,
        #[arg(long, env = "DOCSMITH_OUT", default_value = "out/preferences")]
        out: PathBuf,
    },
    /// Render a run's accuracy-per-iteration table.
    Report {
        /// Run directory written by optimize.
        #[arg(long)]
        run: PathBuf,
    },
    /// Generate a synthetic planted-defect scenario with scripted fixtures.
    Synth {
        /// Scenario spec file; a default three-defect scenario otherwise.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, env = "DOCSMITH_OUT", default_value = "out/synth")]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
#[clap(rename_all = "kebab-case")]
enum AcceptMetricArg {
    FinalAccProduct,
    FinalAccJoint,
    LevelMetric,
}

impl From<AcceptMetricArg> for AcceptMetric {
    fn from(arg: AcceptMetricArg) -> AcceptMetric {
        match arg {
            AcceptMetricArg::FinalAccProduct => AcceptMetric::FinalAccProduct,
            AcceptMetricArg::FinalAccJoint => AcceptMetric::FinalAccJoint,
            AcceptMetricArg::LevelMetric => AcceptMetric::LevelMetric,
        }
    }
}

fn parse_levels(raw: &str) -> Result<Vec<Level>> {
    raw.split(',')
        .map(|part| match part.trim() {
            "retrieval" => Ok(Level::Retrieval),
            "tool" => Ok(Level::Tool),
            "parameter" => Ok(Level::Parameter),
            other => anyhow::bail!("unknown level {other:?}"),
        })
        .collect()
}

fn eval_config(k: usize, mode: FinalAccMode) -> EvalConfig {
    EvalConfig {
        retriever: RetrieverConfig {
            k,
            ..RetrieverConfig::default()
        },
        pipeline: PipelineConfig {
            k,
            ..PipelineConfig::default()
        },
        final_acc_mode: mode,
        ..EvalConfig::default()
    }
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Evaluate {
            kb,
            dataset,
            backends,
            k,
            trials,
            out,
        } => {
            let loaded = load_dataset(&dataset.dataset, dataset.format, dataset.top_tools)?;
            let kb = resolve_kb(kb.as_ref(), loaded.derived_kb)?;
            check_dataset_against_kb(&loaded.examples, &kb)?;
            let backends = build_backends(
                backends.backend_config.as_deref(),
                backends.scripted_fixtures.as_deref(),
                backends.scripted_editor_fixtures.as_deref(),
            )?;
            let cfg = eval_config(k, FinalAccMode::Product);
            let mut provenance = Provenance::new("evaluate", serde_json::Value::Null);
            provenance.add_input(&dataset.dataset)?;
            commands::cmd_evaluate(
                kb,
                &loaded.examples,
                &backends,
                &cfg,
                trials,
                &out,
                provenance,
            )
        }
        Command::Optimize {
            kb,
            train,
            test,
            format,
            top_tools,
            backends,
            k,
            iterations,
            levels,
            accept_metric,
            eval_mode,
            resume,
            max_proposals,
            icl_fixtures,
            out,
        } => {
            let loaded = load_dataset(&train, format, top_tools)?;
            let kb = resolve_kb(kb.as_ref(), loaded.derived_kb)?;
            check_dataset_against_kb(&loaded.examples, &kb)?;
            let test_examples = match &test {
                Some(path) => Some(load_dataset(path, format, top_tools)?.examples),
                None => None,
            };
            let backends = build_backends(
                backends.backend_config.as_deref(),
                backends.scripted_fixtures.as_deref(),
                backends.scripted_editor_fixtures.as_deref(),
            )?;
            let eval_mode = match eval_mode.as_str() {
                "full" => EvalMode::Full,
                "cached" => EvalMode::Cached,
                // Exhaustive re-evaluation for small inventories, cached
                // beyond.
                "auto" => {
                    if kb.len() > 20 {
                        EvalMode::Cached
                    } else {
                        EvalMode::Full
                    }
                }
                other => anyhow::bail!("unknown eval mode {other:?}"),
            };
            let cfg = OptimizerConfig {
                iterations,
                levels: parse_levels(&levels)?,
                accept_metric: accept_metric.into(),
                eval_mode,
                seed: cli.seed,
                eval: eval_config(k, FinalAccMode::Product),
                ..OptimizerConfig::default()
            };
            let icl = match &icl_fixtures {
                Some(path) => docsmith_core::editors::load_icl_examples(path)?,
                None => docsmith_core::editors::seed_icl_examples(),
            };
            let mut provenance = Provenance::new("optimize", serde_json::Value::Null);
            provenance.add_input(&train)?;
            if let Some(path) = &test {
                provenance.add_input(path)?;
            }
            if let Some(path) = &icl_fixtures {
                provenance.add_input(path)?;
            }
            commands::cmd_optimize(
                kb,
                &loaded.examples,
                test_examples.as_deref(),
                &backends,
                cfg,
                icl,
                &out,
                resume,
                max_proposals,
                provenance,
            )
        }
        Command::Split {
            dataset,
            floor_rule,
            names_only_key,
            out,
        } => {
            let loaded = load_dataset(&dataset.dataset, dataset.format, dataset.top_tools)?;
            let opts = docsmith_core::datasets::SplitOptions {
                seed: cli.seed,
                floor_rule,
                names_only_key,
            };
            let mut provenance = Provenance::new("split", serde_json::Value::Null);
            provenance.add_input(&dataset.dataset)?;
            commands::cmd_split(&loaded.examples, &opts, &out, provenance)
        }
        Command::ExportPreferences { ledger, out } => {
            let mut provenance = Provenance::new("export-preferences", serde_json::Value::Null);
            provenance.add_input(&ledger)?;
            commands::cmd_export_preferences(&ledger, &out, provenance)
        }
        Command::Report { run } => commands::cmd_report(&run),
        Command::Synth { spec, out } => {
            let mut provenance = Provenance::new("synth", serde_json::Value::Null);
            if let Some(path) = &spec {
                provenance.add_input(path)?;
            }
            commands::cmd_synth(spec.as_deref(), cli.seed, &out, provenance)
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err:#}");
            // Output-side failures are tagged "internal:" where they arise;
            // everything else is a config or input problem.
            if format!("{err:#}").contains("internal:") {
                ExitCode::from(3)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
