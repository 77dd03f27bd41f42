//! Run configuration, backend wiring, and artifact provenance.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use docsmith_core::datasets::{load_bfcl, load_bfcl_tools, load_xlam, BfclCategory};
use docsmith_core::evalharness::ValidationExample;
use docsmith_core::llmclient::{
    Backend, HttpBackend, HttpBackendConfig, ScriptedBackend, ScriptedSpec, SystemClock,
    ThrottlePolicy, ThrottledBackend,
};
use docsmith_core::tooldoc::{ToolDocument, ToolKnowledgeBase};

/// Dataset file formats accepted by `--format`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
#[clap(rename_all = "kebab-case")]
pub enum DatasetFormat {
    /// JSON lines of validation examples (the format `split` writes).
    Native,
    /// Parallel-call records with tools and answers per line.
    Xlam,
    BfclSimple,
    BfclMultiple,
    BfclParallel,
    BfclParallelMultiple,
}

impl DatasetFormat {
    fn bfcl_category(self) -> Option<BfclCategory> {
        match self {
            DatasetFormat::BfclSimple => Some(BfclCategory::Simple),
            DatasetFormat::BfclMultiple => Some(BfclCategory::Multiple),
            DatasetFormat::BfclParallel => Some(BfclCategory::Parallel),
            DatasetFormat::BfclParallelMultiple => Some(BfclCategory::ParallelMultiple),
            _ => None,
        }
    }
}

/// A loaded dataset plus the knowledge base it implies (when the format
/// carries tool documents).
pub struct LoadedDataset {
    pub examples: Vec<ValidationExample>,
    pub derived_kb: Option<ToolKnowledgeBase>,
}

pub fn load_dataset(path: &Path, format: DatasetFormat, top_n: usize) -> Result<LoadedDataset> {
    match format {
        DatasetFormat::Native => {
            let raw = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read dataset {}", path.display()))?;
            let mut examples = Vec::new();
            for (idx, line) in raw.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let example: ValidationExample = serde_json::from_str(line)
                    .with_context(|| format!("dataset line {idx} is malformed"))?;
                examples.push(example);
            }
            if examples.is_empty() {
                bail!("dataset {} is empty", path.display());
            }
            Ok(LoadedDataset {
                examples,
                derived_kb: None,
            })
        }
        DatasetFormat::Xlam => {
            let load = load_xlam(path, top_n)?;
            Ok(LoadedDataset {
                examples: load.examples,
                derived_kb: Some(load.kb),
            })
        }
        bfcl => {
            let category = bfcl.bfcl_category().expect("non-bfcl handled above");
            let examples = load_bfcl(path, category)?;
            let docs: Vec<ToolDocument> = load_bfcl_tools(path)?;
            let kb = ToolKnowledgeBase::new("kb-bfcl", docs)?;
            Ok(LoadedDataset {
                examples,
                derived_kb: Some(kb),
            })
        }
    }
}

pub fn write_native_dataset(path: &Path, examples: &[ValidationExample]) -> Result<()> {
    let mut out = String::new();
    for example in examples {
        out.push_str(&serde_json::to_string(example)?);
        out.push('\n');
    }
    std::fs::write(path, out)
        .with_context(|| format!("internal: cannot write {}", path.display()))?;
    Ok(())
}

/// Backend configuration file: HTTP endpoints plus the throttle policy.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct BackendsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inference: Option<HttpBackendConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub editor: Option<HttpBackendConfig>,
    #[serde(default)]
    pub throttle: ThrottlePolicy,
}

/// How each role's backend is realized.
pub struct Backends {
    pub inference: Arc<dyn Backend>,
    pub editor: Arc<dyn Backend>,
}

pub fn build_backends(
    backend_config: Option<&Path>,
    scripted_fixtures: Option<&Path>,
    scripted_editor_fixtures: Option<&Path>,
) -> Result<Backends> {
    if let Some(fixtures) = scripted_fixtures {
        let spec = ScriptedSpec::load(fixtures)?;
        let inference: Arc<dyn Backend> = Arc::new(ScriptedBackend::from_spec(spec)?);
        let editor: Arc<dyn Backend> = match scripted_editor_fixtures {
            Some(path) => Arc::new(ScriptedBackend::from_spec(ScriptedSpec::load(path)?)?),
            None => Arc::clone(&inference),
        };
        return Ok(Backends { inference, editor });
    }
    let Some(config_path) = backend_config else {
        bail!(
            "no backend configured: pass --backend-config for hosted endpoints or \
             --scripted-fixtures for offline runs"
        );
    };
    let raw = std::fs::read_to_string(config_path)
        .with_context(|| format!("cannot read backend config {}", config_path.display()))?;
    let config: BackendsConfig = serde_json::from_str(&raw)
        .with_context(|| format!("malformed backend config {}", config_path.display()))?;
    let Some(inference_cfg) = config.inference.clone() else {
        bail!("backend config has no inference endpoint");
    };
    let clock = Arc::new(SystemClock::new());
    let inference: Arc<dyn Backend> = Arc::new(ThrottledBackend::new(
        HttpBackend::new(inference_cfg)?,
        config.throttle.clone(),
        clock.clone(),
    ));
    let editor: Arc<dyn Backend> = match config.editor.clone() {
        Some(editor_cfg) => Arc::new(ThrottledBackend::new(
            HttpBackend::new(editor_cfg)?,
            config.throttle.clone(),
            clock,
        )),
        None => Arc::clone(&inference),
    };
    Ok(Backends { inference, editor })
}

/// Content hash of one input file or directory (manifest of per-file hashes).
pub fn hash_input(path: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
            .with_context(|| format!("cannot list {}", path.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        entries.sort();
        for entry in entries {
            if entry.is_file() {
                hasher.update(entry.file_name().unwrap_or_default().as_encoded_bytes());
                hasher.update(std::fs::read(&entry)?);
            }
        }
    } else {
        hasher.update(std::fs::read(path)?);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

/// Provenance block embedded in every artifact: the fully resolved config and
/// the content hashes of every input.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub command: String,
    pub config: serde_json::Value,
    pub input_hashes: BTreeMap<String, String>,
}

impl Provenance {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        Provenance {
            command: command.to_string(),
            config,
            input_hashes: BTreeMap::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.input_hashes
            .insert(path.display().to_string(), hash_input(path)?);
        Ok(())
    }
}

/// Writes a JSON artifact with its provenance embedded.
pub fn write_artifact<T: Serialize>(
    path: &Path,
    provenance: &Provenance,
    payload: &T,
) -> Result<()> {
    let wrapped = serde_json::json!({
        "provenance": provenance,
        "data": payload,
    });
    std::fs::write(path, serde_json::to_string_pretty(&wrapped)?)
        .with_context(|| format!("internal: cannot write {}", path.display()))?;
    Ok(())
}
