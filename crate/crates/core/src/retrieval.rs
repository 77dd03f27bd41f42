//! Chunked retrieval index over tool documents and Recall@k.
//!
//! Retrieval content is split into overlapping token windows; queries are
//! scored against chunks with a BM25-style length-normalized tf-idf, an
//! external embedding backend, or a min-max-normalized hybrid of both. A tool
//! is ranked by its best chunk. All scoring paths are deterministic: ties
//! break by ascending tool name and re-indexing an unchanged knowledge base
//! reproduces rankings exactly.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::llmclient::{cosine, Backend, LlmError};
use crate::tooldoc::ToolKnowledgeBase;

const INDEX_FORMAT_VERSION: u32 = 1;
const BM25_K1: f64 = 1.2;
const BM25_B: f64 = 0.75;

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("tool {0:?} has empty retrieval content")]
    EmptyRetrievalContent(String),
    #[error("invalid retriever config: {0}")]
    InvalidConfig(String),
    #[error("scorer {0:?} requires an embedding backend")]
    MissingEmbedder(String),
    #[error("embedding backend failure: {0}")]
    Embedding(#[from] LlmError),
    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed index file {path}: {message}")]
    Malformed { path: String, message: String },
    #[error("unsupported index format version {found} (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    #[default]
    Lexical,
    ExternalEmbedding,
    Hybrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrieverConfig {
    pub chunk_size: usize,
    pub overlap: usize,
    pub k: usize,
    pub scorer: ScorerKind,
    pub hybrid_weight: f64,
}

impl Default for RetrieverConfig {
    fn default() -> Self {
        RetrieverConfig {
            chunk_size: 300,
            overlap: 20,
            k: 10,
            scorer: ScorerKind::Lexical,
            hybrid_weight: 0.5,
        }
    }
}

impl RetrieverConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if self.chunk_size == 0 {
            return Err(RetrievalError::InvalidConfig(
                "chunk_size must be positive".into(),
            ));
        }
        if self.overlap >= self.chunk_size {
            return Err(RetrievalError::InvalidConfig(
                "overlap must be smaller than chunk_size".into(),
            ));
        }
        if self.k == 0 {
            return Err(RetrievalError::InvalidConfig("k must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.hybrid_weight) {
            return Err(RetrievalError::InvalidConfig(
                "hybrid_weight must be in [0,1]".into(),
            ));
        }
        Ok(())
    }
}

/// One indexed window of a document's retrieval text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub tool_name: String,
    /// Half-open `(start, end)` indices into the whitespace-token stream.
    pub token_span: (usize, usize),
    pub text: String,
}

/// Sliding token windows of `chunk_size` with stride `chunk_size - overlap`.
///
/// The final window is truncated at the token count; every token index is
/// covered by at least one window. Empty text yields no spans.
pub fn chunk_text(text: &str, cfg: &RetrieverConfig) -> Vec<(usize, usize)> {
    let token_count = text.split_whitespace().count();
    chunk_spans(token_count, cfg)
}

fn chunk_spans(token_count: usize, cfg: &RetrieverConfig) -> Vec<(usize, usize)> {
    if token_count == 0 {
        return Vec::new();
    }
    let stride = cfg.chunk_size - cfg.overlap;
    let mut spans = Vec::new();
    let mut start = 0usize;
    loop {
        let end = (start + cfg.chunk_size).min(token_count);
        spans.push((start, end));
        if start + cfg.chunk_size >= token_count {
            break;
        }
        start += stride;
    }
    spans
}

/// Lowercased alphanumeric runs; the unit of scoring.
fn scoring_terms(text: &str) -> Vec<String> {
    let mut terms = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            current.extend(c.to_lowercase());
        } else if !current.is_empty() {
            terms.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        terms.push(current);
    }
    terms
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ChunkEntry {
    chunk: Chunk,
    term_counts: BTreeMap<String, usize>,
    term_total: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embedding: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IndexData {
    format_version: u32,
    snapshot_id: String,
    config: RetrieverConfig,
    tool_names: Vec<String>,
    chunks: Vec<ChunkEntry>,
    doc_freq: BTreeMap<String, usize>,
    avg_chunk_len: f64,
}

/// A built (and optionally persisted) retrieval index.
pub struct RetrievalIndex {
    data: IndexData,
    embedder: Option<Arc<dyn Backend>>,
}

impl RetrievalIndex {
    pub fn snapshot_id(&self) -> &str {
        &self.data.snapshot_id
    }

    pub fn config(&self) -> &RetrieverConfig {
        &self.data.config
    }

    pub fn chunk_count(&self) -> usize {
        self.data.chunks.len()
    }

    pub fn chunks(&self) -> impl Iterator<Item = &Chunk> {
        self.data.chunks.iter().map(|entry| &entry.chunk)
    }

    /// Re-attaches an embedding backend after loading a persisted index.
    pub fn with_embedder(mut self, embedder: Arc<dyn Backend>) -> Self {
        self.embedder = Some(embedder);
        self
    }

    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        let raw = serde_json::to_string(&self.data).expect("index serializes");
        std::fs::write(path, raw).map_err(|e| RetrievalError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<Self, RetrievalError> {
        let raw = std::fs::read_to_string(path).map_err(|e| RetrievalError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let data: IndexData =
            serde_json::from_str(&raw).map_err(|e| RetrievalError::Malformed {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        if data.format_version != INDEX_FORMAT_VERSION {
            return Err(RetrievalError::FormatVersion {
                found: data.format_version,
                expected: INDEX_FORMAT_VERSION,
            });
        }
        Ok(RetrievalIndex {
            data,
            embedder: None,
        })
    }

    fn lexical_scores(&self, query_terms: &BTreeSet<String>) -> Vec<f64> {
        let n = self.data.chunks.len() as f64;
        self.data
            .chunks
            .iter()
            .map(|entry| {
                let mut score = 0.0;
                for term in query_terms {
                    let tf = *entry.term_counts.get(term).unwrap_or(&0) as f64;
                    if tf == 0.0 {
                        continue;
                    }
                    let df = *self.data.doc_freq.get(term).unwrap_or(&0) as f64;
                    let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                    let denom = tf
                        + BM25_K1
                            * (1.0 - BM25_B
                                + BM25_B * entry.term_total as f64 / self.data.avg_chunk_len);
                    score += idf * tf * (BM25_K1 + 1.0) / denom;
                }
                score
            })
            .collect()
    }

    fn semantic_scores(&self, query: &str) -> Result<Vec<f64>, RetrievalError> {
        let embedder = self.embedder.as_ref().ok_or_else(|| {
            RetrievalError::MissingEmbedder(format!("{:?}", self.data.config.scorer))
        })?;
        let query_vec = embedder
            .embed(&[query.to_string()])?
            .into_iter()
            .next()
            .ok_or(LlmError::EmptyResponse)?;
        self.data
            .chunks
            .iter()
            .map(|entry| {
                let embedding = entry.embedding.as_ref().ok_or_else(|| {
                    RetrievalError::MissingEmbedder("index has no chunk embeddings".into())
                })?;
                Ok(cosine(&query_vec, embedding))
            })
            .collect()
    }

    fn chunk_scores(&self, query: &str) -> Result<Vec<f64>, RetrievalError> {
        let query_terms: BTreeSet<String> = scoring_terms(query).into_iter().collect();
        match self.data.config.scorer {
            ScorerKind::Lexical => Ok(self.lexical_scores(&query_terms)),
            ScorerKind::ExternalEmbedding => self.semantic_scores(query),
            ScorerKind::Hybrid => {
                let lexical = min_max_normalize(&self.lexical_scores(&query_terms));
                let semantic = min_max_normalize(&self.semantic_scores(query)?);
                let w = self.data.config.hybrid_weight;
                Ok(lexical
                    .iter()
                    .zip(semantic.iter())
                    .map(|(l, s)| w * s + (1.0 - w) * l)
                    .collect())
            }
        }
    }
}

fn min_max_normalize(scores: &[f64]) -> Vec<f64> {
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if scores.is_empty() || max <= min {
        return vec![0.0; scores.len()];
    }
    scores.iter().map(|s| (s - min) / (max - min)).collect()
}

/// Builds a lexical index over all documents of the knowledge base.
pub fn index_kb(
    kb: &ToolKnowledgeBase,
    cfg: &RetrieverConfig,
) -> Result<RetrievalIndex, RetrievalError> {
    if cfg.scorer != ScorerKind::Lexical {
        return Err(RetrievalError::MissingEmbedder(format!("{:?}", cfg.scorer)));
    }
    build_index(kb, cfg, None)
}

/// Builds an index with embeddings for the semantic and hybrid scorers.
pub fn index_kb_with_embedder(
    kb: &ToolKnowledgeBase,
    cfg: &RetrieverConfig,
    embedder: Arc<dyn Backend>,
) -> Result<RetrievalIndex, RetrievalError> {
    build_index(kb, cfg, Some(embedder))
}

fn build_index(
    kb: &ToolKnowledgeBase,
    cfg: &RetrieverConfig,
    embedder: Option<Arc<dyn Backend>>,
) -> Result<RetrievalIndex, RetrievalError> {
    cfg.validate()?;
    let mut chunks = Vec::new();
    for doc in kb.documents() {
        if doc.retrieval_content.trim().is_empty() {
            return Err(RetrievalError::EmptyRetrievalContent(doc.name.clone()));
        }
        let tokens: Vec<&str> = doc.retrieval_content.split_whitespace().collect();
        for (start, end) in chunk_spans(tokens.len(), cfg) {
            let text = tokens[start..end].join(" ");
            let terms = scoring_terms(&text);
            let mut term_counts = BTreeMap::new();
            for term in &terms {
                *term_counts.entry(term.clone()).or_insert(0) += 1;
            }
            chunks.push(ChunkEntry {
                chunk: Chunk {
                    tool_name: doc.name.clone(),
                    token_span: (start, end),
                    text,
                },
                term_counts,
                term_total: terms.len(),
                embedding: None,
            });
        }
    }

    let mut doc_freq: BTreeMap<String, usize> = BTreeMap::new();
    for entry in &chunks {
        for term in entry.term_counts.keys() {
            *doc_freq.entry(term.clone()).or_insert(0) += 1;
        }
    }
    let avg_chunk_len = if chunks.is_empty() {
        1.0
    } else {
        chunks.iter().map(|c| c.term_total).sum::<usize>() as f64 / chunks.len() as f64
    };

    if cfg.scorer != ScorerKind::Lexical {
        let embedder = embedder
            .clone()
            .ok_or_else(|| RetrievalError::MissingEmbedder(format!("{:?}", cfg.scorer)))?;
        if !chunks.is_empty() {
            let texts: Vec<String> = chunks.iter().map(|c| c.chunk.text.clone()).collect();
            let vectors = embedder.embed(&texts)?;
            if vectors.len() != chunks.len() {
                return Err(RetrievalError::Embedding(LlmError::DimensionDrift {
                    expected: chunks.len(),
                    got: vectors.len(),
                }));
            }
            for (entry, vector) in chunks.iter_mut().zip(vectors) {
                entry.embedding = Some(vector);
            }
        }
    }

    Ok(RetrievalIndex {
        data: IndexData {
            format_version: INDEX_FORMAT_VERSION,
            snapshot_id: kb.snapshot_id.clone(),
            config: cfg.clone(),
            tool_names: kb.tool_names().map(str::to_string).collect(),
            chunks,
            doc_freq,
            avg_chunk_len: avg_chunk_len.max(1e-9),
        },
        embedder,
    })
}

/// Top-k tools for a query: best chunk score per tool, non-increasing scores,
/// ties broken by ascending tool name, each tool at most once.
pub fn retrieve(
    index: &RetrievalIndex,
    query: &str,
    k: usize,
) -> Result<Vec<(String, f64)>, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::InvalidConfig("k must be at least 1".into()));
    }
    if index.data.tool_names.is_empty() {
        return Ok(Vec::new());
    }
    let scores = index.chunk_scores(query)?;
    let mut best: BTreeMap<&str, f64> = BTreeMap::new();
    for name in &index.data.tool_names {
        best.insert(name.as_str(), 0.0);
    }
    for (entry, score) in index.data.chunks.iter().zip(scores.iter()) {
        let slot = best
            .get_mut(entry.chunk.tool_name.as_str())
            .expect("tool is registered");
        if *score > *slot {
            *slot = *score;
        }
    }
    let mut ranked: Vec<(String, f64)> = best
        .into_iter()
        .map(|(name, score)| (name.to_string(), score))
        .collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });
    ranked.truncate(k);
    Ok(ranked)
}

/// Per-query all-or-nothing Recall@k: 1 iff every expected tool appears
/// within the first `min(k, len)` results.
pub fn recall_at_k(retrieved: &[(String, f64)], expected_tools: &BTreeSet<String>, k: usize) -> u8 {
    if expected_tools.is_empty() {
        tracing::warn!("recall_at_k called with an empty expected set; scoring 1");
        return 1;
    }
    let cutoff = k.min(retrieved.len());
    let top: BTreeSet<&str> = retrieved[..cutoff]
        .iter()
        .map(|(name, _)| name.as_str())
        .collect();
    u8::from(
        expected_tools
            .iter()
            .all(|tool| top.contains(tool.as_str())),
    )
}

/// Micro-averaged alternative: the fraction of expected tools found in the
/// top k. Off by default; selectable in the evaluation config.
pub fn recall_fraction_at_k(
    retrieved: &[(String, f64)],
    expected_tools: &BTreeSet<String>,
    k: usize,
) -> (usize, usize) {
    if expected_tools.is_empty() {
        return (0, 0);
    }
    let cutoff = k.min(retrieved.len());
    let top: BTreeSet<&str> = retrieved[..cutoff]
        .iter()
        .map(|(name, _)| name.as_str())
        .collect();
    let found = expected_tools
        .iter()
        .filter(|tool| top.contains(tool.as_str()))
        .count();
    (found, expected_tools.len())
}
