//! Post-training objective math and preference-dataset export.
//!
//! The framework has no token-level access to hosted models, so
//! log-probabilities are inputs here, not computed: this module evaluates the
//! SFT, DPO, and GRPO objectives on supplied records and exports preference
//! corpora from optimizer ledgers for training that runs elsewhere. The
//! mapping from editing trajectories to preference data (pairing accepted
//! with rejected proposals per mismatch context) is this artifact's own
//! construction.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::optimizer::LedgerEntry;
use crate::tooldoc::Level;

#[derive(Debug, thiserror::Error)]
pub enum PosttrainError {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("beta must be positive, got {0}")]
    NonPositiveBeta(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("log probability {0} is positive; log-likelihoods are at most 0")]
    PositiveLogProb(f64),
    #[error("preference groups need at least 2 members, got {0}")]
    GroupTooSmall(usize),
    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Log-probabilities of one sequence under the trained policy and the frozen
/// reference policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogProbRecord {
    pub sequence_id: String,
    pub logprob_theta: f64,
    pub logprob_ref: f64,
}

impl LogProbRecord {
    pub fn new(sequence_id: impl Into<String>, logprob_theta: f64, logprob_ref: f64) -> Self {
        LogProbRecord {
            sequence_id: sequence_id.into(),
            logprob_theta,
            logprob_ref,
        }
    }

    fn check(&self) -> Result<(), PosttrainError> {
        if !self.logprob_theta.is_finite() || !self.logprob_ref.is_finite() {
            return Err(PosttrainError::NonFinite("log probability"));
        }
        for lp in [self.logprob_theta, self.logprob_ref] {
            if lp > 0.0 {
                return Err(PosttrainError::PositiveLogProb(lp));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMember {
    pub response_id: String,
    pub score: f64,
    pub logprobs: LogProbRecord,
}

/// A prompt with m scored candidate responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceGroup {
    pub prompt_id: String,
    pub members: Vec<GroupMember>,
    pub beta: f64,
}

/// Negative mean log-likelihood. Non-negative, and zero exactly when every
/// sequence has probability one.
pub fn sft_loss(logprobs_theta: &[f64]) -> Result<f64, PosttrainError> {
    if logprobs_theta.is_empty() {
        return Err(PosttrainError::EmptyInput(
            "sft_loss needs at least one record",
        ));
    }
    for lp in logprobs_theta {
        if !lp.is_finite() {
            return Err(PosttrainError::NonFinite("log probability"));
        }
        if *lp > 0.0 {
            return Err(PosttrainError::PositiveLogProb(*lp));
        }
    }
    Ok(-logprobs_theta.iter().sum::<f64>() / logprobs_theta.len() as f64)
}

/// Numerically stable ln(1 + e^x).
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Pairwise preference loss: the negative mean log-sigmoid of the scaled
/// policy-vs-reference log-ratio margin between the preferred and
/// dispreferred responses.
pub fn dpo_loss(
    pairs: &[(LogProbRecord, LogProbRecord)],
    beta: f64,
) -> Result<f64, PosttrainError> {
    if pairs.is_empty() {
        return Err(PosttrainError::EmptyInput(
            "dpo_loss needs at least one pair",
        ));
    }
    if beta <= 0.0 {
        return Err(PosttrainError::NonPositiveBeta(beta));
    }
    let mut total = 0.0;
    for (preferred, dispreferred) in pairs {
        preferred.check()?;
        dispreferred.check()?;
        let margin = (preferred.logprob_theta - preferred.logprob_ref)
            - (dispreferred.logprob_theta - dispreferred.logprob_ref);
        // -log(sigmoid(beta * margin)) = softplus(-beta * margin)
        total += softplus(-beta * margin);
    }
    Ok(total / pairs.len() as f64)
}

/// Softmax of the scaled scores, computed with max-shift stabilization.
/// Every weight lies in (0, 1] and the weights sum to one.
pub fn grpo_weights(scores: &[f64], beta: f64) -> Result<Vec<f64>, PosttrainError> {
    if scores.is_empty() {
        return Err(PosttrainError::EmptyInput(
            "grpo_weights needs at least one score",
        ));
    }
    if beta <= 0.0 {
        return Err(PosttrainError::NonPositiveBeta(beta));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(PosttrainError::NonFinite("score"));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (beta * (s - max)).exp()).collect();
    let denom: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / denom).collect())
}

/// Groupwise preference loss: the weighted negative log-likelihood with
/// softmax weights over each group's scores, averaged over groups.
pub fn grpo_loss(groups: &[PreferenceGroup]) -> Result<f64, PosttrainError> {
    if groups.is_empty() {
        return Err(PosttrainError::EmptyInput(
            "grpo_loss needs at least one group",
        ));
    }
    let mut total = 0.0;
    for group in groups {
        if group.members.len() < 2 {
            return Err(PosttrainError::GroupTooSmall(group.members.len()));
        }
        let scores: Vec<f64> = group.members.iter().map(|m| m.score).collect();
        let weights = grpo_weights(&scores, group.beta)?;
        for (member, weight) in group.members.iter().zip(weights.iter()) {
            member.logprobs.check()?;
            total -= weight * member.logprobs.logprob_theta;
        }
    }
    Ok(total / groups.len() as f64)
}

/// One supervised fine-tuning row: the guided instruction and the accepted
/// editor output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftRow {
    pub level: Level,
    pub query: String,
    pub prompt: String,
    pub completion: String,
}

/// One preference pair: an accepted and a rejected proposal for the same
/// mismatch context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpoPair {
    pub level: Level,
    pub query: String,
    pub prompt: String,
    pub preferred: String,
    pub dispreferred: String,
}

/// All evaluated proposals for one mismatch context, scored by their metric
/// delta.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrpoGroupRow {
    pub level: Level,
    pub query: String,
    pub prompt: String,
    pub responses: Vec<GrpoResponse>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrpoResponse {
    pub text: String,
    /// post_score - pre_score of the proposal.
    pub score: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ExportBundle {
    pub sft: Vec<SftRow>,
    pub dpo: Vec<DpoPair>,
    pub grpo: Vec<GrpoGroupRow>,
    /// Contexts that produced no DPO pair (missing an accepted or a rejected
    /// proposal).
    pub skipped_dpo_contexts: usize,
    /// Contexts with fewer than two evaluated proposals.
    pub skipped_grpo_contexts: usize,
}

impl ExportBundle {
    pub fn is_empty(&self) -> bool {
        self.sft.is_empty() && self.dpo.is_empty() && self.grpo.is_empty()
    }

    /// Writes the three corpora as JSON-lines files into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), PosttrainError> {
        std::fs::create_dir_all(dir).map_err(|e| PosttrainError::Io {
            path: dir.display().to_string(),
            source: e,
        })?;
        write_jsonl(&dir.join("sft.jsonl"), &self.sft)?;
        write_jsonl(&dir.join("dpo_pairs.jsonl"), &self.dpo)?;
        write_jsonl(&dir.join("grpo_groups.jsonl"), &self.grpo)?;
        Ok(())
    }
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), PosttrainError> {
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(row).expect("row serializes"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| PosttrainError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Builds the three corpora from a run ledger.
///
/// SFT rows come from accepted proposals. DPO pairs cross accepted with
/// evaluated-but-rejected proposals of the same mismatch context. GRPO
/// groups gather all evaluated proposals per context with `post - pre`
/// scores; contexts with fewer than two are skipped and counted.
pub fn export_preferences(ledger: &[LedgerEntry]) -> ExportBundle {
    let mut bundle = ExportBundle::default();
    let mut contexts: BTreeMap<(Level, String), Vec<&LedgerEntry>> = BTreeMap::new();
    for entry in ledger {
        contexts
            .entry((entry.level, entry.query.clone()))
            .or_default()
            .push(entry);
    }

    for ((level, query), entries) in contexts {
        let evaluated: Vec<&LedgerEntry> = entries
            .iter()
            .copied()
            .filter(|e| e.raw_output.is_some() && e.post_score.is_some())
            .collect();
        let accepted: Vec<&LedgerEntry> =
            evaluated.iter().copied().filter(|e| e.accepted).collect();
        let rejected: Vec<&LedgerEntry> =
            evaluated.iter().copied().filter(|e| !e.accepted).collect();

        for entry in &accepted {
            bundle.sft.push(SftRow {
                level,
                query: query.clone(),
                prompt: entry.instruction.clone(),
                completion: entry.raw_output.clone().expect("filtered on raw_output"),
            });
        }

        if accepted.is_empty() || rejected.is_empty() {
            bundle.skipped_dpo_contexts += 1;
        } else {
            for good in &accepted {
                for bad in &rejected {
                    bundle.dpo.push(DpoPair {
                        level,
                        query: query.clone(),
                        prompt: good.instruction.clone(),
                        preferred: good.raw_output.clone().expect("filtered"),
                        dispreferred: bad.raw_output.clone().expect("filtered"),
                    });
                }
            }
        }

        if evaluated.len() < 2 {
            bundle.skipped_grpo_contexts += 1;
        } else {
            bundle.grpo.push(GrpoGroupRow {
                level,
                query: query.clone(),
                prompt: evaluated[0].instruction.clone(),
                responses: evaluated
                    .iter()
                    .map(|e| GrpoResponse {
                        text: e.raw_output.clone().expect("filtered"),
                        score: e.post_score.expect("filtered") - e.pre_score,
                        accepted: e.accepted,
                    })
                    .collect(),
            });
        }
    }
    bundle
}
