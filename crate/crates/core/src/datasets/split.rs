//! Answer-grouped train/test split.
//!
//! Examples sharing one unique answer (the entity key) never straddle the
//! split boundary arbitrarily: single-example groups go wholly to train, and
//! multi-example groups are shuffled by seed and divided two-thirds/one-third.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::evalharness::{entity_key_for, ValidationExample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<ValidationExample>,
    pub test: Vec<ValidationExample>,
    pub split_seed: u64,
}

impl DatasetSplit {
    /// Checks the split invariants: no query identity crosses the boundary
    /// and every singleton group sits in train.
    pub fn validate(&self) -> Result<(), String> {
        let train_queries: std::collections::BTreeSet<&str> =
            self.train.iter().map(|e| e.query.as_str()).collect();
        for example in &self.test {
            if train_queries.contains(example.query.as_str()) {
                return Err(format!("query {:?} leaks across the split", example.query));
            }
        }
        let mut group_sizes: BTreeMap<&str, usize> = BTreeMap::new();
        for example in self.train.iter().chain(self.test.iter()) {
            *group_sizes.entry(example.entity_key.as_str()).or_insert(0) += 1;
        }
        for example in &self.test {
            if group_sizes[example.entity_key.as_str()] == 1 {
                return Err(format!(
                    "single-example group {:?} landed in test",
                    example.entity_key
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitOptions {
    pub seed: u64,
    /// Use floor(2n/3) instead of the default ceil(2n/3) train share.
    pub floor_rule: bool,
    /// Key groups on tool-name lists instead of full calls.
    pub names_only_key: bool,
}

impl SplitOptions {
    pub fn with_seed(seed: u64) -> Self {
        SplitOptions {
            seed,
            floor_rule: false,
            names_only_key: false,
        }
    }
}

/// Splits with the default rules: full-call keying, ceiling train share.
pub fn split_by_answer(examples: &[ValidationExample], seed: u64) -> DatasetSplit {
    split_by_answer_with(examples, &SplitOptions::with_seed(seed))
}

pub fn split_by_answer_with(examples: &[ValidationExample], opts: &SplitOptions) -> DatasetSplit {
    let key_of = |example: &ValidationExample| -> String {
        if opts.names_only_key {
            entity_key_for(&example.expected_calls, true)
        } else {
            example.entity_key.clone()
        }
    };

    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (idx, example) in examples.iter().enumerate() {
        groups.entry(key_of(example)).or_default().push(idx);
    }

    let mut in_train = vec![false; examples.len()];
    for (key, members) in &groups {
        if members.len() == 1 {
            in_train[members[0]] = true;
            continue;
        }
        // Group-local rng so the assignment is independent of how many other
        // groups exist.
        let mut digest = Sha256::new();
        digest.update(opts.seed.to_le_bytes());
        digest.update(key.as_bytes());
        let group_seed = u64::from_le_bytes(digest.finalize()[..8].try_into().expect("32 bytes"));
        let mut rng = ChaCha8Rng::seed_from_u64(group_seed);
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut rng);
        let n = shuffled.len();
        let train_share = if opts.floor_rule {
            (2 * n) / 3
        } else {
            (2 * n).div_ceil(3)
        };
        for &idx in &shuffled[..train_share] {
            in_train[idx] = true;
        }
    }

    let train: Vec<ValidationExample> = examples
        .iter()
        .zip(in_train.iter())
        .filter(|(_, &t)| t)
        .map(|(e, _)| e.clone())
        .collect();
    let test: Vec<ValidationExample> = examples
        .iter()
        .zip(in_train.iter())
        .filter(|(_, &t)| !t)
        .map(|(e, _)| e.clone())
        .collect();
    DatasetSplit {
        train,
        test,
        split_seed: opts.seed,
    }
}
