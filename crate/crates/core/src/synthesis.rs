//! Group completion and the masked-prediction training data behind it.
//!
//! The group model is trained on pairs cut from collected groups: shuffle a
//! group, split it at a random point, and learn to predict the second half
//! from the first. At fuzzing time the same format asks it to complete a
//! sampled seed set with glue features.

use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feature::{Feature, FeatureError, FeatureGroup, FeatureId, FeaturePool, GroupSource, Origin};
use crate::hashing::mix_seed;
use crate::listparse::{parse_items, repair_stem};
use crate::llm::{ChatModel, ModelError, ModelParams, ModelRequest, Role};

pub const DEFAULT_TARGET_SIZE: usize = 4;
pub const DEFAULT_RETRIES: u32 = 2;
/// Pairs cut from every collected group.
pub const PAIRS_PER_GROUP: usize = 4;

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("group model failed after {attempts} attempts: {source}")]
    Model { attempts: u32, source: ModelError },
    #[error("group has {0} features; at least 2 are needed")]
    GroupTooSmall(usize),
    #[error("empty seed set")]
    EmptySeed,
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub input_features: Vec<String>,
    pub target_features: Vec<String>,
    pub group_id: String,
}

/// Numbered list starting at `first`, one description per line.
pub fn render_list<S: AsRef<str>>(descriptions: &[S], first: usize) -> String {
    descriptions
        .iter()
        .enumerate()
        .map(|(i, d)| format!("{}. {}", first + i, d.as_ref()))
        .collect::<Vec<_>>()
        .join("\n")
}

/// The completion request: the seed list in training format as the prompt,
/// and how many features to add in the system message.
pub fn build_group_request(seed: &[Feature], missing: usize, params: &ModelParams) -> ModelRequest {
    let descs: Vec<&str> = seed.iter().map(|f| f.description.as_str()).collect();
    ModelRequest {
        system: Some(format!(
            "Continue the numbered list with up to {missing} additional features. Each new feature must \
             start with \"The code should\" and should connect the listed features through shared data \
             or control flow without restating them."
        )),
        params: params.clone(),
        ..ModelRequest::new(Role::Group, render_list(&descs, 1))
    }
}

fn dedup_seed(seed: &[Feature]) -> Vec<Feature> {
    let mut seen = HashSet::new();
    seed.iter().filter(|f| seen.insert(f.id.clone())).cloned().collect()
}

/// Extend `seed` with glue features proposed by the group model.
///
/// Seed features are kept verbatim. At most `target_size - |seed|` new
/// features are added; items that repeat a seed are dropped. If the seed is
/// already big enough the model is not consulted.
pub fn complete_group<M: ChatModel + ?Sized>(
    seed: &[Feature],
    target_size: usize,
    model: &M,
    params: &ModelParams,
    retries: u32,
    iteration: u64,
) -> Result<FeatureGroup, SynthesisError> {
    let seed = dedup_seed(seed);
    if seed.is_empty() {
        return Err(SynthesisError::EmptySeed);
    }
    if seed.len() >= target_size {
        return Ok(FeatureGroup::new(seed, GroupSource::Synthesized, None)?);
    }
    let missing = target_size - seed.len();
    let base = build_group_request(&seed, missing, params);
    let mut attempt = 0;
    let text = loop {
        let req = ModelRequest {
            attempt,
            request_id: format!("group-{iteration}-{attempt}"),
            ..base.clone()
        };
        match model.chat(&req) {
            Ok(t) => break t,
            Err(e) if e.is_retryable() && attempt < retries => {
                log::debug!("iteration {iteration}: group attempt {attempt} failed: {e}");
                attempt += 1;
            }
            Err(e) => {
                return Err(SynthesisError::Model {
                    attempts: attempt + 1,
                    source: e,
                })
            }
        }
    };

    let seed_ids: HashSet<FeatureId> = seed.iter().map(|f| f.id.clone()).collect();
    let mut group = FeatureGroup::new(seed, GroupSource::Synthesized, None)?;
    let mut added = 0;
    for item in parse_items(&text) {
        if added == missing {
            break;
        }
        let Ok(f) = Feature::new(
            &repair_stem(&item.text),
            item.snippet.unwrap_or_default(),
            Origin::Glue { iteration },
        ) else {
            continue;
        };
        if !seed_ids.contains(&f.id) && group.insert(f)? {
            added += 1;
        }
    }
    Ok(group)
}

/// Fallback when the group model is unavailable: the seed plus uniformly
/// sampled pool features.
pub fn random_group<R: Rng + ?Sized>(
    seed: &[Feature],
    pool: &FeaturePool,
    target_size: usize,
    rng: &mut R,
) -> Result<FeatureGroup, SynthesisError> {
    let seed = dedup_seed(seed);
    let exclude: HashSet<FeatureId> = seed.iter().map(|f| f.id.clone()).collect();
    let extra = pool.sample_excluding(target_size.saturating_sub(seed.len()), &exclude, rng);
    let members: Vec<Feature> = seed.into_iter().chain(extra).collect();
    if members.is_empty() {
        return Err(SynthesisError::EmptySeed);
    }
    Ok(FeatureGroup::new(members, GroupSource::Random, None)?)
}

/// Four independent shuffle-and-split pairs; each split point is uniform in
/// `[1, |g| - 1]` so neither side is empty.
pub fn make_training_pairs(g: &FeatureGroup, seed: u64) -> Result<Vec<TrainingPair>, SynthesisError> {
    let n = g.len();
    if n < 2 {
        return Err(SynthesisError::GroupTooSmall(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let descs: Vec<String> = g.iter().map(|f| f.description.clone()).collect();
    let group_id = g.group_id();
    Ok((0..PAIRS_PER_GROUP)
        .map(|_| {
            let mut order = descs.clone();
            order.shuffle(&mut rng);
            let cut = rng.random_range(1..n);
            let target_features = order.split_off(cut);
            TrainingPair {
                input_features: order,
                target_features,
                group_id: group_id.clone(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExportStats {
    pub groups_in: usize,
    pub groups_skipped: usize,
    pub pairs_out: usize,
}

/// One line of the training dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub group_id: String,
    pub prompt: String,
    pub completion: String,
}

impl From<&TrainingPair> for TrainingRecord {
    fn from(p: &TrainingPair) -> Self {
        TrainingRecord {
            group_id: p.group_id.clone(),
            prompt: render_list(&p.input_features, 1),
            completion: render_list(&p.target_features, p.input_features.len() + 1),
        }
    }
}

/// Write every group's pairs as JSON lines. Groups with fewer than two
/// features are skipped and counted. Group `i` uses sub-seed `i` of `seed`.
pub fn write_training_dataset<W: Write>(
    groups: &[FeatureGroup],
    seed: u64,
    out: &mut W,
) -> io::Result<ExportStats> {
    let mut stats = ExportStats {
        groups_in: groups.len(),
        ..ExportStats::default()
    };
    for (i, g) in groups.iter().enumerate() {
        match make_training_pairs(g, mix_seed(seed, i as u64)) {
            Ok(pairs) => {
                for p in &pairs {
                    serde_json::to_writer(&mut *out, &TrainingRecord::from(p))?;
                    out.write_all(b"\n")?;
                }
                stats.pairs_out += pairs.len();
            }
            Err(_) => stats.groups_skipped += 1,
        }
    }
    Ok(stats)
}

pub fn export_training_dataset(groups: &[FeatureGroup], path: &Path, seed: u64) -> io::Result<ExportStats> {
    let mut w = BufWriter::new(File::create(path)?);
    let stats = write_training_dataset(groups, seed, &mut w)?;
    w.flush()?;
    Ok(stats)
}

/// Rebuild collected groups from a pool: features extracted from the same
/// bug form one group, in order of first appearance.
pub fn collected_groups(pool: &FeaturePool) -> Vec<FeatureGroup> {
    let mut by_bug: IndexMap<&str, Vec<Feature>> = IndexMap::new();
    for f in pool.iter() {
        if let Origin::Extracted { bug_id } = &f.origin {
            by_bug.entry(bug_id.as_str()).or_default().push(f.clone());
        }
    }
    by_bug
        .into_iter()
        .filter_map(|(bug, fs)| FeatureGroup::new(fs, GroupSource::Collected, Some(bug.to_string())).ok())
        .collect()
}
