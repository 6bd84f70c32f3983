//! Features, feature groups, the global feature pool and the novel-feature
//! queue.
//!
//! A feature's identity is derived from its normalized description only, so
//! the same invariant mined from two bugs (possibly with different witnesses)
//! collapses into one pool entry.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use indexmap::IndexMap;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hashing::short_hash;

/// Hex characters kept from the description digest.
const ID_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("feature description is empty after normalization")]
    EmptyDescription,
    #[error("a feature group needs at least one member")]
    EmptyGroup,
}

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt record {record} (line {line}): {message}")]
    Format {
        /// Zero-based record index.
        record: usize,
        /// One-based line number.
        line: usize,
        message: String,
    },
}

/// Stable identifier of a feature: a digest of its normalized description.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureId(String);

impl FeatureId {
    pub fn for_description(description: &str) -> Self {
        FeatureId(short_hash(normalize_description(description).as_bytes(), ID_LEN))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for FeatureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for FeatureId {
    fn from(s: &str) -> Self {
        FeatureId(s.to_string())
    }
}

/// Trim and collapse every whitespace run to a single space.
pub fn normalize_description(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Where a feature came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Origin {
    Extracted { bug_id: String },
    Glue { iteration: u64 },
    Manual,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feature {
    pub id: FeatureId,
    pub description: String,
    pub witness: String,
    pub origin: Origin,
    /// Number of coverage-increasing groups this feature took part in.
    pub reward: u64,
}

impl Feature {
    pub fn new(
        description: &str,
        witness: impl Into<String>,
        origin: Origin,
    ) -> Result<Self, FeatureError> {
        let description = normalize_description(description);
        if description.is_empty() {
            return Err(FeatureError::EmptyDescription);
        }
        Ok(Feature {
            id: FeatureId(short_hash(description.as_bytes(), ID_LEN)),
            description,
            witness: witness.into(),
            origin,
            reward: 0,
        })
    }

    /// Re-establish the description/id invariants on a feature whose public
    /// fields may have been edited by hand.
    fn canonicalize(mut self) -> Result<Self, FeatureError> {
        self.description = normalize_description(&self.description);
        if self.description.is_empty() {
            return Err(FeatureError::EmptyDescription);
        }
        self.id = FeatureId(short_hash(self.description.as_bytes(), ID_LEN));
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupSource {
    /// Mined from one bug report.
    Collected,
    /// Completed by the group model.
    Synthesized,
    /// Pure random sampling (fallback when the group model is unavailable).
    Random,
}

/// A set of features meant to be realized together in one program.
///
/// Members are keyed by id, so iteration is always in id order and member
/// insertion order has no observable effect.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GroupRecord", into = "GroupRecord")]
pub struct FeatureGroup {
    features: BTreeMap<FeatureId, Feature>,
    pub source: GroupSource,
    pub parent_bug: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct GroupRecord {
    source: GroupSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    parent_bug: Option<String>,
    features: Vec<Feature>,
}

impl TryFrom<GroupRecord> for FeatureGroup {
    type Error = FeatureError;

    fn try_from(r: GroupRecord) -> Result<Self, Self::Error> {
        FeatureGroup::new(r.features, r.source, r.parent_bug)
    }
}

impl From<FeatureGroup> for GroupRecord {
    fn from(g: FeatureGroup) -> Self {
        GroupRecord {
            source: g.source,
            parent_bug: g.parent_bug,
            features: g.features.into_values().collect(),
        }
    }
}

impl FeatureGroup {
    /// Build a group; later duplicates of an id are dropped.
    pub fn new(
        features: impl IntoIterator<Item = Feature>,
        source: GroupSource,
        parent_bug: Option<String>,
    ) -> Result<Self, FeatureError> {
        let mut map = BTreeMap::new();
        for f in features {
            let f = f.canonicalize()?;
            map.entry(f.id.clone()).or_insert(f);
        }
        if map.is_empty() {
            return Err(FeatureError::EmptyGroup);
        }
        Ok(FeatureGroup {
            features: map,
            source,
            parent_bug,
        })
    }

    /// Adds a member; returns false if the id is already present.
    pub fn insert(&mut self, f: Feature) -> Result<bool, FeatureError> {
        let f = f.canonicalize()?;
        if self.features.contains_key(&f.id) {
            return Ok(false);
        }
        self.features.insert(f.id.clone(), f);
        Ok(true)
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn contains(&self, id: &FeatureId) -> bool {
        self.features.contains_key(id)
    }

    pub fn get(&self, id: &FeatureId) -> Option<&Feature> {
        self.features.get(id)
    }

    /// Members in id order.
    pub fn iter(&self) -> impl Iterator<Item = &Feature> {
        self.features.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = &FeatureId> {
        self.features.keys()
    }

    pub fn descriptions(&self) -> Vec<&str> {
        self.iter().map(|f| f.description.as_str()).collect()
    }

    /// Digest of the sorted member ids.
    pub fn group_id(&self) -> String {
        let joined = self.ids().map(FeatureId::as_str).collect::<Vec<_>>().join(",");
        short_hash(joined.as_bytes(), ID_LEN)
    }
}

/// The global feature pool. Iteration follows insertion order.
#[derive(Debug, Clone, Default)]
pub struct FeaturePool {
    entries: IndexMap<FeatureId, Feature>,
}

impl PartialEq for FeaturePool {
    fn eq(&self, other: &Self) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(other.entries.iter()).all(|(a, b)| a == b)
    }
}

impl Eq for FeaturePool {}

impl FeaturePool {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts `f` unless a feature with the same normalized description is
    /// already present. Returns whether the pool grew.
    pub fn insert(&mut self, f: Feature) -> Result<bool, FeatureError> {
        let f = f.canonicalize()?;
        if self.entries.contains_key(&f.id) {
            return Ok(false);
        }
        self.entries.insert(f.id.clone(), f);
        Ok(true)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id: &FeatureId) -> bool {
        self.entries.contains_key(id)
    }

    pub fn get(&self, id: &FeatureId) -> Option<&Feature> {
        self.entries.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Feature> {
        self.entries.values()
    }

    /// Ids in insertion order.
    pub fn insertion_log(&self) -> impl Iterator<Item = &FeatureId> {
        self.entries.keys()
    }

    pub fn bump_reward(&mut self, id: &FeatureId) -> bool {
        match self.entries.get_mut(id) {
            Some(f) => {
                f.reward += 1;
                true
            }
            None => false,
        }
    }

    /// Uniform sample of `min(n, len)` distinct features without replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Feature> {
        self.sample_excluding(n, &HashSet::new(), rng)
    }

    /// Like [`sample`](Self::sample) but never returns an id in `exclude`.
    ///
    /// Draws `n + |exclude|` indices, drops excluded ones and keeps the first
    /// `n`, which is still a uniform sample over the remaining features.
    pub fn sample_excluding<R: Rng + ?Sized>(
        &self,
        n: usize,
        exclude: &HashSet<FeatureId>,
        rng: &mut R,
    ) -> Vec<Feature> {
        let len = self.entries.len();
        let excluded_present = exclude.iter().filter(|id| self.entries.contains_key(*id)).count();
        let want = n.min(len - excluded_present);
        if want == 0 {
            return Vec::new();
        }
        let amount = (want + excluded_present).min(len);
        index::sample(rng, len, amount)
            .into_iter()
            .map(|i| &self.entries[i])
            .filter(|f| !exclude.contains(&f.id))
            .take(want)
            .cloned()
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), PersistError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PersistError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    /// One JSON record per line, fields in the order
    /// `id, description, witness, origin, reward`.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), PersistError> {
        for f in self.entries.values() {
            serde_json::to_writer(&mut *w, f).map_err(io::Error::from)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self, PersistError> {
        let mut pool = FeaturePool::new();
        let mut record = 0usize;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |message: String| PersistError::Format {
                record,
                line: i + 1,
                message,
            };
            let f: Feature = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
            if FeatureId::for_description(&f.description) != f.id {
                return Err(bad(format!("id {} does not match its description", f.id)));
            }
            if pool.entries.contains_key(&f.id) {
                return Err(bad(format!("duplicate id {}", f.id)));
            }
            pool.entries.insert(f.id.clone(), f);
            record += 1;
        }
        Ok(pool)
    }
}

/// Insert a feature into the pool, returning whether the pool grew.
pub fn pool_insert(pool: &mut FeaturePool, f: Feature) -> Result<bool, FeatureError> {
    pool.insert(f)
}

/// Seeded uniform sample without replacement.
pub fn pool_sample(pool: &FeaturePool, n: usize, seed: u64) -> Vec<Feature> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.sample(n, &mut rng)
}

/// FIFO of feature ids; an id is present at most once.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NovelQueue {
    items: VecDeque<FeatureId>,
}

impl NovelQueue {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends `id`; returns false (and leaves the queue alone) if present.
    pub fn enqueue(&mut self, id: FeatureId) -> bool {
        if self.items.contains(&id) {
            return false;
        }
        self.items.push_back(id);
        true
    }

    /// Removes and returns up to `max` ids from the front.
    pub fn dequeue(&mut self, max: usize) -> Vec<FeatureId> {
        let n = max.min(self.items.len());
        self.items.drain(..n).collect()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn contains(&self, id: &FeatureId) -> bool {
        self.items.contains(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &FeatureId> {
        self.items.iter()
    }

    /// Drop entries from the front until at most `cap` remain.
    pub fn truncate_front(&mut self, cap: usize) -> usize {
        let excess = self.items.len().saturating_sub(cap);
        self.items.drain(..excess);
        excess
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn feat(d: &str) -> Feature {
        Feature::new(d, "", Origin::Manual).unwrap()
    }

    #[test]
    fn normalize_collapses_whitespace() {
        assert_eq!(
            normalize_description("  The code should\n use goto. "),
            "The code should use goto."
        );
        assert_eq!(normalize_description("x"), "x");
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in "\\PC*") {
            let once = normalize_description(&s);
            prop_assert_eq!(normalize_description(&once), once.clone());
        }

        #[test]
        fn insert_is_idempotent(d in "[a-z ]{1,30}[a-z]") {
            let mut a = FeaturePool::new();
            a.insert(feat(&d)).unwrap();
            let mut b = a.clone();
            b.insert(feat(&d)).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn normalize_double_application_1000_strings() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let alphabet: Vec<char> = "ab \t\n\r\u{a0}.xyz  ".chars().collect();
        for _ in 0..1000 {
            let len = rng.random_range(0..40);
            let s: String = (0..len)
                .map(|_| alphabet[rng.random_range(0..alphabet.len())])
                .collect();
            let once = normalize_description(&s);
            assert_eq!(normalize_description(&once), once);
        }
    }

    #[test]
    fn empty_description_rejected() {
        assert!(matches!(
            Feature::new(" \n\t", "", Origin::Manual),
            Err(FeatureError::EmptyDescription)
        ));
        let mut pool = FeaturePool::new();
        let mut f = feat("ok");
        f.description = "   ".into();
        assert!(matches!(pool.insert(f), Err(FeatureError::EmptyDescription)));
    }

    #[test]
    fn insert_dedups() {
        let mut pool = FeaturePool::new();
        let f = feat("The code should use goto.");
        assert!(pool.insert(f.clone()).unwrap());
        assert!(!pool.insert(f).unwrap());
        assert_eq!(pool.len(), 1);
        assert!(!pool.insert(feat("  The code   should use goto.\n")).unwrap());
        assert_eq!(pool.len(), 1);
    }

    #[test]
    fn witness_does_not_affect_identity() {
        let a = Feature::new("The code should loop.", "for(;;);", Origin::Manual).unwrap();
        let b = Feature::new("The code should loop.", "while(1);", Origin::Manual).unwrap();
        assert_eq!(a.id, b.id);
    }

    #[test]
    fn sample_edges() {
        let mut pool = FeaturePool::new();
        for i in 0..10 {
            pool.insert(feat(&format!("feature {i}"))).unwrap();
        }
        assert!(pool_sample(&pool, 0, 1).is_empty());
        let all = pool_sample(&pool, 10, 1);
        let mut ids: Vec<_> = all.iter().map(|f| f.id.clone()).collect();
        ids.sort();
        let mut expected: Vec<_> = pool.insertion_log().cloned().collect();
        expected.sort();
        assert_eq!(ids, expected);
        assert_eq!(pool_sample(&pool, 50, 1).len(), 10);
        assert_eq!(pool_sample(&pool, 3, 99), pool_sample(&pool, 3, 99));
    }

    #[test]
    fn sample_excluding_never_returns_excluded() {
        let mut pool = FeaturePool::new();
        for i in 0..6 {
            pool.insert(feat(&format!("f{i}"))).unwrap();
        }
        let exclude: HashSet<_> = pool.insertion_log().take(4).cloned().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let got = pool.sample_excluding(5, &exclude, &mut rng);
            assert_eq!(got.len(), 2);
            assert!(got.iter().all(|f| !exclude.contains(&f.id)));
        }
    }

    #[test]
    fn sample_frequencies_uniform() {
        // 10,000 draws of 2 from 10: each feature expected 0.2 with
        // sigma = sqrt(0.2 * 0.8 / 10000) = 0.004.
        let mut pool = FeaturePool::new();
        for i in 0..10 {
            pool.insert(feat(&format!("feature number {i}"))).unwrap();
        }
        let mut counts = std::collections::HashMap::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let draws = 10_000;
        for _ in 0..draws {
            for f in pool.sample(2, &mut rng) {
                *counts.entry(f.id).or_insert(0usize) += 1;
            }
        }
        let sigma = (0.2f64 * 0.8 / draws as f64).sqrt();
        let mut chi2 = 0.0;
        for id in pool.insertion_log() {
            let freq = counts[id] as f64 / draws as f64;
            assert!((freq - 0.2).abs() <= 3.0 * sigma, "{id}: {freq}");
            let expected = 0.2 * draws as f64;
            chi2 += (counts[id] as f64 - expected).powi(2) / expected;
        }
        // 9 degrees of freedom, p = 0.001 critical value.
        assert!(chi2 < 27.88, "chi2 = {chi2}");
    }

    #[test]
    fn queue_fifo() {
        let mut q = NovelQueue::new();
        assert!(q.dequeue(2).is_empty());
        for s in ["a", "b", "c"] {
            assert!(q.enqueue(s.into()));
        }
        assert!(!q.enqueue("a".into()));
        assert_eq!(q.dequeue(2), vec![FeatureId::from("a"), FeatureId::from("b")]);
        assert_eq!(q.iter().cloned().collect::<Vec<_>>(), vec![FeatureId::from("c")]);
    }

    #[test]
    fn queue_round_trip_order() {
        let mut q = NovelQueue::new();
        for i in 0..7 {
            q.enqueue(FeatureId(format!("id{i}")));
        }
        let original = q.clone();
        let n = q.len();
        let drained = q.dequeue(n);
        assert!(q.is_empty());
        for id in drained {
            q.enqueue(id);
        }
        assert_eq!(q, original);
    }

    #[test]
    fn pool_round_trip_empty_and_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pool.jsonl");
        let empty = FeaturePool::new();
        empty.save(&path).unwrap();
        assert_eq!(FeaturePool::load(&path).unwrap(), empty);

        let mut pool = FeaturePool::new();
        for i in 0..3 {
            let mut f = Feature::new(
                &format!("The code should do thing {i}."),
                format!("int x{i};"),
                Origin::Extracted { bug_id: format!("{}", 100 + i) },
            )
            .unwrap();
            f.reward = i;
            pool.insert(f).unwrap();
        }
        pool.save(&path).unwrap();
        assert_eq!(FeaturePool::load(&path).unwrap(), pool);

        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() - 20]).unwrap();
        match FeaturePool::load(&path) {
            Err(PersistError::Format { record, line, .. }) => {
                assert_eq!(record, 2);
                assert_eq!(line, 3);
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn group_order_insensitive() {
        let fs: Vec<_> = ["a thing", "b thing", "c thing"].iter().map(|d| feat(d)).collect();
        let g1 = FeatureGroup::new(fs.clone(), GroupSource::Collected, None).unwrap();
        let g2 =
            FeatureGroup::new(fs.into_iter().rev(), GroupSource::Collected, None).unwrap();
        assert_eq!(g1, g2);
        assert_eq!(g1.group_id(), g2.group_id());
        assert!(FeatureGroup::new(Vec::new(), GroupSource::Random, None).is_err());
    }

    #[test]
    fn group_drops_duplicate_members() {
        let g = FeatureGroup::new(
            vec![feat("same"), feat(" same "), feat("other")],
            GroupSource::Collected,
            None,
        )
        .unwrap();
        assert_eq!(g.len(), 2);
    }
}
