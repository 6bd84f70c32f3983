//! Group coherence and coverage overlap measures.
//!
//! * redundancy: mean pairwise cosine similarity over unordered member pairs,
//!   after dropping near-duplicate pairs (`cos >= tau`)
//! * diameter: largest pairwise `1 - cos`
//! * Jaccard overlap of two coverage sets
//! * validity rate and crash-on-valid rate of a campaign
//!
//! The embedding metrics are generic over [`Scalar`] (`f32` or `f64`).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::campaign::IterationReport;
use crate::harness::{CoverageMap, OutcomeStatus, UnitKindMismatch};
use crate::scalar::Scalar;

/// Default near-duplicate threshold.
pub const DEFAULT_TAU: f64 = 0.95;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("cosine is undefined for an all-zero vector")]
    ZeroVector,
    #[error("need at least two feature vectors, got {0}")]
    TooFewFeatures(usize),
    #[error("tau must lie in (0, 1], got {0}")]
    InvalidTau(f64),
    #[error("embedding must be non-empty and finite")]
    InvalidEmbedding,
    #[error(transparent)]
    UnitKind(#[from] UnitKindMismatch),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding<T> {
    values: Vec<T>,
}

impl<T: Scalar> Embedding<T> {
    pub fn new(values: Vec<T>) -> Result<Self, MetricError> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(MetricError::InvalidEmbedding);
        }
        Ok(Embedding { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn scaled(&self, factor: T) -> Self {
        Embedding {
            values: self.values.iter().map(|v| *v * factor).collect(),
        }
    }

    pub fn norm(&self) -> T {
        self.norm_sq().sqrt()
    }

    pub fn norm_sq(&self) -> T {
        self.values.iter().fold(T::zero(), |acc, v| acc + *v * *v)
    }

    pub fn dot(&self, other: &Self) -> T {
        self.values
            .iter()
            .zip(&other.values)
            .fold(T::zero(), |acc, (a, b)| acc + *a * *b)
    }
}

fn clamp_unit<T: Scalar>(c: T) -> T {
    c.max(-T::one()).min(T::one())
}

/// `dot(a, b) / sqrt(|a|² |b|²)`, clamped to `[-1, 1]`. Taking one square
/// root of the product makes `cosine(v, v)` exactly 1.
pub fn cosine<T: Scalar>(a: &Embedding<T>, b: &Embedding<T>) -> Result<T, MetricError> {
    if a.dim() != b.dim() {
        return Err(MetricError::DimMismatch(a.dim(), b.dim()));
    }
    let (na, nb) = (a.norm_sq(), b.norm_sq());
    if na.is_zero() || nb.is_zero() {
        return Err(MetricError::ZeroVector);
    }
    Ok(clamp_unit(a.dot(b) / (na * nb).sqrt()))
}

/// Cosines of all unordered pairs `i < j`, row-major, computed as in
/// [`cosine`]. Squared norms are computed once.
pub fn pairwise_cosines<T: Scalar>(vecs: &[Embedding<T>]) -> Result<Vec<T>, MetricError> {
    let Some(first) = vecs.first() else {
        return Ok(Vec::new());
    };
    let dim = first.dim();
    let mut norms = Vec::with_capacity(vecs.len());
    for v in vecs {
        if v.dim() != dim {
            return Err(MetricError::DimMismatch(dim, v.dim()));
        }
        let n = v.norm_sq();
        if n.is_zero() {
            return Err(MetricError::ZeroVector);
        }
        norms.push(n);
    }
    let mut out = Vec::with_capacity(vecs.len() * (vecs.len() - 1) / 2);
    for i in 0..vecs.len() {
        for j in i + 1..vecs.len() {
            out.push(clamp_unit(vecs[i].dot(&vecs[j]) / (norms[i] * norms[j]).sqrt()));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coherence<T> {
    pub redundancy: T,
    pub diameter: T,
    /// Pairs that survived the tau filter.
    pub pair_count: usize,
    /// Pairs dropped as near-duplicates.
    pub filtered_count: usize,
    /// Set when every pair was filtered; redundancy is then reported as 0.
    pub no_pairs: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Redundancy<T> {
    pub redundancy: T,
    pub pair_count: usize,
    pub filtered_count: usize,
    pub no_pairs: bool,
}

fn check_tau(tau: f64) -> Result<(), MetricError> {
    if tau > 0.0 && tau <= 1.0 {
        Ok(())
    } else {
        Err(MetricError::InvalidTau(tau))
    }
}

fn redundancy_of<T: Scalar>(cosines: &[T], tau: T) -> Redundancy<T> {
    let mut kept: Vec<T> = cosines.iter().copied().filter(|c| *c < tau).collect();
    let filtered_count = cosines.len() - kept.len();
    if kept.is_empty() {
        return Redundancy {
            redundancy: T::zero(),
            pair_count: 0,
            filtered_count,
            no_pairs: true,
        };
    }
    // Summing in value order makes the mean independent of member order.
    kept.sort_by(|a, b| a.partial_cmp(b).expect("finite cosines"));
    let sum = kept.iter().fold(T::zero(), |acc, c| acc + *c);
    Redundancy {
        redundancy: sum / T::from_usize(kept.len()).expect("pair count fits"),
        pair_count: kept.len(),
        filtered_count,
        no_pairs: false,
    }
}

fn diameter_of<T: Scalar>(cosines: &[T]) -> T {
    cosines.iter().fold(T::zero(), |acc, c| acc.max(T::one() - *c))
}

pub fn redundancy<T: Scalar>(vecs: &[Embedding<T>], tau: f64) -> Result<Redundancy<T>, MetricError> {
    check_tau(tau)?;
    if vecs.len() < 2 {
        return Err(MetricError::TooFewFeatures(vecs.len()));
    }
    let cos = pairwise_cosines(vecs)?;
    Ok(redundancy_of(&cos, T::from_f64_lossy(tau)))
}

pub fn diameter<T: Scalar>(vecs: &[Embedding<T>]) -> Result<T, MetricError> {
    if vecs.len() < 2 {
        return Err(MetricError::TooFewFeatures(vecs.len()));
    }
    Ok(diameter_of(&pairwise_cosines(vecs)?))
}

/// Redundancy and diameter from one pass over the pairs.
pub fn coherence<T: Scalar>(vecs: &[Embedding<T>], tau: f64) -> Result<Coherence<T>, MetricError> {
    check_tau(tau)?;
    if vecs.len() < 2 {
        return Err(MetricError::TooFewFeatures(vecs.len()));
    }
    let cos = pairwise_cosines(vecs)?;
    let r = redundancy_of(&cos, T::from_f64_lossy(tau));
    Ok(Coherence {
        redundancy: r.redundancy,
        diameter: diameter_of(&cos),
        pair_count: r.pair_count,
        filtered_count: r.filtered_count,
        no_pairs: r.no_pairs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jaccard<T> {
    pub value: T,
    pub overlap: usize,
    pub union: usize,
    /// Both sets empty; value reported as 1.
    pub degenerate: bool,
}

/// `|A ∩ B| / |A ∪ B|` from the overlap and the two exclusive counts.
pub fn jaccard_from_counts<T: Scalar>(overlap: usize, only_a: usize, only_b: usize) -> Jaccard<T> {
    let union = overlap + only_a + only_b;
    if union == 0 {
        return Jaccard {
            value: T::one(),
            overlap: 0,
            union: 0,
            degenerate: true,
        };
    }
    let value = T::from_usize(overlap).expect("count fits") / T::from_usize(union).expect("count fits");
    Jaccard {
        value,
        overlap,
        union,
        degenerate: false,
    }
}

pub fn jaccard<T: Scalar>(a: &CoverageMap, b: &CoverageMap) -> Result<Jaccard<T>, MetricError> {
    a.check_kind(b)?;
    let overlap = a.intersection_len(b);
    Ok(jaccard_from_counts(overlap, a.len() - overlap, b.len() - overlap))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidityStats<T> {
    pub valid_rate: T,
    pub crash_on_valid: T,
    /// Iterations that produced a program.
    pub generated: usize,
    pub valid: usize,
    pub crashing_valid: usize,
    /// A zero denominator forced one of the rates to 0.
    pub degenerate: bool,
}

/// A program is valid when it compiled cleanly, or when it crashed the
/// compiler and the crash was confirmed to be on an accepted program.
pub fn campaign_validity_stats<T: Scalar>(reports: &[IterationReport]) -> ValidityStats<T> {
    let mut generated = 0;
    let mut valid = 0;
    let mut crashing_valid = 0;
    for r in reports {
        let Some(status) = r.outcome_status else { continue };
        generated += 1;
        match status {
            OutcomeStatus::Valid => valid += 1,
            OutcomeStatus::Crash if r.crash_counted_valid => {
                valid += 1;
                crashing_valid += 1;
            }
            _ => {}
        }
    }
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            T::zero()
        } else {
            T::from_usize(num).unwrap() / T::from_usize(den).unwrap()
        }
    };
    ValidityStats {
        valid_rate: ratio(valid, generated),
        crash_on_valid: ratio(crashing_valid, valid),
        generated,
        valid,
        crashing_valid,
        degenerate: generated == 0 || valid == 0,
    }
}
