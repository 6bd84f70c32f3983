//! Feature-composition compiler fuzzing.
//!
//! A *feature* pairs a natural-language description of a bug-prone program
//! invariant with a code witness. Features mined from historical bug reports
//! populate a [`FeaturePool`]; the fuzzing loop samples a few of them, asks a
//! completion model for glue features that bind them into a coherent
//! [`FeatureGroup`], asks a second model to realize the group as a C/C++
//! program, runs the target compiler on it and feeds coverage gains back into
//! a queue of novel features.
//!
//! Module map:
//!
//! * [`feature`] - features, groups, the pool and the novel-feature queue
//! * [`extraction`] - bug artifact sources and the extraction prompt/parser
//! * [`synthesis`] - group completion and masked-prediction training data
//! * [`instantiation`] - program instantiation prompt and code extraction
//! * [`harness`] - compiler execution, crash signatures, coverage maps
//! * [`campaign`] - the coverage-guided feedback loop and its state
//! * [`metrics`] - coherence (redundancy/diameter), Jaccard, validity stats
//! * [`llm`] - chat/embedding transport with record/replay
//! * [`config`] - declarative campaign configuration

pub mod campaign;
pub mod config;
pub mod extraction;
pub mod feature;
pub mod harness;
mod hashing;
mod template;
pub mod instantiation;
pub mod listparse;
pub mod llm;
pub mod metrics;
pub mod scalar;
pub mod synthesis;

pub use campaign::{CampaignState, IterationReport, Stats};
pub use feature::{Feature, FeatureGroup, FeatureId, FeaturePool, NovelQueue, Origin};
pub use harness::{CompileOutcome, CoverageMap, CrashSignature, OutcomeStatus};
pub use scalar::Scalar;

/// Embedding vector over `f64`, the precision used by the CLI and reports.
pub type EmbeddingVector = metrics::Embedding<f64>;
/// Single-precision embedding, for providers that emit `f32`.
pub type EmbeddingVectorF32 = metrics::Embedding<f32>;
/// Coherence score over `f64`.
pub type CoherenceScore = metrics::Coherence<f64>;
