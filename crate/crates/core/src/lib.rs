//! Lexical semantic change detection from bags of lexical substitutes.
//!
//! Usages of each target word are sampled from an old and a new corpus,
//! rewritten with dynamic patterns into masked prompts, and described by the
//! substitutes a masked language model proposes for them. Substitutes are
//! normalized, combined across patterns and turned into sparse
//! bag-of-substitutes vectors. Graded change is the average pairwise cosine
//! distance between old and new vectors; binary change, sense gain and sense
//! loss follow from thresholds on the same distances.
//!
//! The expensive model side lives outside this crate: substitutes arrive
//! through a [`provider::SubstituteProvider`] backed by a file, an HTTP
//! sidecar or a synthetic generator.

pub mod ablation;
pub mod bos;
pub mod config;
pub mod corpus;
pub mod detect;
pub mod error;
pub mod eval;
pub mod jsonl;
pub mod patterns;
pub mod pipeline;
pub mod postproc;
pub mod provider;
pub mod rank;
pub mod rng;

pub use bos::{BosVector, DistanceMatrix, WordVocabulary};
pub use corpus::{BalancedSample, CorpusIndex, Period, TokenizedSentence, UsageExample};
pub use detect::{BinaryVerdict, DetectionParams, DiscriminativeReport, GradedScore, Method};
pub use error::{Error, Result};
pub use patterns::{MaskedPrompt, Pattern, PatternSet};
pub use postproc::{CombinationSpec, NormalizedDistribution, Stemmer};
pub use provider::{SubstituteDistribution, SubstituteProvider};
