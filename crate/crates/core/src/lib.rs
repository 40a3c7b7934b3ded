//! Selective text sanitization under a customized exponential mechanism.
//!
//! The vocabulary of an embedding file is partitioned into small output sets
//! of semantically close tokens. Tokens chosen as sensitive (by an importance
//! ranking) are replaced by a draw from their own output set, with
//! probabilities proportional to `exp(ε·u/2)` for a normalized closeness
//! score `u`. Any two tokens sharing an output set are then
//! ε-indistinguishable.
//!
//! Module map:
//! - [`vocab`]: embedding files, vocabulary, Euclidean and cosine measures
//! - [`mapping`]: output-set construction
//! - [`scoring`]: per-token normalized scores and measured sensitivity
//! - [`sampler`]: exponential-mechanism sampling and exact ratio audits
//! - [`importance`]: importance files and top/bottom-p% sensitive lists
//! - [`text`], [`corpus`], [`sanitizer`]: tokenization, corpus I/O and the
//!   replacement pass
//! - [`evaluation`]: sweeps, table audits and attack-report ingestion

pub mod cache;
pub mod corpus;
pub mod digest;
pub mod error;
pub mod evaluation;
pub mod importance;
pub mod manifest;
pub mod mapping;
pub mod sampler;
pub mod sanitizer;
pub mod scoring;
pub mod text;
pub mod vocab;

pub use cache::MappingCache;
pub use corpus::{Document, Record};
pub use error::{Error, Result};
pub use importance::{select_sensitive, ImportanceRecord, Selection, SensitiveList};
pub use mapping::{build_mapping, MappingTable, PivotOrder};
pub use sampler::{audit_dp, distribution, sample, SamplerConfig, TokenDistribution};
pub use sanitizer::{sanitize, SanitizationReport, SanitizerConfig, Strategy};
pub use scoring::{build_scores, sensitivity, ScoringTable};
pub use vocab::{distance, load_embeddings, EmbeddingMatrix, Metric, Vocabulary};
