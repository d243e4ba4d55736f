//! Scoring-reliability toolkit for short-answer tasks.
//!
//! `scorekit` covers the full loop of a human–machine scoring study:
//!
//! * **Corpus handling** — load free-text responses (JSON-lines) and ordinal
//!   scores (CSV), filter non-earnest attempts, and split items into
//!   train/dev/test/reserve partitions with agreement-aware test selection
//!   ([`corpus`]).
//! * **Rater allocation** — generate assignment designs where every rater pair
//!   shares an exact intersection and all core raters share a consensus block,
//!   with optional pinned-subset constraints ([`allocation`]).
//! * **Agreement statistics** — confusion matrices, percent agreement and
//!   discrepancy profiles, Cohen's kappa, quadratic weighted kappa, Fleiss'
//!   kappa, and heuristic interpretation bands ([`agreement`]).
//! * **Representations** — tokenization, TF-IDF vectors, ingestion of external
//!   embedding files, and low-dimension static embeddings via weighted matrix
//!   factorization trained by alternating least squares ([`representations`]).
//! * **Algorithmic rater** — a softmax-regression head over any vector set,
//!   whose predictions convert to score records so the machine is evaluated as
//!   a peer of the human raters ([`classifier`]).
//! * **Clustering** — per (task, class) K-means / K-medoids with a
//!   rerun-consistency score (the unadjusted Rand index over seed pairs)
//!   ([`clustering`]).
//! * **Pipeline** — a configuration-driven orchestrator behind the `scorekit`
//!   CLI; every random draw descends from explicit seeds ([`pipeline`]).
//!
//! All statistics are computed at full precision and rounded only for
//! presentation. Corpus values are immutable after construction and safe to
//! share across threads.

pub mod agreement;
pub mod allocation;
pub mod classifier;
pub mod clustering;
pub mod corpus;
pub mod pipeline;
pub mod representations;

pub use agreement::{Band, ConfusionMatrix, KappaKind, KappaValue};
pub use corpus::{Corpus, ItemId, Label, Partition, RaterKey, SplitAssignment};
pub use representations::VectorSet;

/// Toolkit version reported in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
