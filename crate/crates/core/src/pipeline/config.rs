//! Run configuration: one file holding every path, parameter, and seed.
//!
//! TOML is the primary format; files ending in `.json` are parsed as JSON
//! with the same shape. Absent sections disable their stages, so an
//! agreement-only or split-only run is just a shorter file. No stage ever
//! draws entropy outside this file: seeds left unset are derived from
//! `master_seed` with [`super::derive_seed`].

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::TrainConfig;
use crate::clustering::{Algorithm, ClusterConfig, Distance};
use crate::corpus::{LabelSource, RaterKey, SplitProportions};
use crate::representations::wtmf::WtmfConfig;
use crate::representations::TfidfConfig;

use super::PipelineError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Root of all derived stage seeds.
    #[serde(default)]
    pub master_seed: u64,
    pub paths: PathsSection,
    #[serde(default)]
    pub filter: Option<FilterSection>,
    #[serde(default)]
    pub allocation: Option<AllocationSection>,
    #[serde(default)]
    pub split: Option<SplitSection>,
    #[serde(default)]
    pub representation: Option<RepresentationSection>,
    #[serde(default)]
    pub classifier: Option<ClassifierSection>,
    #[serde(default)]
    pub agreement: Option<AgreementSection>,
    #[serde(default)]
    pub clustering: Option<ClusteringSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    pub responses: PathBuf,
    #[serde(default)]
    pub scores: Option<PathBuf>,
    /// Precomputed vectors (TSV), used when `representation.kind = "external"`.
    #[serde(default)]
    pub vectors: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Earnest-response gate applied right after ingest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    pub min_tokens: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllocationSection {
    pub raters: Vec<String>,
    pub pair_size: usize,
    pub consensus_size: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub pinned: Option<PinnedSection>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PinnedSection {
    pub rater_id: String,
    pub required: Vec<String>,
    pub min_overlap: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    /// Train, dev, test, reserve fractions; must sum to 1.
    #[serde(default = "default_proportions")]
    pub proportions: [f64; 4],
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_proportions() -> [f64; 4] {
    SplitProportions::default().0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RepresentationKind {
    Tfidf,
    Wtmf,
    External,
}

impl RepresentationKind {
    pub fn name(self) -> &'static str {
        match self {
            RepresentationKind::Tfidf => "tfidf",
            RepresentationKind::Wtmf => "wtmf",
            RepresentationKind::External => "external",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepresentationSection {
    pub kind: RepresentationKind,
    #[serde(default = "default_min_df")]
    pub min_df: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_w_missing")]
    pub w_missing: f64,
    #[serde(default = "default_sweeps")]
    pub sweeps: usize,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl RepresentationSection {
    pub fn tfidf_config(&self) -> TfidfConfig {
        TfidfConfig {
            min_df: self.min_df,
        }
    }

    pub fn wtmf_config(&self) -> WtmfConfig {
        WtmfConfig {
            dim: self.dim,
            lambda: self.lambda,
            w_missing: self.w_missing,
            sweeps: self.sweeps,
        }
    }
}

fn default_min_df() -> usize {
    TfidfConfig::default().min_df
}

fn default_dim() -> usize {
    WtmfConfig::default().dim
}

fn default_lambda() -> f64 {
    WtmfConfig::default().lambda
}

fn default_w_missing() -> f64 {
    WtmfConfig::default().w_missing
}

fn default_sweeps() -> usize {
    WtmfConfig::default().sweeps
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSection {
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_l2_penalty")]
    pub l2_penalty: f64,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Rater id under which test-set predictions join the corpus as a peer.
    #[serde(default = "default_machine_rater_id")]
    pub machine_rater_id: String,
    /// Gold labels for training and evaluation.
    #[serde(default)]
    pub labels: LabelSource,
}

impl ClassifierSection {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            l2_penalty: self.l2_penalty,
            max_epochs: self.max_epochs,
            tolerance: self.tolerance,
            seed,
        }
    }
}

fn default_learning_rate() -> f64 {
    TrainConfig::default().learning_rate
}

fn default_l2_penalty() -> f64 {
    TrainConfig::default().l2_penalty
}

fn default_max_epochs() -> usize {
    TrainConfig::default().max_epochs
}

fn default_tolerance() -> f64 {
    TrainConfig::default().tolerance
}

fn default_machine_rater_id() -> String {
    "machine".to_string()
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgreementSection {
    /// Pairwise comparisons as `id[@epoch]:id[@epoch]` tokens, e.g.
    /// `"A:C"` or `"A@2015:A"`. One table row per pair, in this order.
    #[serde(default)]
    pub pairs: Vec<String>,
    /// Rater groups for Fleiss' kappa, e.g. `[["A", "C", "D"]]`.
    #[serde(default)]
    pub groups: Vec<Vec<String>>,
}

impl AgreementSection {
    pub fn parsed_pairs(&self) -> Result<Vec<(RaterKey, RaterKey)>, PipelineError> {
        self.pairs
            .iter()
            .map(|token| {
                token
                    .split_once(':')
                    .map(|(a, b)| (RaterKey::parse(a), RaterKey::parse(b)))
                    .ok_or_else(|| PipelineError::Config {
                        message: format!("agreement pair {token:?} is not of the form A:B"),
                    })
            })
            .collect()
    }

    pub fn parsed_groups(&self) -> Vec<Vec<RaterKey>> {
        self.groups
            .iter()
            .map(|group| group.iter().map(|t| RaterKey::parse(t)).collect())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusteringSection {
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    /// Cluster count applied to every stratum; unset picks a size-based
    /// default per stratum.
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default = "default_distance")]
    pub distance: Distance,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Two or more entries turn on rerun consistency over these seeds.
    #[serde(default)]
    pub consistency_seeds: Vec<u64>,
    /// Per-stratum override keyed `task/class`, winning over `k`.
    #[serde(default)]
    pub k_overrides: BTreeMap<String, usize>,
    /// How responses are assigned to correctness classes for strata.
    #[serde(default)]
    pub labels: LabelSource,
}

impl ClusteringSection {
    pub fn cluster_config(&self, k: Option<usize>) -> ClusterConfig {
        ClusterConfig {
            algorithm: self.algorithm,
            k,
            distance: self.distance,
            max_iter: self.max_iter,
            tol: self.tol,
        }
    }
}

fn default_algorithm() -> Algorithm {
    ClusterConfig::default().algorithm
}

fn default_distance() -> Distance {
    ClusterConfig::default().distance
}

fn default_max_iter() -> usize {
    ClusterConfig::default().max_iter
}

fn default_tol() -> f64 {
    ClusterConfig::default().tol
}

/// Parse a config file, TOML by default, JSON for `.json` paths.
pub fn load_config(path: impl AsRef<Path>) -> Result<PipelineConfig, PipelineError> {
    let path = path.as_ref();
    let bad = |message: String| PipelineError::Config {
        message: format!("{}: {message}", path.display()),
    };
    let text = fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
    let config: PipelineConfig = if path
        .extension()
        .is_some_and(|ext| ext.eq_ignore_ascii_case("json"))
    {
        serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?
    } else {
        toml::from_str(&text).map_err(|e| bad(e.to_string()))?
    };
    config.validate()?;
    Ok(config)
}

impl PipelineConfig {
    /// Cross-section consistency checks; individual stages validate their own
    /// numeric parameters when they run.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |message: String| Err(PipelineError::Config { message });

        if let Some(split) = &self.split {
            if let Err(e) = SplitProportions(split.proportions).validate() {
                return bad(e.to_string());
            }
        }
        if let Some(representation) = &self.representation {
            if representation.kind == RepresentationKind::External && self.paths.vectors.is_none() {
                return bad("representation.kind = \"external\" needs paths.vectors".into());
            }
        }
        if let Some(agreement) = &self.agreement {
            agreement.parsed_pairs()?;
            if self.paths.scores.is_none() {
                return bad("the agreement stage needs paths.scores".into());
            }
        }
        if self.classifier.is_some() {
            if self.representation.is_none() {
                return bad("the classifier stage needs a [representation] section".into());
            }
            if self.split.is_none() {
                return bad("the classifier stage needs a [split] section".into());
            }
            if self.paths.scores.is_none() {
                return bad("the classifier stage needs paths.scores for gold labels".into());
            }
        }
        if let Some(clustering) = &self.clustering {
            if self.representation.is_none() {
                return bad("the clustering stage needs a [representation] section".into());
            }
            if self.paths.scores.is_none() {
                return bad("the clustering stage needs paths.scores for strata".into());
            }
            if clustering.consistency_seeds.len() == 1 {
                return bad("clustering.consistency_seeds needs at least 2 seeds".into());
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialization")
    }
}
