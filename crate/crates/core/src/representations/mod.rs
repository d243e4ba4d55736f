//! Text-to-vector pipeline: tokenization, TF-IDF, external vector ingestion,
//! and WTMF embeddings.
//!
//! Response text enters as raw strings and leaves as a [`VectorSet`], the one
//! currency every downstream consumer (classifier, clustering) accepts.
//! Vectors come from three sources of equal standing: internal TF-IDF,
//! external files in the TSV vector schema (for high-dimension neural
//! representations produced elsewhere), and the WTMF factorizer in
//! [`wtmf`].

pub mod wtmf;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::ItemId;

#[derive(Debug, Error)]
pub enum ReprError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot build a vocabulary from an empty corpus slice")]
    EmptyCorpus,
    #[error("vocabulary is empty after pruning (min_df {min_df}); lower min_df")]
    EmptyVocabulary { min_df: usize },
    #[error("{path}: missing '#dim=<D>' header line")]
    MissingHeader { path: String },
    #[error("{path}:{line}: row has {got} values, expected {expected}")]
    RowLength {
        path: String,
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error("{path}:{line}: non-finite vector component")]
    NonFinite { path: String, line: usize },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("file dimension {got} does not match expected {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("duplicate vector for student {student_id} task {task_id}")]
    DuplicateEntry { student_id: String, task_id: String },
    #[error("vector for {item} has {got} components, set dimension is {expected}")]
    WrongDim {
        item: String,
        expected: usize,
        got: usize,
    },
    #[error("vector for {item} has a non-finite component")]
    NonFiniteInsert { item: String },
}

fn io_err(path: &Path, source: std::io::Error) -> ReprError {
    ReprError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Lowercase, then split on maximal runs of non-alphanumeric characters.
///
/// Lowercasing happens first so that characters whose lowercase form includes
/// combining marks are still reduced to alphanumeric-only tokens, which makes
/// the function idempotent on its own joined output.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

/// Token inventory with dense indices and document frequencies.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
    doc_freq: Vec<u64>,
    n_docs: u64,
}

impl Vocabulary {
    /// Build from documents, keeping tokens that appear in at least `min_df`
    /// documents. Tokens are indexed in lexicographic order.
    pub fn build<'a, I>(docs: I, min_df: usize) -> Result<Self, ReprError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut df: BTreeMap<String, u64> = BTreeMap::new();
        let mut n_docs = 0u64;
        for text in docs {
            n_docs += 1;
            let seen: BTreeSet<String> = tokenize(text).into_iter().collect();
            for token in seen {
                *df.entry(token).or_insert(0) += 1;
            }
        }
        if n_docs == 0 {
            return Err(ReprError::EmptyCorpus);
        }
        let mut tokens = Vec::new();
        let mut doc_freq = Vec::new();
        let mut index = BTreeMap::new();
        for (token, freq) in df {
            if freq as usize >= min_df.max(1) {
                index.insert(token.clone(), tokens.len());
                tokens.push(token);
                doc_freq.push(freq);
            }
        }
        Ok(Self {
            tokens,
            index,
            doc_freq,
            n_docs,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, idx: usize) -> &str {
        &self.tokens[idx]
    }

    pub fn doc_freq(&self, idx: usize) -> u64 {
        self.doc_freq[idx]
    }

    pub fn n_docs(&self) -> u64 {
        self.n_docs
    }

    /// Smoothed inverse document frequency: `ln((1+N)/(1+df)) + 1`.
    ///
    /// The additive 1 keeps tokens present in every document (df = N) at
    /// positive weight, so a single-document corpus still yields nonzero
    /// vectors whose direction equals the normalized term counts.
    pub fn idf(&self, idx: usize) -> f64 {
        ((1.0 + self.n_docs as f64) / (1.0 + self.doc_freq[idx] as f64)).ln() + 1.0
    }

    /// Sparse in-vocabulary term counts of one text.
    pub fn term_counts(&self, text: &str) -> BTreeMap<usize, u64> {
        let mut counts = BTreeMap::new();
        for token in tokenize(text) {
            if let Some(idx) = self.index_of(&token) {
                *counts.entry(idx).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Dense TF-IDF column for one text, L2-normalized. All-zero (no
    /// in-vocabulary tokens) stays all-zero.
    pub fn tfidf_column(&self, text: &str) -> Vec<f64> {
        let mut column = vec![0.0; self.len()];
        for (idx, count) in self.term_counts(text) {
            column[idx] = count as f64 * self.idf(idx);
        }
        let norm = column.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut column {
                *v /= norm;
            }
        }
        column
    }
}

/// Where a vector set came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Tfidf,
    External,
    Wtmf,
}

/// Fixed-dimension vectors keyed by item, in canonical order.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorSet {
    dim: usize,
    provenance: Provenance,
    entries: BTreeMap<ItemId, Vec<f64>>,
}

impl VectorSet {
    pub fn new(dim: usize, provenance: Provenance) -> Self {
        Self {
            dim,
            provenance,
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, item: ItemId, vector: Vec<f64>) -> Result<(), ReprError> {
        if vector.len() != self.dim {
            return Err(ReprError::WrongDim {
                item: item.to_string(),
                expected: self.dim,
                got: vector.len(),
            });
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(ReprError::NonFiniteInsert {
                item: item.to_string(),
            });
        }
        if self.entries.contains_key(&item) {
            return Err(ReprError::DuplicateEntry {
                student_id: item.student_id,
                task_id: item.task_id,
            });
        }
        self.entries.insert(item, vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, item: &ItemId) -> Option<&[f64]> {
        self.entries.get(item).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ItemId, &[f64])> {
        self.entries.iter().map(|(id, v)| (id, v.as_slice()))
    }

    /// Write in the TSV vector schema: `#dim=<D>` header, then one row per
    /// item with canonical shortest round-trip float formatting.
    pub fn write(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "#dim={}", self.dim)?;
        for (item, vector) in &self.entries {
            let mut line = String::new();
            write!(line, "{}\t{}", item.student_id, item.task_id).expect("string write");
            for v in vector {
                write!(line, "\t{v}").expect("string write");
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ReprError> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| io_err(path, e))?;
        self.write(file).map_err(|e| io_err(path, e))
    }
}

/// Read a TSV vector file, optionally enforcing a dimension. Provenance of
/// loaded sets is always `external`.
pub fn load_vectors(
    path: impl AsRef<Path>,
    expected_dim: Option<usize>,
) -> Result<VectorSet, ReprError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();

    let header = match lines.next() {
        Some((_, line)) => line.map_err(|e| io_err(path, e))?,
        None => {
            return Err(ReprError::MissingHeader {
                path: path.display().to_string(),
            })
        }
    };
    let dim: usize = header
        .strip_prefix("#dim=")
        .and_then(|d| d.parse().ok())
        .filter(|d| *d > 0)
        .ok_or_else(|| ReprError::MissingHeader {
            path: path.display().to_string(),
        })?;
    if let Some(expected) = expected_dim {
        if dim != expected {
            return Err(ReprError::DimMismatch { expected, got: dim });
        }
    }

    let mut set = VectorSet::new(dim, Provenance::External);
    for (idx, line) in lines {
        let line = line.map_err(|e| io_err(path, e))?;
        let line_no = idx + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != dim + 2 {
            return Err(ReprError::RowLength {
                path: path.display().to_string(),
                line: line_no,
                expected: dim,
                got: fields.len().saturating_sub(2),
            });
        }
        let mut vector = Vec::with_capacity(dim);
        for raw in &fields[2..] {
            let value: f64 = raw.parse().map_err(|e| ReprError::Parse {
                path: path.display().to_string(),
                line: line_no,
                message: format!("bad float {raw:?}: {e}"),
            })?;
            if !value.is_finite() {
                return Err(ReprError::NonFinite {
                    path: path.display().to_string(),
                    line: line_no,
                });
            }
            vector.push(value);
        }
        set.insert(ItemId::new(fields[0], fields[1]), vector)?;
    }
    Ok(set)
}

/// TF-IDF vectorization parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TfidfConfig {
    /// Minimum document frequency for a token to enter the vocabulary.
    pub min_df: usize,
}

impl Default for TfidfConfig {
    fn default() -> Self {
        Self { min_df: 2 }
    }
}

/// Output of [`tfidf_vectorize`]: the vocabulary actually used, the vectors,
/// and the items whose text had no in-vocabulary tokens (zero vectors).
#[derive(Clone, Debug)]
pub struct TfidfResult {
    pub vocabulary: Vocabulary,
    pub vectors: VectorSet,
    pub empty_docs: BTreeSet<ItemId>,
}

/// Vectorize documents with TF-IDF, building a vocabulary from the slice or
/// reusing a given one (for dev/test slices). Out-of-vocabulary tokens are
/// ignored under a reused vocabulary.
pub fn tfidf_vectorize(
    docs: &BTreeMap<ItemId, String>,
    vocabulary: Option<&Vocabulary>,
    config: &TfidfConfig,
) -> Result<TfidfResult, ReprError> {
    let vocabulary = match vocabulary {
        Some(v) => v.clone(),
        None => Vocabulary::build(docs.values().map(String::as_str), config.min_df)?,
    };
    let mut vectors = VectorSet::new(vocabulary.len(), Provenance::Tfidf);
    let mut empty_docs = BTreeSet::new();
    for (item, text) in docs {
        let column = vocabulary.tfidf_column(text);
        if column.iter().all(|v| *v == 0.0) {
            empty_docs.insert(item.clone());
        }
        vectors.insert(item.clone(), column)?;
    }
    Ok(TfidfResult {
        vocabulary,
        vectors,
        empty_docs,
    })
}
