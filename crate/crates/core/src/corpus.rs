//! Response/score corpus: loading, validation, filtering, and partitioning.
//!
//! A [`Corpus`] joins free-text responses (one per `(student_id, task_id)`)
//! with ordinal score records from any number of raters and scoring epochs.
//! All collections are kept in canonical `(student_id, task_id)` order so
//! every downstream statistic is order-stable, and a corpus is immutable once
//! constructed: filtering and score attachment return new values.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::representations::tokenize;

/// Number of ordinal categories on the scoring rubric (0 incorrect, 1 partial, 2 correct).
pub const LABEL_SCALE: usize = 3;

/// Errors raised while building or partitioning a corpus.
#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {message}")]
    MalformedLine {
        path: String,
        line: usize,
        message: String,
    },
    #[error("duplicate response for student {student_id} task {task_id}")]
    DuplicateResponse { student_id: String, task_id: String },
    #[error(
        "duplicate score from rater {rater_id} (epoch {epoch}) for student {student_id} task {task_id}"
    )]
    DuplicateScore {
        rater_id: String,
        epoch: String,
        student_id: String,
        task_id: String,
    },
    #[error("label {value} outside the 0..={} rubric scale", LABEL_SCALE - 1)]
    LabelOutOfRange { value: i64 },
    #[error("score references unknown response: student {student_id} task {task_id}")]
    OrphanScore { student_id: String, task_id: String },
    #[error("split proportions sum to {sum}, expected 1 within 1e-9")]
    BadProportions { sum: f64 },
    #[error("rating table needs at least 2 raters, got {got}")]
    NotEnoughRaters { got: usize },
    #[error("unknown partition name {0:?}")]
    UnknownPartition(String),
}

fn io_err(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Identity of one task-response: a student crossed with a task.
///
/// Ordering is lexicographic by `student_id`, then `task_id`; this is the
/// canonical item order used throughout the toolkit.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ItemId {
    pub student_id: String,
    pub task_id: String,
}

impl ItemId {
    pub fn new(student_id: impl Into<String>, task_id: impl Into<String>) -> Self {
        Self {
            student_id: student_id.into(),
            task_id: task_id.into(),
        }
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.student_id, self.task_id)
    }
}

/// Ordinal rubric label on the 0/1/2 scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub struct Label(u8);

impl Label {
    pub fn new(value: i64) -> Result<Self, CorpusError> {
        if (0..LABEL_SCALE as i64).contains(&value) {
            Ok(Self(value as u8))
        } else {
            Err(CorpusError::LabelOutOfRange { value })
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }

    /// Label as a dense category index, for confusion matrices and tables.
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl TryFrom<i64> for Label {
    type Error = CorpusError;
    fn try_from(value: i64) -> Result<Self, Self::Error> {
        Label::new(value)
    }
}

impl From<Label> for i64 {
    fn from(label: Label) -> i64 {
        i64::from(label.0)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A rater identity within one scoring session.
///
/// `epoch` is a free-form tag distinguishing scoring sessions (for example
/// `"2015"` vs `"current"`); the same person scoring twice is two rater keys.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RaterKey {
    pub rater_id: String,
    pub epoch: String,
}

impl RaterKey {
    /// Conventional epoch tag for the present scoring session. Raters in this
    /// epoch display as their bare id in report tables.
    pub const DEFAULT_EPOCH: &'static str = "current";

    pub fn new(rater_id: impl Into<String>, epoch: impl Into<String>) -> Self {
        Self {
            rater_id: rater_id.into(),
            epoch: epoch.into(),
        }
    }

    /// Rater in the default `"current"` epoch.
    pub fn current(rater_id: impl Into<String>) -> Self {
        Self::new(rater_id, Self::DEFAULT_EPOCH)
    }

    /// Parse `"A"` or `"A@2015"` (id, then optional `@epoch`).
    pub fn parse(token: &str) -> Self {
        match token.split_once('@') {
            Some((id, epoch)) => Self::new(id, epoch),
            None => Self::current(token),
        }
    }
}

impl fmt::Display for RaterKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.epoch == Self::DEFAULT_EPOCH {
            write!(f, "{}", self.rater_id)
        } else {
            write!(f, "{} ({})", self.rater_id, self.epoch)
        }
    }
}

/// One student's free-text answer to one task.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Response {
    pub student_id: String,
    pub task_id: String,
    pub text: String,
}

impl Response {
    pub fn id(&self) -> ItemId {
        ItemId::new(self.student_id.clone(), self.task_id.clone())
    }
}

/// One rater's ordinal label for one response at one epoch.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub rater_id: String,
    pub student_id: String,
    pub task_id: String,
    pub label: Label,
    pub epoch: String,
}

impl ScoreRecord {
    pub fn item(&self) -> ItemId {
        ItemId::new(self.student_id.clone(), self.task_id.clone())
    }

    pub fn rater(&self) -> RaterKey {
        RaterKey::new(self.rater_id.clone(), self.epoch.clone())
    }
}

/// Immutable collection of responses and their score records.
///
/// Every score refers to a loaded response, and iteration over either
/// collection is in canonical order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Corpus {
    responses: BTreeMap<ItemId, String>,
    scores: BTreeMap<(RaterKey, ItemId), Label>,
}

/// What [`Corpus::earnest_filter`] removed and why.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FilterReport {
    pub min_tokens: usize,
    pub responses_before: usize,
    pub responses_kept: usize,
    pub responses_removed: usize,
    pub scores_removed: usize,
}

/// Aligned label sequences for the items scored by both raters of a pair.
///
/// Items are in canonical order; `labels_a[i]` and `labels_b[i]` belong to
/// `items[i]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairedLabels {
    pub items: Vec<ItemId>,
    pub labels_a: Vec<usize>,
    pub labels_b: Vec<usize>,
}

impl PairedLabels {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Items × category count table for consensus statistics.
///
/// Only items scored by every listed rater are included (complete-case
/// filtering); each row sums to the rater count.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RatingTable {
    pub k: usize,
    pub raters: Vec<RaterKey>,
    pub items: Vec<ItemId>,
    pub rows: Vec<Vec<u64>>,
    /// Items dropped because at least one listed rater did not score them.
    pub dropped_items: usize,
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    /// Load a responses-only corpus from a JSON-lines file.
    ///
    /// One object per line with keys `student_id`, `task_id`, `text`. Blank
    /// lines are rejected as malformed; duplicates of `(student_id, task_id)`
    /// are errors.
    pub fn load_responses(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| io_err(path, e))?;
        let reader = BufReader::new(file);
        let mut corpus = Corpus::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| io_err(path, e))?;
            let record: Response =
                serde_json::from_str(&line).map_err(|e| CorpusError::MalformedLine {
                    path: path.display().to_string(),
                    line: idx + 1,
                    message: e.to_string(),
                })?;
            corpus.insert_response(record)?;
        }
        Ok(corpus)
    }

    /// Attach scores from a CSV file (`rater_id,student_id,task_id,label,epoch`).
    ///
    /// Every score must reference a loaded response; labels outside the rubric
    /// scale and duplicate `(rater, student, task, epoch)` keys are errors.
    pub fn load_scores(self, path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| io_err(path, e))?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(file);

        #[derive(Deserialize)]
        struct Row {
            rater_id: String,
            student_id: String,
            task_id: String,
            label: i64,
            epoch: String,
        }

        let mut corpus = self;
        for (idx, row) in reader.deserialize::<Row>().enumerate() {
            let row = row.map_err(|e| CorpusError::MalformedLine {
                path: path.display().to_string(),
                line: idx + 2, // header is line 1
                message: e.to_string(),
            })?;
            corpus.insert_score(ScoreRecord {
                rater_id: row.rater_id,
                student_id: row.student_id,
                task_id: row.task_id,
                label: Label::new(row.label)?,
                epoch: row.epoch,
            })?;
        }
        Ok(corpus)
    }

    pub fn insert_response(&mut self, response: Response) -> Result<(), CorpusError> {
        let id = response.id();
        if self.responses.contains_key(&id) {
            return Err(CorpusError::DuplicateResponse {
                student_id: id.student_id,
                task_id: id.task_id,
            });
        }
        self.responses.insert(id, response.text);
        Ok(())
    }

    pub fn insert_score(&mut self, record: ScoreRecord) -> Result<(), CorpusError> {
        let item = record.item();
        if !self.responses.contains_key(&item) {
            return Err(CorpusError::OrphanScore {
                student_id: item.student_id,
                task_id: item.task_id,
            });
        }
        let key = (record.rater(), item);
        if self.scores.contains_key(&key) {
            return Err(CorpusError::DuplicateScore {
                rater_id: key.0.rater_id,
                epoch: key.0.epoch,
                student_id: key.1.student_id,
                task_id: key.1.task_id,
            });
        }
        self.scores.insert(key, record.label);
        Ok(())
    }

    /// Add a batch of score records (for example an algorithmic rater's
    /// predictions) under the same validation as file loading.
    pub fn add_scores(
        &mut self,
        records: impl IntoIterator<Item = ScoreRecord>,
    ) -> Result<(), CorpusError> {
        for record in records {
            self.insert_score(record)?;
        }
        Ok(())
    }

    pub fn response_count(&self) -> usize {
        self.responses.len()
    }

    pub fn score_count(&self) -> usize {
        self.scores.len()
    }

    /// Responses in canonical order.
    pub fn responses(&self) -> impl Iterator<Item = (&ItemId, &str)> {
        self.responses.iter().map(|(id, text)| (id, text.as_str()))
    }

    pub fn text(&self, item: &ItemId) -> Option<&str> {
        self.responses.get(item).map(String::as_str)
    }

    pub fn contains_item(&self, item: &ItemId) -> bool {
        self.responses.contains_key(item)
    }

    /// All item ids in canonical order.
    pub fn items(&self) -> impl Iterator<Item = &ItemId> {
        self.responses.keys()
    }

    /// Distinct task ids, sorted.
    pub fn tasks(&self) -> BTreeSet<String> {
        self.responses.keys().map(|id| id.task_id.clone()).collect()
    }

    /// Distinct student ids, sorted.
    pub fn students(&self) -> BTreeSet<String> {
        self.responses
            .keys()
            .map(|id| id.student_id.clone())
            .collect()
    }

    /// Score records in canonical (rater, item) order.
    pub fn scores(&self) -> impl Iterator<Item = ScoreRecord> + '_ {
        self.scores
            .iter()
            .map(|((rater, item), label)| ScoreRecord {
                rater_id: rater.rater_id.clone(),
                student_id: item.student_id.clone(),
                task_id: item.task_id.clone(),
                label: *label,
                epoch: rater.epoch.clone(),
            })
    }

    /// Distinct rater keys present in the score collection.
    pub fn raters(&self) -> BTreeSet<RaterKey> {
        self.scores.keys().map(|(rater, _)| rater.clone()).collect()
    }

    pub fn label(&self, rater: &RaterKey, item: &ItemId) -> Option<Label> {
        self.scores.get(&(rater.clone(), item.clone())).copied()
    }

    /// All of one rater's labels, keyed by item.
    pub fn labels_of(&self, rater: &RaterKey) -> BTreeMap<ItemId, Label> {
        self.scores
            .iter()
            .filter(|((r, _), _)| r == rater)
            .map(|((_, item), label)| (item.clone(), *label))
            .collect()
    }

    /// Retain responses with at least `min_tokens` tokens; scores of removed
    /// responses are dropped.
    ///
    /// Idempotent: filtering twice at the same threshold equals filtering once.
    pub fn earnest_filter(&self, min_tokens: usize) -> (Corpus, FilterReport) {
        let mut kept = Corpus::new();
        for (id, text) in &self.responses {
            if tokenize(text).len() >= min_tokens {
                kept.responses.insert(id.clone(), text.clone());
            }
        }
        let mut scores_removed = 0usize;
        for ((rater, item), label) in &self.scores {
            if kept.responses.contains_key(item) {
                kept.scores.insert((rater.clone(), item.clone()), *label);
            } else {
                scores_removed += 1;
            }
        }
        let report = FilterReport {
            min_tokens,
            responses_before: self.responses.len(),
            responses_kept: kept.responses.len(),
            responses_removed: self.responses.len() - kept.responses.len(),
            scores_removed,
        };
        (kept, report)
    }

    /// Aligned label sequences over the items scored by both raters.
    ///
    /// The intersection may be empty. Output order is canonical regardless of
    /// insertion order, so `paired_labels(a, b)` and `paired_labels(b, a)`
    /// cover the same items with the sequences swapped.
    pub fn paired_labels(&self, rater_a: &RaterKey, rater_b: &RaterKey) -> PairedLabels {
        let labels_a = self.labels_of(rater_a);
        let labels_b = self.labels_of(rater_b);
        let mut out = PairedLabels {
            items: Vec::new(),
            labels_a: Vec::new(),
            labels_b: Vec::new(),
        };
        for (item, a) in &labels_a {
            if let Some(b) = labels_b.get(item) {
                out.items.push(item.clone());
                out.labels_a.push(a.index());
                out.labels_b.push(b.index());
            }
        }
        out
    }

    /// Items × category count table over the items scored by **all** listed
    /// raters. Rows sum to the rater count; incomplete items are dropped and
    /// counted in the report.
    pub fn rating_table(&self, raters: &[RaterKey], k: usize) -> Result<RatingTable, CorpusError> {
        let raters: Vec<RaterKey> = {
            let mut seen = BTreeSet::new();
            raters
                .iter()
                .filter(|r| seen.insert((*r).clone()))
                .cloned()
                .collect()
        };
        if raters.len() < 2 {
            return Err(CorpusError::NotEnoughRaters { got: raters.len() });
        }
        let per_rater: Vec<BTreeMap<ItemId, Label>> =
            raters.iter().map(|r| self.labels_of(r)).collect();
        let candidate_items: BTreeSet<ItemId> =
            per_rater.iter().flat_map(|m| m.keys().cloned()).collect();

        let mut items = Vec::new();
        let mut rows = Vec::new();
        let mut dropped = 0usize;
        for item in candidate_items {
            let mut row = vec![0u64; k];
            let mut complete = true;
            for labels in &per_rater {
                match labels.get(&item) {
                    Some(label) => row[label.index()] += 1,
                    None => {
                        complete = false;
                        break;
                    }
                }
            }
            if complete {
                items.push(item);
                rows.push(row);
            } else {
                dropped += 1;
            }
        }
        Ok(RatingTable {
            k,
            raters,
            items,
            rows,
            dropped_items: dropped,
        })
    }

    /// Write responses as canonical JSON-lines (items in canonical order,
    /// fixed key order).
    pub fn write_responses(&self, mut w: impl Write) -> std::io::Result<()> {
        for (id, text) in &self.responses {
            let record = Response {
                student_id: id.student_id.clone(),
                task_id: id.task_id.clone(),
                text: text.clone(),
            };
            let line = serde_json::to_string(&record).expect("response serialization");
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    /// Write scores as canonical CSV (sorted by rater, epoch, then item).
    pub fn write_scores(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "rater_id,student_id,task_id,label,epoch")?;
        for ((rater, item), label) in &self.scores {
            writeln!(
                w,
                "{},{},{},{},{}",
                rater.rater_id, item.student_id, item.task_id, label, rater.epoch
            )?;
        }
        Ok(())
    }

    pub fn write_responses_path(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| io_err(path, e))?;
        self.write_responses(file).map_err(|e| io_err(path, e))
    }

    pub fn write_scores_path(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| io_err(path, e))?;
        self.write_scores(file).map_err(|e| io_err(path, e))
    }

    /// Split items four ways with agreement-aware test selection.
    ///
    /// Test slots are filled greedily from items in descending
    /// `agreement_rank` (missing items rank 0), ties broken by seeded shuffle;
    /// the rest are assigned to train/dev/reserve uniformly at random under
    /// the same seed. Deterministic for fixed inputs and seed.
    pub fn split_dataset(
        &self,
        proportions: &SplitProportions,
        agreement_rank: &BTreeMap<ItemId, u32>,
        seed: u64,
    ) -> Result<SplitAssignment, CorpusError> {
        proportions.validate()?;
        let items: Vec<&ItemId> = self.responses.keys().collect();
        let sizes = proportions.apportion(items.len());

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shuffled = items;
        shuffled.shuffle(&mut rng);
        // Stable sort keeps the shuffled order within equal ranks.
        shuffled
            .sort_by_key(|item| std::cmp::Reverse(agreement_rank.get(*item).copied().unwrap_or(0)));

        let mut assignment = BTreeMap::new();
        let (test_items, rest) = shuffled.split_at(sizes[Partition::Test as usize]);
        for item in test_items {
            assignment.insert((*item).clone(), Partition::Test);
        }
        let mut rest: Vec<&ItemId> = rest.to_vec();
        rest.shuffle(&mut rng);
        let mut cursor = rest.into_iter();
        for partition in [Partition::Train, Partition::Dev, Partition::Reserve] {
            for _ in 0..sizes[partition as usize] {
                let item = cursor.next().expect("apportionment covers all items");
                assignment.insert(item.clone(), partition);
            }
        }
        debug_assert!(cursor.next().is_none());
        Ok(SplitAssignment { assignment, seed })
    }
}

/// Where per-item gold labels come from: one designated rater's labels, or
/// a consensus over every available rater.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source", content = "rater")]
pub enum LabelSource {
    Rater(RaterKey),
    Consensus,
}

impl Default for LabelSource {
    fn default() -> Self {
        LabelSource::Consensus
    }
}

impl LabelSource {
    /// Resolve to one label per item. Consensus takes the majority label over
    /// however many raters scored the item; ties go to the lower label.
    pub fn resolve(&self, corpus: &Corpus) -> BTreeMap<ItemId, Label> {
        match self {
            LabelSource::Rater(rater) => corpus.labels_of(rater),
            LabelSource::Consensus => {
                let mut votes: BTreeMap<ItemId, [u64; LABEL_SCALE]> = BTreeMap::new();
                for record in corpus.scores() {
                    votes.entry(record.item()).or_insert([0; LABEL_SCALE])[record.label.index()] +=
                        1;
                }
                votes
                    .into_iter()
                    .map(|(item, counts)| {
                        let mut best = 0usize;
                        for (label, count) in counts.iter().enumerate().skip(1) {
                            if *count > counts[best] {
                                best = label;
                            }
                        }
                        (item, Label::new(best as i64).expect("label in scale"))
                    })
                    .collect()
            }
        }
    }
}

/// The four split partitions, in apportionment order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train = 0,
    Dev = 1,
    Test = 2,
    Reserve = 3,
}

impl Partition {
    pub const ALL: [Partition; 4] = [
        Partition::Train,
        Partition::Dev,
        Partition::Test,
        Partition::Reserve,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Dev => "dev",
            Partition::Test => "test",
            Partition::Reserve => "reserve",
        }
    }

    pub fn from_name(name: &str) -> Result<Self, CorpusError> {
        match name {
            "train" => Ok(Partition::Train),
            "dev" => Ok(Partition::Dev),
            "test" => Ok(Partition::Test),
            "reserve" => Ok(Partition::Reserve),
            other => Err(CorpusError::UnknownPartition(other.to_string())),
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Train/dev/test/reserve fractions, summing to 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitProportions(pub [f64; 4]);

impl Default for SplitProportions {
    fn default() -> Self {
        Self([0.72, 0.09, 0.09, 0.10])
    }
}

impl SplitProportions {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let sum: f64 = self.0.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(CorpusError::BadProportions { sum });
        }
        Ok(())
    }

    /// Integer partition sizes by largest remainder, so each size is within
    /// ±1 of its exact quota. Remainder ties go to the earlier partition.
    pub fn apportion(&self, n: usize) -> [usize; 4] {
        let quotas: Vec<f64> = self.0.iter().map(|p| p * n as f64).collect();
        let mut sizes: [usize; 4] = [0; 4];
        let mut fractions: Vec<(usize, f64)> = Vec::with_capacity(4);
        let mut assigned = 0usize;
        for (i, q) in quotas.iter().enumerate() {
            sizes[i] = q.floor() as usize;
            assigned += sizes[i];
            fractions.push((i, q - q.floor()));
        }
        fractions.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        for (i, _) in fractions.iter().take(n - assigned) {
            sizes[*i] += 1;
        }
        sizes
    }
}

/// Item → partition mapping produced by [`Corpus::split_dataset`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitAssignment {
    assignment: BTreeMap<ItemId, Partition>,
    pub seed: u64,
}

impl SplitAssignment {
    /// Empty assignment, for splits built by hand rather than drawn from a
    /// corpus.
    pub fn new(seed: u64) -> Self {
        Self {
            assignment: BTreeMap::new(),
            seed,
        }
    }

    pub fn assign(&mut self, item: ItemId, partition: Partition) {
        self.assignment.insert(item, partition);
    }

    pub fn get(&self, item: &ItemId) -> Option<Partition> {
        self.assignment.get(item).copied()
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    /// Items of one partition, in canonical order.
    pub fn items_in(&self, partition: Partition) -> Vec<&ItemId> {
        self.assignment
            .iter()
            .filter(|(_, p)| **p == partition)
            .map(|(item, _)| item)
            .collect()
    }

    pub fn counts(&self) -> [usize; 4] {
        let mut counts = [0usize; 4];
        for partition in self.assignment.values() {
            counts[*partition as usize] += 1;
        }
        counts
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ItemId, Partition)> {
        self.assignment.iter().map(|(item, p)| (item, *p))
    }

    /// Copy restricted to items satisfying `keep`, e.g. items that actually
    /// have a vector and a gold label before training.
    pub fn filtered(&self, mut keep: impl FnMut(&ItemId) -> bool) -> SplitAssignment {
        SplitAssignment {
            assignment: self
                .assignment
                .iter()
                .filter(|(item, _)| keep(item))
                .map(|(item, p)| (item.clone(), *p))
                .collect(),
            seed: self.seed,
        }
    }

    /// Write as CSV with header `student_id,task_id,partition`.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "student_id,task_id,partition")?;
        for (item, partition) in &self.assignment {
            writeln!(w, "{},{},{partition}", item.student_id, item.task_id)?;
        }
        Ok(())
    }

    pub fn write_csv_path(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| io_err(path, e))?;
        self.write_csv(file).map_err(|e| io_err(path, e))
    }

    /// Read back a split CSV written by [`SplitAssignment::write_csv`].
    pub fn read_csv_path(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| io_err(path, e))?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(file);

        #[derive(Deserialize)]
        struct Row {
            student_id: String,
            task_id: String,
            partition: String,
        }

        let mut assignment = BTreeMap::new();
        for (idx, row) in reader.deserialize::<Row>().enumerate() {
            let row: Row = row.map_err(|e| CorpusError::MalformedLine {
                path: path.display().to_string(),
                line: idx + 2,
                message: e.to_string(),
            })?;
            assignment.insert(
                ItemId::new(row.student_id, row.task_id),
                Partition::from_name(&row.partition)?,
            );
        }
        Ok(Self {
            assignment,
            seed: 0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corpus_from(records: &[(&str, &str, &str)]) -> Corpus {
        let mut corpus = Corpus::new();
        for (student, task, text) in records {
            corpus
                .insert_response(Response {
                    student_id: (*student).to_string(),
                    task_id: (*task).to_string(),
                    text: (*text).to_string(),
                })
                .unwrap();
        }
        corpus
    }

    fn score(corpus: &mut Corpus, rater: &str, epoch: &str, student: &str, task: &str, label: i64) {
        corpus
            .insert_score(ScoreRecord {
                rater_id: rater.to_string(),
                student_id: student.to_string(),
                task_id: task.to_string(),
                label: Label::new(label).unwrap(),
                epoch: epoch.to_string(),
            })
            .unwrap();
    }

    #[test]
    fn load_responses_three_valid_lines() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            file,
            r#"{{"student_id":"s1","task_id":"2a","text":"a answer"}}"#
        )
        .unwrap();
        writeln!(
            file,
            r#"{{"student_id":"s2","task_id":"2a","text":"b answer"}}"#
        )
        .unwrap();
        writeln!(
            file,
            r#"{{"student_id":"s1","task_id":"2b","text":"c answer"}}"#
        )
        .unwrap();
        let corpus = Corpus::load_responses(file.path()).unwrap();
        assert_eq!(corpus.response_count(), 3);
    }

    #[test]
    fn load_responses_duplicate_key_is_error() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, r#"{{"student_id":"s1","task_id":"2a","text":"x"}}"#).unwrap();
        writeln!(file, r#"{{"student_id":"s1","task_id":"2a","text":"y"}}"#).unwrap();
        let err = Corpus::load_responses(file.path()).unwrap_err();
        match err {
            CorpusError::DuplicateResponse {
                student_id,
                task_id,
            } => {
                assert_eq!(student_id, "s1");
                assert_eq!(task_id, "2a");
            }
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn load_responses_malformed_line_names_line_number() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, r#"{{"student_id":"s1","task_id":"2a","text":"x"}}"#).unwrap();
        writeln!(file, "not json").unwrap();
        let err = Corpus::load_responses(file.path()).unwrap_err();
        assert!(err.to_string().contains(":2:"), "error was: {err}");
    }

    #[test]
    fn load_scores_attaches_and_rejects() {
        let corpus = corpus_from(&[("s1", "2a", "x"), ("s2", "2a", "y")]);

        let mut ok = tempfile::NamedTempFile::new().unwrap();
        writeln!(ok, "rater_id,student_id,task_id,label,epoch").unwrap();
        writeln!(ok, "A,s1,2a,2,current").unwrap();
        writeln!(ok, "A,s2,2a,0,current").unwrap();
        let loaded = corpus.clone().load_scores(ok.path()).unwrap();
        assert_eq!(loaded.score_count(), 2);

        let mut bad_label = tempfile::NamedTempFile::new().unwrap();
        writeln!(bad_label, "rater_id,student_id,task_id,label,epoch").unwrap();
        writeln!(bad_label, "A,s1,2a,3,current").unwrap();
        let err = corpus.clone().load_scores(bad_label.path()).unwrap_err();
        assert!(matches!(err, CorpusError::LabelOutOfRange { value: 3 }));

        let mut orphan = tempfile::NamedTempFile::new().unwrap();
        writeln!(orphan, "rater_id,student_id,task_id,label,epoch").unwrap();
        writeln!(orphan, "A,ghost,2a,1,current").unwrap();
        let err = corpus.load_scores(orphan.path()).unwrap_err();
        match err {
            CorpusError::OrphanScore {
                student_id,
                task_id,
            } => {
                assert_eq!(student_id, "ghost");
                assert_eq!(task_id, "2a");
            }
            other => panic!("expected orphan error, got {other:?}"),
        }
    }

    #[test]
    fn same_rater_two_epochs_both_retained() {
        let mut corpus = corpus_from(&[("s1", "2a", "x")]);
        score(&mut corpus, "A", "2015", "s1", "2a", 1);
        score(&mut corpus, "A", "current", "s1", "2a", 2);
        assert_eq!(corpus.score_count(), 2);
        assert_eq!(
            corpus.label(&RaterKey::new("A", "2015"), &ItemId::new("s1", "2a")),
            Some(Label::new(1).unwrap())
        );
    }

    #[test]
    fn earnest_filter_zero_threshold_is_identity() {
        let mut corpus = corpus_from(&[("s1", "2a", ""), ("s2", "2a", "idk")]);
        score(&mut corpus, "A", "current", "s1", "2a", 0);
        let (filtered, report) = corpus.earnest_filter(0);
        assert_eq!(filtered, corpus);
        assert_eq!(report.responses_removed, 0);
    }

    #[test]
    fn earnest_filter_token_threshold() {
        // Tokenizing by hand: "" -> 0 tokens, "idk" -> 1, the sentence -> >= 2.
        let mut corpus = corpus_from(&[
            ("s1", "2a", ""),
            ("s2", "2a", "idk"),
            ("s3", "2a", "the mean increases because ..."),
        ]);
        score(&mut corpus, "A", "current", "s1", "2a", 0);
        score(&mut corpus, "A", "current", "s3", "2a", 2);
        let (filtered, report) = corpus.earnest_filter(2);
        assert_eq!(filtered.response_count(), 1);
        assert!(filtered.contains_item(&ItemId::new("s3", "2a")));
        assert_eq!(report.responses_removed, 2);
        assert_eq!(report.scores_removed, 1);
    }

    #[test]
    fn earnest_filter_idempotent() {
        let corpus = corpus_from(&[
            ("s1", "2a", ""),
            ("s2", "2a", "one two three"),
            ("s3", "2a", "word"),
        ]);
        let (once, _) = corpus.earnest_filter(2);
        let (twice, report) = once.earnest_filter(2);
        assert_eq!(once, twice);
        assert_eq!(report.responses_removed, 0);
    }

    #[test]
    fn paired_labels_disjoint_raters_empty() {
        let mut corpus = corpus_from(&[("s1", "2a", "x"), ("s2", "2a", "y")]);
        score(&mut corpus, "A", "current", "s1", "2a", 1);
        score(&mut corpus, "B", "current", "s2", "2a", 2);
        let paired = corpus.paired_labels(&RaterKey::current("A"), &RaterKey::current("B"));
        assert!(paired.is_empty());
    }

    #[test]
    fn paired_labels_sorted_overlap() {
        // Four overlapping items inserted out of order come back sorted.
        let mut corpus = corpus_from(&[
            ("s4", "2a", "w"),
            ("s2", "2a", "x"),
            ("s1", "2b", "y"),
            ("s1", "2a", "z"),
            ("s9", "2a", "only-a"),
        ]);
        for (student, task, a, b) in [
            ("s4", "2a", 0, 1),
            ("s2", "2a", 2, 2),
            ("s1", "2b", 1, 0),
            ("s1", "2a", 2, 1),
        ] {
            score(&mut corpus, "A", "current", student, task, a);
            score(&mut corpus, "C", "current", student, task, b);
        }
        score(&mut corpus, "A", "current", "s9", "2a", 0);

        let paired = corpus.paired_labels(&RaterKey::current("A"), &RaterKey::current("C"));
        let expected_items = vec![
            ItemId::new("s1", "2a"),
            ItemId::new("s1", "2b"),
            ItemId::new("s2", "2a"),
            ItemId::new("s4", "2a"),
        ];
        assert_eq!(paired.items, expected_items);
        assert_eq!(paired.labels_a, vec![2, 1, 2, 0]);
        assert_eq!(paired.labels_b, vec![1, 0, 2, 1]);

        let swapped = corpus.paired_labels(&RaterKey::current("C"), &RaterKey::current("A"));
        assert_eq!(swapped.items, paired.items);
        assert_eq!(swapped.labels_a, paired.labels_b);
        assert_eq!(swapped.labels_b, paired.labels_a);
    }

    #[test]
    fn rating_table_counts_and_complete_case() {
        let mut corpus = corpus_from(&[("s1", "2a", "x"), ("s2", "2a", "y"), ("s3", "2a", "z")]);
        // s1: all three rate 2 -> row (0,0,3).
        for rater in ["A", "B", "C"] {
            score(&mut corpus, rater, "current", "s1", "2a", 2);
        }
        // s2: only two raters -> dropped by complete-case filtering.
        score(&mut corpus, "A", "current", "s2", "2a", 1);
        score(&mut corpus, "B", "current", "s2", "2a", 1);
        // s3: labels 0,1,2 -> row (1,1,1).
        score(&mut corpus, "A", "current", "s3", "2a", 0);
        score(&mut corpus, "B", "current", "s3", "2a", 1);
        score(&mut corpus, "C", "current", "s3", "2a", 2);

        let raters = [
            RaterKey::current("A"),
            RaterKey::current("B"),
            RaterKey::current("C"),
        ];
        let table = corpus.rating_table(&raters, 3).unwrap();
        assert_eq!(table.rows, vec![vec![0, 0, 3], vec![1, 1, 1]]);
        assert_eq!(table.dropped_items, 1);
        for row in &table.rows {
            assert_eq!(row.iter().sum::<u64>(), 3);
        }
    }

    #[test]
    fn rating_table_four_way_split_counts() {
        let mut corpus = corpus_from(&[("s1", "2a", "x")]);
        for (rater, label) in [("A", 0), ("B", 1), ("C", 1), ("D", 2)] {
            score(&mut corpus, rater, "current", "s1", "2a", label);
        }
        let raters: Vec<RaterKey> = ["A", "B", "C", "D"]
            .iter()
            .map(|r| RaterKey::current(*r))
            .collect();
        let table = corpus.rating_table(&raters, 3).unwrap();
        assert_eq!(table.rows, vec![vec![1, 2, 1]]);
    }

    #[test]
    fn rating_table_requires_two_raters() {
        let corpus = corpus_from(&[("s1", "2a", "x")]);
        let err = corpus
            .rating_table(&[RaterKey::current("A")], 3)
            .unwrap_err();
        assert!(matches!(err, CorpusError::NotEnoughRaters { got: 1 }));
    }

    #[test]
    fn consensus_majority_with_low_tie_break() {
        let mut corpus = corpus_from(&[("s1", "t", "x"), ("s2", "t", "y")]);
        // s1: labels 2,2,1 -> majority 2. s2: 2-2 split between 0 and 2 -> 0.
        for (rater, label) in [("A", 2), ("B", 2), ("C", 1)] {
            score(&mut corpus, rater, "current", "s1", "t", label);
        }
        for (rater, label) in [("A", 0), ("B", 0), ("C", 2), ("D", 2)] {
            score(&mut corpus, rater, "current", "s2", "t", label);
        }
        let gold = LabelSource::Consensus.resolve(&corpus);
        assert_eq!(gold[&ItemId::new("s1", "t")].value(), 2);
        assert_eq!(gold[&ItemId::new("s2", "t")].value(), 0);

        let only_a = LabelSource::Rater(RaterKey::current("A")).resolve(&corpus);
        assert_eq!(only_a[&ItemId::new("s2", "t")].value(), 0);
        assert_eq!(only_a.len(), 2);
    }

    #[test]
    fn split_exact_proportions_on_100() {
        let records: Vec<(String, String)> = (0..100)
            .map(|i| (format!("s{i:03}"), "t".to_string()))
            .collect();
        let mut corpus = Corpus::new();
        for (s, t) in &records {
            corpus
                .insert_response(Response {
                    student_id: s.clone(),
                    task_id: t.clone(),
                    text: "text".to_string(),
                })
                .unwrap();
        }
        let split = corpus
            .split_dataset(&SplitProportions::default(), &BTreeMap::new(), 7)
            .unwrap();
        assert_eq!(split.counts(), [72, 9, 9, 10]);
    }

    #[test]
    fn split_greedy_unanimity_first() {
        // Items 1-3 have rank 4, the rest 0; test fraction 0.2 over 10 items
        // picks two of items 1-3.
        let mut corpus = Corpus::new();
        for i in 0..10 {
            corpus
                .insert_response(Response {
                    student_id: format!("s{i}"),
                    task_id: "t".to_string(),
                    text: "text".to_string(),
                })
                .unwrap();
        }
        let mut rank = BTreeMap::new();
        for i in 1..=3 {
            rank.insert(ItemId::new(format!("s{i}"), "t"), 4u32);
        }
        let proportions = SplitProportions([0.5, 0.2, 0.2, 0.1]);
        for seed in 0..20 {
            let split = corpus.split_dataset(&proportions, &rank, seed).unwrap();
            let test_items = split.items_in(Partition::Test);
            assert_eq!(test_items.len(), 2);
            for item in test_items {
                assert_eq!(rank.get(item), Some(&4));
            }
        }
    }

    #[test]
    fn split_deterministic_under_seed() {
        let mut corpus = Corpus::new();
        for i in 0..57 {
            corpus
                .insert_response(Response {
                    student_id: format!("s{i:02}"),
                    task_id: "t".to_string(),
                    text: "text".to_string(),
                })
                .unwrap();
        }
        let a = corpus
            .split_dataset(&SplitProportions::default(), &BTreeMap::new(), 99)
            .unwrap();
        let b = corpus
            .split_dataset(&SplitProportions::default(), &BTreeMap::new(), 99)
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_rejects_bad_proportions() {
        let corpus = corpus_from(&[("s1", "t", "x")]);
        let err = corpus
            .split_dataset(&SplitProportions([0.7, 0.1, 0.1, 0.2]), &BTreeMap::new(), 0)
            .unwrap_err();
        assert!(matches!(err, CorpusError::BadProportions { .. }));
    }

    #[test]
    fn canonical_round_trip_is_byte_identical() {
        let mut corpus = corpus_from(&[("s2", "2a", "second"), ("s1", "2b", "first")]);
        score(&mut corpus, "B", "current", "s2", "2a", 1);
        score(&mut corpus, "A", "2015", "s1", "2b", 2);

        let mut responses = Vec::new();
        corpus.write_responses(&mut responses).unwrap();
        let mut scores = Vec::new();
        corpus.write_scores(&mut scores).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let rp = dir.path().join("responses.jsonl");
        let sp = dir.path().join("scores.csv");
        std::fs::write(&rp, &responses).unwrap();
        std::fs::write(&sp, &scores).unwrap();

        let reloaded = Corpus::load_responses(&rp)
            .unwrap()
            .load_scores(&sp)
            .unwrap();
        assert_eq!(reloaded, corpus);

        let mut responses2 = Vec::new();
        reloaded.write_responses(&mut responses2).unwrap();
        let mut scores2 = Vec::new();
        reloaded.write_scores(&mut scores2).unwrap();
        assert_eq!(responses, responses2);
        assert_eq!(scores, scores2);
    }

    #[test]
    fn split_csv_round_trip() {
        let corpus = corpus_from(&[
            ("s1", "t", "x"),
            ("s2", "t", "y"),
            ("s3", "t", "z"),
            ("s4", "t", "w"),
        ]);
        let split = corpus
            .split_dataset(
                &SplitProportions([0.5, 0.25, 0.25, 0.0]),
                &BTreeMap::new(),
                3,
            )
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("split.csv");
        split.write_csv_path(&path).unwrap();
        let back = SplitAssignment::read_csv_path(&path).unwrap();
        for (item, partition) in split.iter() {
            assert_eq!(back.get(item), Some(partition));
        }
    }

    proptest! {
        #[test]
        fn prop_rating_table_rows_sum_to_rater_count(
            labels in proptest::collection::vec((0usize..4, 0i64..3), 1..40)
        ) {
            // Items scored by a variable subset of 4 raters; complete rows
            // must always sum to the full rater count.
            let mut corpus = Corpus::new();
            let raters = ["A", "B", "C", "D"];
            for (i, _) in labels.iter().enumerate() {
                corpus.insert_response(Response {
                    student_id: format!("s{i:02}"),
                    task_id: "t".to_string(),
                    text: "x".to_string(),
                }).unwrap();
            }
            for (i, (subset, label)) in labels.iter().enumerate() {
                // Rater j scores item i when j <= subset.
                for (j, rater) in raters.iter().enumerate() {
                    if j <= *subset {
                        score(&mut corpus, rater, "current", &format!("s{i:02}"), "t", *label);
                    }
                }
            }
            let keys: Vec<RaterKey> = raters.iter().map(|r| RaterKey::current(*r)).collect();
            let table = corpus.rating_table(&keys, 3).unwrap();
            for row in &table.rows {
                prop_assert_eq!(row.iter().sum::<u64>(), 4);
            }
            prop_assert_eq!(table.items.len() + table.dropped_items, labels.len());
        }

        #[test]
        fn prop_split_sizes_within_one_of_quota(n in 1usize..400, seed in 0u64..50) {
            let mut corpus = Corpus::new();
            for i in 0..n {
                corpus.insert_response(Response {
                    student_id: format!("s{i:03}"),
                    task_id: "t".to_string(),
                    text: "x".to_string(),
                }).unwrap();
            }
            let proportions = SplitProportions::default();
            let split = corpus.split_dataset(&proportions, &BTreeMap::new(), seed).unwrap();
            let counts = split.counts();
            prop_assert_eq!(counts.iter().sum::<usize>(), n);
            for (count, p) in counts.iter().zip(proportions.0.iter()) {
                let quota = p * n as f64;
                prop_assert!((*count as f64 - quota).abs() < 1.0 + 1e-9);
            }
        }

        #[test]
        fn prop_split_test_ranks_dominate_excluded(seed in 0u64..30) {
            // With more unanimous items than test slots, every excluded
            // unanimous item ranks no higher than the weakest test item.
            let mut corpus = Corpus::new();
            let n = 40usize;
            for i in 0..n {
                corpus.insert_response(Response {
                    student_id: format!("s{i:02}"),
                    task_id: "t".to_string(),
                    text: "x".to_string(),
                }).unwrap();
            }
            let mut rank = BTreeMap::new();
            for i in 0..20usize {
                let r = if i < 8 { 4 } else if i < 14 { 3 } else { 2 };
                rank.insert(ItemId::new(format!("s{i:02}"), "t"), r as u32);
            }
            let split = corpus.split_dataset(&SplitProportions([0.65, 0.1, 0.25, 0.0]), &rank, seed).unwrap();
            let test_min = split
                .items_in(Partition::Test)
                .iter()
                .map(|item| rank.get(*item).copied().unwrap_or(0))
                .min()
                .unwrap();
            let excluded_max = split
                .iter()
                .filter(|(_, p)| *p != Partition::Test)
                .map(|(item, _)| rank.get(item).copied().unwrap_or(0))
                .max()
                .unwrap();
            prop_assert!(test_min >= excluded_max);
        }
    }
}
